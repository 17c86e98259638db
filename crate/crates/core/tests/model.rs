use std::collections::HashSet;

use perceiver::attention::{AttentionBlockConfig, SelfAttention};
use perceiver::gradcheck::{check, DEFAULT_STEP};
use perceiver::init::rng_from_seed;
use perceiver::model::{shared_name, Arrangement, LearnedPositionConfig, ModalityConfig};
use perceiver::params::ParamStore;
use perceiver::{count_flops, count_params, ModalitySpan, Perceiver, PerceiverConfig, Result, Tape, Tensor64};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

fn tiny() -> PerceiverConfig {
    PerceiverConfig {
        num_cross_attends: 2,
        self_attends_per_block: 1,
        blocks_per_cross: 1,
        latent_n: 4,
        latent_d: 8,
        num_classes: 3,
        cross_heads: 1,
        latent_heads: 2,
        input_channels: 6,
        latent_init_scale: 0.5,
        ..Default::default()
    }
}

fn random_input(m: usize, c: usize, seed: u64) -> Tensor64 {
    let mut rng = rng_from_seed(seed);
    Tensor64::from_fn([m, c], |_| rng.random_range(-1.0..1.0))
}

/// Mean cross-entropy over a fixed two-example batch, with the model's
/// tables replaced by `tables`.
fn batch_loss(model: &Perceiver<f64>, tables: &[Tensor64], inputs: &[(Tensor64, usize)]) -> Result<f64> {
    let mut m = model.clone();
    m.params_mut().tables_mut().clone_from_slice(tables);
    let mut tape = Tape::new();
    let p = m.params().bind(&mut tape, false)?;
    let mut total = 0.0;
    for (x, y) in inputs {
        let out = m.forward(&mut tape, &p, x, &[], false)?;
        let l = tape.cross_entropy(out.logits, *y)?;
        total += tape.value(l).item();
    }
    Ok(total / inputs.len() as f64)
}

fn batch_gradients(model: &Perceiver<f64>, inputs: &[(Tensor64, usize)]) -> Vec<Tensor64> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, true).unwrap();
    let mut total = None;
    for (x, y) in inputs {
        let out = model.forward(&mut tape, &p, x, &[], false).unwrap();
        let l = tape.cross_entropy(out.logits, *y).unwrap();
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l).unwrap(),
        });
    }
    let mean = tape.scale(total.unwrap(), 1.0 / inputs.len() as f64).unwrap();
    tape.backward(mean).unwrap();
    model.params().gradients(&tape, &p)
}

fn tiny_batch(c: usize) -> Vec<(Tensor64, usize)> {
    vec![(random_input(12, c, 1), 0), (random_input(12, c, 2), 2)]
}

/// Perturbs every table so that zero-initialized projections and unit
/// layer-norm gains do not hide gradient paths.
fn jitter(model: &mut Perceiver<f64>, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for t in model.params_mut().tables_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

#[test]
fn end_to_end_gradcheck_covers_shared_tables() {
    let cfg = tiny();
    let mut model = Perceiver::<f64>::build(cfg.clone(), 5).unwrap();
    jitter(&mut model, 6);
    let batch = tiny_batch(cfg.input_channels);
    let analytic = batch_gradients(&model, &batch);
    let tables = model.params().tables().to_vec();

    // Every table at least once, then random coordinates up to 250.
    let mut rng = rng_from_seed(7);
    let mut coords: Vec<(usize, usize)> =
        tables.iter().enumerate().map(|(t, x)| (t, rng.random_range(0..x.numel()))).collect();
    while coords.len() < 250 {
        let t = rng.random_range(0..tables.len());
        coords.push((t, rng.random_range(0..tables[t].numel())));
    }
    let report = check(|xs| batch_loss(&model, xs, &batch), &tables, &analytic, &coords, DEFAULT_STEP).unwrap();
    assert!(report.len() >= 200);
    let names = model.params().names();
    let shared = coords.iter().filter(|(t, _)| names[*t].starts_with("tower.0")).count();
    assert!(shared > 0, "no shared tower table sampled");
    let worst = report.worst().unwrap();
    assert!(
        report.max_rel_error() < 1e-5,
        "worst {} in `{}`[{}]: analytic {} numeric {}",
        worst.rel_error,
        names[worst.table],
        worst.index,
        worst.analytic,
        worst.numeric
    );
}

#[test]
fn shared_gradients_sum_unrolled_copies() {
    let cfg = PerceiverConfig { num_cross_attends: 3, blocks_per_cross: 2, ..tiny() };
    let mut shared = Perceiver::<f64>::build(cfg.clone(), 8).unwrap();
    jitter(&mut shared, 9);
    let unrolled = shared.unshare().unwrap();
    assert!(unrolled.num_params() > shared.num_params());
    let batch = tiny_batch(cfg.input_channels);

    let a = shared.params().tables().to_vec();
    let b = unrolled.params().tables().to_vec();
    assert_eq!(batch_loss(&shared, &a, &batch).unwrap(), batch_loss(&unrolled, &b, &batch).unwrap());

    let gs = batch_gradients(&shared, &batch);
    let gu = batch_gradients(&unrolled, &batch);
    let mut summed: Vec<Tensor64> = gs.iter().map(|g| Tensor64::zeros(g.shape().to_vec())).collect();
    for (name, g) in unrolled.params().names().iter().zip(&gu) {
        let id = shared.params().find(&shared_name(&cfg, name)).unwrap();
        let acc = &mut summed[id.index()];
        acc.data_mut().iter_mut().zip(g.data()).for_each(|(s, v)| *s += v);
    }
    let mut aliased = 0;
    for ((name, g), s) in shared.params().names().iter().zip(&gs).zip(&summed) {
        if name.starts_with("cross.1") || name.starts_with("tower.0") {
            aliased += 1;
        }
        for (x, y) in g.data().iter().zip(s.data()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{name}: {x} vs {y}");
        }
    }
    assert!(aliased > 0);
}

#[test]
fn one_small_step_lowers_the_loss() {
    use perceiver::{lamb_step, LambConfig, LambState};
    let cfg = tiny();
    let mut model = Perceiver::<f64>::build(cfg.clone(), 12).unwrap();
    let batch = tiny_batch(cfg.input_channels);
    let before = batch_loss(&model, model.params().tables(), &batch).unwrap();
    let grads = batch_gradients(&model, &batch);
    let mut state = LambState::new(LambConfig::default(), model.params().tables()).unwrap();
    lamb_step(model.params_mut().tables_mut(), &grads, &mut state, 1e-4).unwrap();
    let after = batch_loss(&model, model.params().tables(), &batch).unwrap();
    assert!(after < before, "{before} -> {after}");
}

fn random_config(rng: &mut impl Rng) -> (PerceiverConfig, usize, Vec<ModalitySpan>) {
    let m = rng.random_range(1..=64);
    let latent_n = rng.random_range(1..=8);
    let heads = *[1usize, 2, 4].choose(rng).unwrap();
    let latent_d = heads * rng.random_range(1..=4);
    let mut cfg = PerceiverConfig {
        num_cross_attends: rng.random_range(1..=3),
        self_attends_per_block: rng.random_range(0..=2),
        blocks_per_cross: rng.random_range(0..=2),
        latent_n,
        latent_d,
        share_cross_after_first: rng.random_bool(0.5),
        share_latent_towers: rng.random_bool(0.5),
        arrangement: if rng.random_bool(0.5) { Arrangement::Interleaved } else { Arrangement::AtStart },
        num_classes: rng.random_range(1..=5),
        cross_heads: 1,
        latent_heads: heads,
        input_channels: rng.random_range(1..=9),
        dense_widening: *[1.0, 2.0, 0.5].choose(rng).unwrap(),
        ..Default::default()
    };
    let mut spans = Vec::new();
    if rng.random_bool(0.3) && m >= 2 {
        let split = rng.random_range(1..m);
        let (ca, cb) = (rng.random_range(1..=5), rng.random_range(1..=5));
        cfg.modalities = vec![
            ModalityConfig { name: "a".into(), feature_channels: ca, min_embed: 1 },
            ModalityConfig { name: "b".into(), feature_channels: cb, min_embed: 2 },
        ];
        cfg.input_channels = (ca + 1).max(cb + 2);
        spans = vec![
            ModalitySpan { modality: "a".into(), rows: 0..split, feature_channels: ca },
            ModalitySpan { modality: "b".into(), rows: split..m, feature_channels: cb },
        ];
    } else if rng.random_bool(0.3) {
        cfg.learned_position =
            Some(LearnedPositionConfig { rows: m, channels: rng.random_range(1..=4), init_scale: 1.0 });
    }
    (cfg, m, spans)
}

#[test]
fn analytic_counts_match_instrumented_execution() {
    let mut rng = rng_from_seed(2024);
    for trial in 0..40 {
        let (cfg, m, spans) = random_config(&mut rng);
        let model = Perceiver::<f64>::build(cfg.clone(), trial).unwrap();
        let x = random_input(m, cfg.input_channels, trial);
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false).unwrap();
        model.forward(&mut tape, &p, &x, &spans, false).unwrap();
        let report = count_flops(&cfg, m).unwrap_or_else(|e| panic!("trial {trial}: {e} {cfg:?}"));
        assert_eq!(report.flops, tape.flops(), "trial {trial}: {cfg:?} M={m}");
        assert_eq!(report.params, model.num_params() as u64, "trial {trial}");
        assert_eq!(count_params(&cfg).unwrap().params, report.params);
    }
}

#[test]
fn sharing_charges_tables_once() {
    let cfg = PerceiverConfig { num_cross_attends: 4, blocks_per_cross: 2, ..tiny() };
    let r = count_params(&cfg).unwrap();
    let fresh: HashSet<&str> = r.rows.iter().filter(|row| row.params > 0).map(|row| row.name.as_str()).collect();
    assert!(fresh.contains("cross_attend.0") && fresh.contains("cross_attend.1"));
    assert!(!fresh.contains("cross_attend.2"));
    assert!(fresh.contains("latent_tower.0") && !fresh.contains("latent_tower.1"));
    let unshared = count_params(&cfg.unshared()).unwrap();
    assert!(unshared.params > r.params);
}

fn permutation(m: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..m).collect();
    p.shuffle(&mut rng_from_seed(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logits_ignore_row_order(m in 1usize..40, seed in 0u64..1000) {
        let model = Perceiver::<f64>::build(tiny(), seed).unwrap();
        let x = random_input(m, 6, seed + 1);
        let y = x.permute_rows(&permutation(m, seed + 2)).unwrap();
        let a = model.logits(&x, &[]).unwrap();
        let b = model.logits(&y, &[]).unwrap();
        let scale = a.data().iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn self_attention_is_equivariant(n in 1usize..10, seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::<f64>::new();
        let block = SelfAttention::new(&mut store, "sa", AttentionBlockConfig::latent(8, 2), 1e-5, &mut rng).unwrap();
        for t in store.tables_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        let x = random_input(n, 8, seed + 3);
        let perm = permutation(n, seed + 4);
        let run = |input: &Tensor64| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false).unwrap();
            let v = tape.constant(input.clone()).unwrap();
            let out = block.forward(&mut tape, &p, v).unwrap();
            tape.value(out).clone()
        };
        let permuted_out = run(&x.permute_rows(&perm).unwrap());
        let out_permuted = run(&x).permute_rows(&perm).unwrap();
        for (p, q) in permuted_out.data().iter().zip(out_permuted.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
