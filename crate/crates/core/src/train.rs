//! Minibatch training and evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::{checkpoint_name, save_checkpoint};
use crate::error::{Error, Result};
use crate::ingestion::{Dataset, Example, ModalitySpan};
use crate::init::rng_from_seed;
use crate::model::{loss, video_dropout, LossKind, Perceiver, Target};
use crate::optim::{lamb_step, lr_at, LambConfig, LambState, Schedule};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Name of the stream targeted by video dropout.
pub const VIDEO: &str = "video";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds batch order and dropout draws.
    pub seed: u64,
    pub schedule: Schedule,
    pub lamb: LambConfig,
    pub loss: LossKind,
    /// Probability of dropping the video stream of a training example.
    pub video_dropout: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Where `metrics.csv` and checkpoints go. Nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 100,
            batch_size: 16,
            seed: 0,
            schedule: Schedule::constant(1e-3),
            lamb: LambConfig::default(),
            loss: LossKind::Softmax,
            video_dropout: 0.0,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub batch_accuracy: f64,
}

pub const METRICS_HEADER: &str = "step,epoch,lr,loss,batch_accuracy";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:e},{:.9},{:.6}", self.step, self.epoch, self.lr, self.loss, self.batch_accuracy)
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss, gradients and correct-prediction count for one batch.
pub fn batch_gradients<T: Scalar, R: Rng + ?Sized>(
    model: &Perceiver<T>,
    batch: &[&Example<T>],
    spans: &[ModalitySpan],
    kind: LossKind,
    dropout: f64,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor<T>>, usize)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, true)?;
    let mut total = None;
    let mut correct = 0;
    for e in batch {
        let mut input = e.input.clone();
        if dropout > 0.0 {
            video_dropout(&mut input, spans, VIDEO, dropout, true, rng)?;
        }
        let out = model.forward(&mut tape, &p, &input, spans, false)?;
        correct += usize::from(argmax(tape.value(out.logits).data()) == e.label);
        let l = loss(&mut tape, out.logits, kind, &Target::Class(e.label))?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let mean = tape.scale(total.expect("non-empty batch"), T::of(1.0 / batch.len() as f64))?;
    let value = tape.value(mean).item().as_f64();
    tape.backward(mean)?;
    Ok((value, model.params().gradients(&tape, &p), correct))
}

/// Trains in place and returns one metrics row per step. Per-step rows are
/// also streamed to `metrics.csv` when an output directory is set.
///
/// A non-finite loss or gradient stops training with [`Error::Diverged`];
/// checkpoints already written are kept.
pub fn train<T: Scalar>(model: &mut Perceiver<T>, data: &Dataset<T>, opts: &TrainOptions) -> Result<Vec<MetricsRow>> {
    opts.schedule.validate()?;
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if data.train.is_empty() && opts.steps > 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    if opts.video_dropout > 0.0 && !data.spans.iter().any(|s| s.modality == VIDEO) {
        return Err(Error::UnknownModality(VIDEO.into()));
    }
    let mut csv = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
            writeln!(w, "{METRICS_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut state = LambState::new(opts.lamb, model.params().tables())?;
    let mut rng = rng_from_seed(opts.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut rows = Vec::with_capacity(opts.steps as usize);
    for step in 0..opts.steps {
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size {
            if order.is_empty() {
                order = (0..data.train.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(&data.train[order.pop().expect("refilled")]);
        }
        let diverged = |reason: String| Error::Diverged { step, reason };
        let (l, grads, correct) =
            match batch_gradients(model, &batch, &data.spans, opts.loss, opts.video_dropout, &mut rng) {
                Ok(r) => r,
                Err(Error::NonFinite { op }) => return Err(diverged(format!("non-finite value in {op}"))),
                Err(e) => return Err(e),
            };
        if !l.is_finite() {
            return Err(diverged(format!("loss is {l}")));
        }
        let lr = lr_at(&opts.schedule, step);
        match lamb_step(model.params_mut().tables_mut(), &grads, &mut state, lr) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient { table, index }) => {
                let name =
                    table.parse::<usize>().ok().and_then(|i| model.params().names().get(i).cloned()).unwrap_or(table);
                return Err(diverged(format!("non-finite gradient in `{name}` at {index}")));
            }
            Err(e) => return Err(e),
        }
        if let Some(bad) = model.params().tables().iter().position(|t| !t.is_finite()) {
            return Err(diverged(format!("parameter `{}` is no longer finite", model.params().names()[bad])));
        }
        let row = MetricsRow {
            step,
            epoch: opts.schedule.epoch(step),
            lr,
            loss: l,
            batch_accuracy: correct as f64 / batch.len() as f64,
        };
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", row.csv())?;
        }
        rows.push(row);
        let done = step + 1;
        if let Some(dir) = &opts.out_dir {
            if (opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0) || done == opts.steps {
                if let Some(w) = csv.as_mut() {
                    w.flush()?;
                }
                save_checkpoint(&dir.join(checkpoint_name(done)), model, done)?;
            }
        }
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    Ok(rows)
}

/// Test-set accuracy. When `drop` names a modality its feature channels are
/// zeroed on every example.
pub fn evaluate<T: Scalar>(
    model: &Perceiver<T>,
    examples: &[Example<T>],
    spans: &[ModalitySpan],
    drop: Option<&str>,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rng_from_seed(0);
    let mut correct = 0;
    for e in examples {
        let mut input = e.input.clone();
        if let Some(m) = drop {
            video_dropout(&mut input, spans, m, 1.0, true, &mut rng)?;
        }
        let logits = model.logits(&input, spans)?;
        correct += usize::from(argmax(logits.data()) == e.label);
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Logits for every example, in order.
pub fn predict<T: Scalar>(
    model: &Perceiver<T>,
    examples: &[Example<T>],
    spans: &[ModalitySpan],
) -> Result<Vec<Tensor<T>>> {
    examples.iter().map(|e| model.logits(&e.input, spans)).collect()
}
