//! The full Perceiver: a learned latent array that repeatedly cross-attends
//! to the byte array, interleaved with towers of latent self-attention,
//! followed by a mean-pool and linear classifier.
//!
//! Weight sharing is done by aliasing. Shared layers hold the same
//! [`ParamId`], which is bound to the tape once, so the gradient of a shared
//! table is the sum of the gradients of each use.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlockConfig, AttentionMaps, CrossAttention, SelfAttention};
use crate::error::{Error, Result};
use crate::ingestion::{ByteArray, ModalitySpan};
use crate::init::{rng_from_seed, truncated_normal};
use crate::params::{Bound, Linear, ParamId, ParamStore};
use crate::positional::modality_embed_sizes;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    /// Each cross-attend is followed by its own latent towers.
    #[default]
    Interleaved,
    /// All cross-attends first, then all latent towers.
    AtStart,
}

/// A modality fused at the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityConfig {
    pub name: String,
    /// Content plus position channels before embedding padding.
    pub feature_channels: usize,
    /// Smallest embedding this modality may receive.
    pub min_embed: usize,
}

/// Trainable `M×E` position table concatenated to every input row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedPositionConfig {
    pub rows: usize,
    pub channels: usize,
    pub init_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceiverConfig {
    pub num_cross_attends: usize,
    pub self_attends_per_block: usize,
    /// Latent towers following each cross-attend.
    pub blocks_per_cross: usize,
    pub latent_n: usize,
    pub latent_d: usize,
    pub share_cross_after_first: bool,
    pub share_latent_towers: bool,
    pub arrangement: Arrangement,
    pub num_classes: usize,
    pub cross_heads: usize,
    pub latent_heads: usize,
    /// Channels of the byte array handed to `forward`.
    pub input_channels: usize,
    pub dense_widening: f64,
    pub latent_init_scale: f64,
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub modalities: Vec<ModalityConfig>,
    #[serde(default)]
    pub learned_position: Option<LearnedPositionConfig>,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        PerceiverConfig {
            num_cross_attends: 1,
            self_attends_per_block: 1,
            blocks_per_cross: 1,
            latent_n: 8,
            latent_d: 16,
            share_cross_after_first: true,
            share_latent_towers: true,
            arrangement: Arrangement::Interleaved,
            num_classes: 2,
            cross_heads: 1,
            latent_heads: 1,
            input_channels: 4,
            dense_widening: 1.0,
            latent_init_scale: 0.02,
            layer_norm_eps: 1e-5,
            modalities: Vec::new(),
            learned_position: None,
        }
    }
}

impl PerceiverConfig {
    /// The ImageNet model: 8 interleaved cross-attends, 6 self-attends per
    /// tower, 512×1024 latent, 261 input channels, 1000 classes.
    pub fn imagenet() -> Self {
        PerceiverConfig {
            num_cross_attends: 8,
            self_attends_per_block: 6,
            blocks_per_cross: 1,
            latent_n: 512,
            latent_d: 1024,
            share_cross_after_first: true,
            share_latent_towers: true,
            arrangement: Arrangement::Interleaved,
            num_classes: 1000,
            cross_heads: 1,
            latent_heads: 8,
            input_channels: 261,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_cross_attends", self.num_cross_attends),
            ("latent_n", self.latent_n),
            ("latent_d", self.latent_d),
            ("num_classes", self.num_classes),
            ("cross_heads", self.cross_heads),
            ("latent_heads", self.latent_heads),
            ("input_channels", self.input_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.latent_init_scale > 0.0) {
            return Err(Error::Config("latent_init_scale must be positive".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        self.cross_block_config().validate()?;
        if self.self_attends_per_block > 0 {
            self.latent_block_config().validate()?;
        }
        if !self.modalities.is_empty() {
            let channels: Vec<usize> = self.modalities.iter().map(|m| m.feature_channels).collect();
            let mins: Vec<usize> = self.modalities.iter().map(|m| m.min_embed).collect();
            let (target, _) = modality_embed_sizes(&channels, &mins)?;
            if target != self.input_channels {
                return Err(Error::Config(format!(
                    "modalities pad to {target} channels but input_channels is {}",
                    self.input_channels
                )));
            }
        }
        if let Some(lp) = &self.learned_position {
            if lp.rows == 0 || lp.channels == 0 || !(lp.init_scale > 0.0) {
                return Err(Error::Config("learned position table must be non-empty with positive scale".into()));
            }
        }
        Ok(())
    }

    /// Width of rows seen by cross-attention.
    pub fn cross_input_channels(&self) -> usize {
        self.input_channels + self.learned_position.map_or(0, |lp| lp.channels)
    }

    pub fn cross_block_config(&self) -> AttentionBlockConfig {
        AttentionBlockConfig::cross(self.latent_d, self.cross_input_channels(), self.cross_heads)
            .with_widening(self.dense_widening)
    }

    pub fn latent_block_config(&self) -> AttentionBlockConfig {
        AttentionBlockConfig::latent(self.latent_d, self.latent_heads).with_widening(self.dense_widening)
    }

    pub fn num_towers(&self) -> usize {
        self.num_cross_attends * self.blocks_per_cross
    }

    /// Distinct cross-attention parameter sets.
    pub fn cross_param_sets(&self) -> usize {
        if self.share_cross_after_first {
            self.num_cross_attends.min(2)
        } else {
            self.num_cross_attends
        }
    }

    /// Parameter set used by cross-attend `i`. The first cross-attend is
    /// never shared.
    pub fn cross_set_for(&self, i: usize) -> usize {
        if self.share_cross_after_first {
            i.min(1)
        } else {
            i
        }
    }

    /// Distinct latent tower parameter sets.
    pub fn tower_param_sets(&self) -> usize {
        if self.share_latent_towers {
            self.num_towers().min(1)
        } else {
            self.num_towers()
        }
    }

    pub fn tower_set_for(&self, t: usize) -> usize {
        if self.share_latent_towers {
            0
        } else {
            t
        }
    }

    /// Execution order of the network body.
    pub fn stages(&self) -> Vec<Stage> {
        let n = self.num_cross_attends;
        let bpc = self.blocks_per_cross;
        match self.arrangement {
            Arrangement::Interleaved => (0..n)
                .flat_map(|i| std::iter::once(Stage::Cross(i)).chain((0..bpc).map(move |b| Stage::Tower(i * bpc + b))))
                .collect(),
            Arrangement::AtStart => (0..n).map(Stage::Cross).chain((0..n * bpc).map(Stage::Tower)).collect(),
        }
    }

    /// Same architecture with every cross-attend and tower owning its own
    /// weights.
    pub fn unshared(&self) -> Self {
        PerceiverConfig { share_cross_after_first: false, share_latent_towers: false, ..self.clone() }
    }
}

/// One step of the network body.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Cross(usize),
    Tower(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Single-label softmax cross-entropy.
    #[default]
    Softmax,
    /// Multi-label sigmoid cross-entropy, summed over classes.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    Class(usize),
    MultiLabel(Vec<T>),
}

/// Result of a forward pass.
#[derive(Debug)]
pub struct ForwardOutput<T> {
    pub logits: Var,
    /// Final latent before pooling.
    pub latent: Var,
    maps: Option<Vec<AttentionMaps<T>>>,
}

impl<T: Scalar> ForwardOutput<T> {
    /// Pre-softmax maps of cross-attend `attend` (0-based, execution order).
    pub fn attention_maps(&self, attend: usize) -> Result<&AttentionMaps<T>> {
        let maps = self.maps.as_ref().ok_or(Error::CaptureDisabled)?;
        maps.get(attend)
            .ok_or_else(|| Error::Config(format!("cross-attend {attend} out of range ({} executed)", maps.len())))
    }

    pub fn all_attention_maps(&self) -> Result<&[AttentionMaps<T>]> {
        self.maps.as_deref().ok_or(Error::CaptureDisabled)
    }
}

/// Free-function form of [`ForwardOutput::attention_maps`].
pub fn extract_attention_maps<T: Scalar>(out: &ForwardOutput<T>, attend: usize) -> Result<&AttentionMaps<T>> {
    out.attention_maps(attend)
}

#[derive(Clone, Debug)]
pub struct Perceiver<T> {
    config: PerceiverConfig,
    params: ParamStore<T>,
    latent: ParamId,
    cross: Vec<CrossAttention>,
    towers: Vec<Vec<SelfAttention>>,
    head: Linear,
    modality_embeddings: Vec<Option<ParamId>>,
    position: Option<ParamId>,
}

impl<T: Scalar> Perceiver<T> {
    pub fn build(config: PerceiverConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        Self::build_with_rng(config, &mut rng)
    }

    pub fn build_with_rng<R: Rng + ?Sized>(config: PerceiverConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let eps = config.layer_norm_eps;
        let latent =
            params.add("latent", truncated_normal(rng, [config.latent_n, config.latent_d], config.latent_init_scale)?);
        let position = match config.learned_position {
            Some(lp) => Some(params.add("position", truncated_normal(rng, [lp.rows, lp.channels], lp.init_scale)?)),
            None => None,
        };
        let mut modality_embeddings = Vec::new();
        if !config.modalities.is_empty() {
            let channels: Vec<usize> = config.modalities.iter().map(|m| m.feature_channels).collect();
            let mins: Vec<usize> = config.modalities.iter().map(|m| m.min_embed).collect();
            let (_, sizes) = modality_embed_sizes(&channels, &mins)?;
            for (m, e) in config.modalities.iter().zip(sizes) {
                modality_embeddings.push(if e == 0 {
                    None
                } else {
                    Some(
                        params.add(
                            format!("modality.{}", m.name),
                            truncated_normal(rng, [1, e], config.latent_init_scale)?,
                        ),
                    )
                });
            }
        }
        let cross_cfg = config.cross_block_config();
        let cross = (0..config.cross_param_sets())
            .map(|s| {
                CrossAttention::new(
                    &mut params,
                    &format!("cross.{s}"),
                    cross_cfg,
                    config.cross_input_channels(),
                    eps,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let latent_cfg = config.latent_block_config();
        let towers = (0..config.tower_param_sets())
            .map(|t| {
                (0..config.self_attends_per_block)
                    .map(|b| SelfAttention::new(&mut params, &format!("tower.{t}.block.{b}"), latent_cfg, eps, rng))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::with_std(&mut params, "head", config.latent_d, config.num_classes, 0.02, rng)?;
        Ok(Perceiver { config, params, latent, cross, towers, head, modality_embeddings, position })
    }

    pub fn config(&self) -> &PerceiverConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Number of trainable scalars; shared tables count once.
    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    pub fn cross_blocks(&self) -> &[CrossAttention] {
        &self.cross
    }

    pub fn towers(&self) -> &[Vec<SelfAttention>] {
        &self.towers
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    fn check_spans(&self, bytes: &Tensor<T>, spans: &[ModalitySpan]) -> Result<()> {
        let (m, c) = bytes.expect_matrix("perceiver")?;
        if c != self.config.input_channels {
            return Err(Error::dim(
                "perceiver",
                format!("input has {c} channels, model was built for {}", self.config.input_channels),
            ));
        }
        if let Some(lp) = self.config.learned_position {
            if lp.rows != m {
                return Err(Error::dim(
                    "perceiver",
                    format!("learned position table has {} rows, input has {m}", lp.rows),
                ));
            }
        }
        if self.config.modalities.is_empty() {
            return Ok(());
        }
        crate::ingestion::validate_spans(spans, m, c)?;
        if spans.len() != self.config.modalities.len() {
            return Err(Error::Config(format!(
                "input has {} modality spans, model expects {}",
                spans.len(),
                self.config.modalities.len()
            )));
        }
        for (s, mc) in spans.iter().zip(&self.config.modalities) {
            if s.modality != mc.name {
                return Err(Error::UnknownModality(s.modality.clone()));
            }
        }
        Ok(())
    }

    /// Records a forward pass on `tape` with parameters already bound.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        bytes: &Tensor<T>,
        spans: &[ModalitySpan],
        capture: bool,
    ) -> Result<ForwardOutput<T>> {
        self.check_spans(bytes, spans)?;
        let mut x = tape.constant(bytes.clone())?;
        if !self.config.modalities.is_empty() {
            x = self.add_modality_embeddings(tape, p, x, spans)?;
        }
        if let Some(pos) = self.position {
            x = tape.concat_cols(&[x, p[pos]])?;
        }
        let mut latent = p[self.latent];
        let mut maps = capture.then(Vec::new);
        for stage in self.config.stages() {
            match stage {
                Stage::Cross(i) => {
                    let block = &self.cross[self.config.cross_set_for(i)];
                    let (next, m) = block.forward(tape, p, latent, x, capture)?;
                    latent = next;
                    if let (Some(all), Some(m)) = (maps.as_mut(), m) {
                        all.push(m);
                    }
                }
                Stage::Tower(t) => {
                    for block in &self.towers[self.config.tower_set_for(t)] {
                        latent = block.forward(tape, p, latent)?;
                    }
                }
            }
        }
        let pooled = tape.mean_over_index(latent)?;
        let logits = self.head.forward(tape, p, pooled)?;
        Ok(ForwardOutput { logits, latent, maps })
    }

    /// Adds each modality's embedding into the padding channels of its rows.
    fn add_modality_embeddings(&self, tape: &mut Tape<T>, p: &Bound, x: Var, spans: &[ModalitySpan]) -> Result<Var> {
        let c = self.config.input_channels;
        let mut parts = Vec::with_capacity(spans.len());
        for (span, (mc, emb)) in spans.iter().zip(self.config.modalities.iter().zip(&self.modality_embeddings)) {
            let part = match emb {
                Some(id) => {
                    let lead = tape.constant(Tensor::zeros([1, mc.feature_channels]))?;
                    let row = tape.concat_cols(&[lead, p[*id]])?;
                    tape.repeat_rows(row, span.len())?
                }
                None => tape.constant(Tensor::zeros([span.len(), c]))?,
            };
            parts.push(part);
        }
        let embed = tape.concat_rows(&parts)?;
        tape.add(x, embed)
    }

    /// Logits without recording gradients.
    pub fn logits(&self, bytes: &Tensor<T>, spans: &[ModalitySpan]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let out = self.forward(&mut tape, &p, bytes, spans, false)?;
        Ok(tape.value(out.logits).clone())
    }

    pub fn logits_for(&self, input: &ByteArray<T>) -> Result<Tensor<T>> {
        self.logits(&input.data, &input.spans)
    }

    /// Forward pass with attention-map capture; returns logits and the maps
    /// of every cross-attend in execution order.
    pub fn logits_with_maps(
        &self,
        bytes: &Tensor<T>,
        spans: &[ModalitySpan],
    ) -> Result<(Tensor<T>, Vec<AttentionMaps<T>>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let out = self.forward(&mut tape, &p, bytes, spans, true)?;
        let maps = out.all_attention_maps()?.to_vec();
        Ok((tape.value(out.logits).clone(), maps))
    }

    /// Copy of this model with sharing undone: every cross-attend and tower
    /// gets its own tables, initialized from the table it used to alias.
    pub fn unshare(&self) -> Result<Perceiver<T>> {
        let cfg = self.config.unshared();
        let mut out = Perceiver::build(cfg.clone(), 0)?;
        for id in out.params.ids().collect::<Vec<_>>() {
            let name = out.params.name(id).to_string();
            let source = shared_name(&self.config, &name);
            let src =
                self.params.find(&source).ok_or_else(|| Error::Format(format!("no shared table for `{name}`")))?;
            *out.params.get_mut(id) = self.params.get(src).clone();
        }
        Ok(out)
    }
}

/// Name of the table that unshared table `name` aliases under `shared`.
pub fn shared_name(shared: &PerceiverConfig, name: &str) -> String {
    let mut parts: Vec<String> = name.split('.').map(str::to_string).collect();
    if parts.len() >= 2 {
        if let Ok(i) = parts[1].parse::<usize>() {
            match parts[0].as_str() {
                "cross" => parts[1] = shared.cross_set_for(i).to_string(),
                "tower" => parts[1] = shared.tower_set_for(i).to_string(),
                _ => {}
            }
        }
    }
    parts.join(".")
}

/// Records the training loss for one example.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, kind: LossKind, target: &Target<T>) -> Result<Var> {
    match (kind, target) {
        (LossKind::Softmax, Target::Class(c)) => tape.cross_entropy(logits, *c),
        (LossKind::Sigmoid, Target::MultiLabel(y)) => tape.sigmoid_cross_entropy(logits, y),
        (LossKind::Sigmoid, Target::Class(c)) => {
            let k = tape.value(logits).numel();
            if *c >= k {
                return Err(Error::InvalidTarget(format!("class {c} of {k}")));
            }
            let y: Vec<T> = (0..k).map(|i| if i == *c { T::one() } else { T::zero() }).collect();
            tape.sigmoid_cross_entropy(logits, &y)
        }
        (LossKind::Softmax, Target::MultiLabel(_)) => {
            Err(Error::InvalidTarget("softmax loss needs a single class index".into()))
        }
    }
}

/// With probability `p`, zeroes the feature channels of every row of
/// `modality`. Embedding channels are kept so the modality stays
/// identifiable. Returns whether the stream was dropped. Never drops when
/// `training` is false.
pub fn video_dropout<T: Scalar, R: Rng + ?Sized>(
    bytes: &mut Tensor<T>,
    spans: &[ModalitySpan],
    modality: &str,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1]")));
    }
    let span =
        spans.iter().find(|s| s.modality == modality).ok_or_else(|| Error::UnknownModality(modality.to_string()))?;
    if !training {
        return Ok(false);
    }
    let draw: f64 = rng.random();
    if draw >= p {
        return Ok(false);
    }
    let c = bytes.last_dim();
    let data = bytes.data_mut();
    for r in span.rows.clone() {
        data[r * c..r * c + span.feature_channels].iter_mut().for_each(|v| *v = T::zero());
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PerceiverConfig {
        PerceiverConfig {
            num_cross_attends: 2,
            self_attends_per_block: 1,
            blocks_per_cross: 1,
            latent_n: 4,
            latent_d: 8,
            num_classes: 3,
            latent_heads: 2,
            input_channels: 5,
            ..Default::default()
        }
    }

    #[test]
    fn stage_orders() {
        let mut c = tiny();
        c.num_cross_attends = 2;
        c.blocks_per_cross = 2;
        assert_eq!(
            c.stages(),
            vec![Stage::Cross(0), Stage::Tower(0), Stage::Tower(1), Stage::Cross(1), Stage::Tower(2), Stage::Tower(3)]
        );
        c.arrangement = Arrangement::AtStart;
        assert_eq!(
            c.stages(),
            vec![Stage::Cross(0), Stage::Cross(1), Stage::Tower(0), Stage::Tower(1), Stage::Tower(2), Stage::Tower(3)]
        );
    }

    #[test]
    fn sharing_maps() {
        let mut c = tiny();
        c.num_cross_attends = 8;
        assert_eq!(c.cross_param_sets(), 2);
        assert_eq!((0..8).map(|i| c.cross_set_for(i)).collect::<Vec<_>>(), vec![0, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(c.tower_param_sets(), 1);
        let u = c.unshared();
        assert_eq!(u.cross_param_sets(), 8);
        assert_eq!(u.tower_param_sets(), 8);
        assert_eq!(shared_name(&c, "cross.5.key.weight"), "cross.1.key.weight");
        assert_eq!(shared_name(&c, "tower.3.block.0.norm.gain"), "tower.0.block.0.norm.gain");
        assert_eq!(shared_name(&c, "head.bias"), "head.bias");
    }

    #[test]
    fn logits_shape_is_independent_of_m() {
        let model = Perceiver::<f64>::build(tiny(), 1).unwrap();
        for m in [1, 16, 64] {
            let x = Tensor::from_fn([m, 5], |i| (i as f64 * 0.37).sin());
            assert_eq!(model.logits(&x, &[]).unwrap().shape(), &[3]);
        }
        let bad = Tensor::<f64>::zeros([4, 6]);
        assert!(model.logits(&bad, &[]).is_err());
    }

    #[test]
    fn capture_flag_controls_maps() {
        let model = Perceiver::<f64>::build(tiny(), 1).unwrap();
        let x = Tensor::from_fn([6, 5], |i| (i as f64).cos());
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false).unwrap();
        let out = model.forward(&mut tape, &p, &x, &[], false).unwrap();
        assert!(matches!(out.attention_maps(0), Err(Error::CaptureDisabled)));
        let out = model.forward(&mut tape, &p, &x, &[], true).unwrap();
        assert_eq!(extract_attention_maps(&out, 1).unwrap().shape(), [1, 4, 6]);
        assert!(out.attention_maps(2).is_err());
    }

    #[test]
    fn loss_modes() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new([2], vec![3f64.ln(), 0.0]).unwrap()).unwrap();
        let l = loss(&mut tape, z, LossKind::Softmax, &Target::Class(0)).unwrap();
        assert!((tape.value(l).item() + 0.75f64.ln()).abs() < 1e-15);
        assert!(loss(&mut tape, z, LossKind::Softmax, &Target::MultiLabel(vec![0.0, 1.0])).is_err());
        assert!(loss(&mut tape, z, LossKind::Softmax, &Target::Class(7)).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny();
        c.latent_heads = 3;
        assert!(Perceiver::<f32>::build(c, 0).is_err());
        let mut c = tiny();
        c.num_cross_attends = 0;
        assert!(c.validate().is_err());
    }
}
