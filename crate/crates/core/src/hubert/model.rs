//! Transformer encoder over MFCC frames with a cosine-similarity unit head
//! for masked prediction and a mean-pool linear head for emotion.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::datasets::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet, Tape, Var};

pub const CHECKPOINT_KIND: &str = "hubert";

/// Norm floor for per-dimension feature standardisation.
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub proj_dim: usize,
    /// Cosine-logit temperature τ.
    pub temperature: f64,
    /// Add sinusoidal position encodings to the projected input.
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            layers: 4,
            heads: 4,
            ffn_dim: 256,
            proj_dim: 64,
            temperature: 0.1,
            positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 || self.proj_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(())
    }

    /// Layer whose states are re-clustered between iterations: `⌈layers / 2⌉`.
    pub fn clustering_layer(&self) -> usize {
        self.layers.div_ceil(2)
    }
}

/// Cluster centroids behind the current pretraining targets. Unit `i`
/// pairs centroid row `i` with row `i` of the model's `units.embedding`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCodebook {
    pub centroids: Matrix,
    /// 0 for normalised MFCC frames, otherwise the encoder layer clustered.
    pub source_layer: usize,
}

impl UnitCodebook {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

/// Per-dimension standardisation fitted on training frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut it = features.into_iter().peekable();
        let dim = it
            .peek()
            .map(|m| m.cols())
            .ok_or_else(|| Error::Data("no features to normalise".into()))?;
        let (mut n, mut sum, mut sq) = (0usize, vec![0.0; dim], vec![0.0; dim]);
        for m in it {
            if m.cols() != dim {
                return Err(Error::shape(
                    "feature norm",
                    format!("{} vs {dim} columns", m.cols()),
                ));
            }
            for row in m.iter_rows() {
                n += 1;
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
        }
        if n == 0 {
            return Err(Error::Data("no frames to normalise".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::shape(
                "feature norm",
                format!("{} columns, expected {}", m.cols(), self.mean.len()),
            ));
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(…)`.
pub fn sinusoidal_positions(frames: usize, dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(frames, dim);
    for t in 0..frames {
        for j in 0..dim {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
            let a = t as f64 / rate;
            pe[(t, j)] = if j % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    pe
}

const PER_LAYER: usize = 12;
// offsets inside one layer's block of slots
const QKV_W: usize = 0;
const QKV_B: usize = 1;
const OUT_W: usize = 2;
const OUT_B: usize = 3;
const LN1_G: usize = 4;
const LN1_B: usize = 5;
const FF1_W: usize = 6;
const FF1_B: usize = 7;
const FF2_W: usize = 8;
const FF2_B: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;

const IN_W: usize = 0;
const IN_B: usize = 1;
const MASK: usize = 2;
const FIRST_LAYER: usize = 3;

/// Vars of an encoder pass placed on a tape.
pub struct EncoderTrace {
    /// `states[0]` is the encoder input, `states[l]` the output of layer `l`.
    pub states: Vec<Var>,
    /// Attention weights per layer and head.
    pub attention: Vec<Vec<Var>>,
}

/// Matrices from an inference pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub states: Vec<Matrix>,
    pub attention: Vec<Vec<Matrix>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HubertModel {
    config: EncoderConfig,
    feat_dim: usize,
    norm: FeatureNorm,
    params: ParamSet,
    codebook: Option<UnitCodebook>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

impl HubertModel {
    /// Fresh model with `units` unit embeddings and a zero emotion head.
    pub fn new(config: EncoderConfig, feat_dim: usize, units: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if feat_dim == 0 || units == 0 {
            return Err(Error::invalid(
                "feature dim and unit count must be positive",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let mut p = ParamSet::new();
        p.push("input.weight", uniform(&mut rng, feat_dim, d));
        p.push("input.bias", Matrix::zeros(1, d));
        p.push("mask", uniform(&mut rng, d, 1).transpose());
        for l in 0..config.layers {
            let name = |s: &str| format!("layer{l}.{s}");
            p.push(name("qkv.weight"), uniform(&mut rng, d, 3 * d));
            p.push(name("qkv.bias"), Matrix::zeros(1, 3 * d));
            p.push(name("out.weight"), uniform(&mut rng, d, d));
            p.push(name("out.bias"), Matrix::zeros(1, d));
            p.push(name("ln1.gain"), Matrix::filled(1, d, 1.0));
            p.push(name("ln1.bias"), Matrix::zeros(1, d));
            p.push(name("ffn1.weight"), uniform(&mut rng, d, config.ffn_dim));
            p.push(name("ffn1.bias"), Matrix::zeros(1, config.ffn_dim));
            p.push(name("ffn2.weight"), uniform(&mut rng, config.ffn_dim, d));
            p.push(name("ffn2.bias"), Matrix::zeros(1, d));
            p.push(name("ln2.gain"), Matrix::filled(1, d, 1.0));
            p.push(name("ln2.bias"), Matrix::zeros(1, d));
        }
        p.push("proj.weight", uniform(&mut rng, d, config.proj_dim));
        p.push(
            "units.embedding",
            gaussian(&mut rng, units, config.proj_dim),
        );
        p.push("head.weight", Matrix::zeros(d, NUM_CLASSES));
        p.push("head.bias", Matrix::zeros(1, NUM_CLASSES));
        Ok(Self {
            config,
            feat_dim,
            norm: FeatureNorm::identity(feat_dim),
            params: p,
            codebook: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn norm(&self) -> &FeatureNorm {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: FeatureNorm) -> Result<()> {
        if norm.mean.len() != self.feat_dim || norm.std.len() != self.feat_dim {
            return Err(Error::shape(
                "feature norm",
                "length differs from feature dim",
            ));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn codebook(&self) -> Option<&UnitCodebook> {
        self.codebook.as_ref()
    }

    pub fn num_units(&self) -> usize {
        self.params.get(self.units_slot()).rows()
    }

    fn proj_slot(&self) -> usize {
        FIRST_LAYER + PER_LAYER * self.config.layers
    }

    fn units_slot(&self) -> usize {
        self.proj_slot() + 1
    }

    fn head_slot(&self) -> usize {
        self.proj_slot() + 2
    }

    fn flat_range(&self, slots: Range<usize>) -> Range<usize> {
        let offset = |s: usize| (0..s).map(|i| self.params.get(i).len()).sum::<usize>();
        offset(slots.start)..offset(slots.end)
    }

    /// Flat-vector range of the encoder proper (input projection, mask vector, layers).
    pub fn encoder_range(&self) -> Range<usize> {
        self.flat_range(0..self.proj_slot())
    }

    /// Flat range of the masked-prediction head (projection and unit embeddings).
    pub fn unit_head_range(&self) -> Range<usize> {
        self.flat_range(self.proj_slot()..self.units_slot() + 1)
    }

    /// Flat range of the emotion head.
    pub fn emotion_head_range(&self) -> Range<usize> {
        self.flat_range(self.head_slot()..self.head_slot() + 2)
    }

    /// Installs a new codebook and re-draws the unit embeddings to match.
    pub fn reset_units(&mut self, codebook: UnitCodebook, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slot = self.units_slot();
        *self.params.get_mut(slot) = gaussian(&mut rng, codebook.k(), self.config.proj_dim);
        self.codebook = Some(codebook);
    }

    /// Zeroes the emotion head.
    pub fn reset_head(&mut self) {
        let s = self.head_slot();
        for i in [s, s + 1] {
            let m = self.params.get_mut(i);
            *m = Matrix::zeros(m.rows(), m.cols());
        }
    }

    pub fn normalize(&self, features: &Matrix) -> Result<Matrix> {
        self.norm.apply(features)
    }

    /// Encoder pass over normalised features; `mask` flags frames whose
    /// projected input is replaced by the learned mask vector.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        features: &Matrix,
        mask: Option<&[bool]>,
    ) -> Result<EncoderTrace> {
        if features.cols() != self.feat_dim {
            return Err(Error::shape(
                "encoder input",
                format!(
                    "{} feature columns, model expects {}",
                    features.cols(),
                    self.feat_dim
                ),
            ));
        }
        if features.rows() == 0 {
            return Err(Error::Data("encoder input has no frames".into()));
        }
        let x = tape.constant(features.clone());
        let h = tape.matmul(x, vars[IN_W])?;
        let mut h = tape.add_row(h, vars[IN_B])?;
        if let Some(flags) = mask {
            h = tape.replace_rows(h, vars[MASK], flags)?;
        }
        if self.config.positional {
            let pe = tape.constant(sinusoidal_positions(features.rows(), self.config.model_dim));
            h = tape.add(h, pe)?;
        }
        let mut states = vec![h];
        let mut attention = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let v = &vars[FIRST_LAYER + PER_LAYER * l..FIRST_LAYER + PER_LAYER * (l + 1)];
            let (out, attn) = self.layer_on_tape(tape, v, h)?;
            h = out;
            states.push(h);
            attention.push(attn);
        }
        Ok(EncoderTrace { states, attention })
    }

    fn layer_on_tape(&self, tape: &mut Tape, v: &[Var], x: Var) -> Result<(Var, Vec<Var>)> {
        let d = self.config.model_dim;
        let dh = d / self.config.heads;
        let qkv = tape.matmul(x, v[QKV_W])?;
        let qkv = tape.add_row(qkv, v[QKV_B])?;
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let q = tape.column_block(qkv, h * dh, dh)?;
            let k = tape.column_block(qkv, d + h * dh, dh)?;
            let val = tape.column_block(qkv, 2 * d + h * dh, dh)?;
            let scores = tape.matmul_t(q, k)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let a = tape.softmax_rows(scores);
            heads.push(tape.matmul(a, val)?);
            weights.push(a);
        }
        let cat = tape.concat_cols(&heads)?;
        let att = tape.matmul(cat, v[OUT_W])?;
        let att = tape.add_row(att, v[OUT_B])?;
        let r1 = tape.add(x, att)?;
        let y = self.layer_norm(tape, r1, v[LN1_G], v[LN1_B])?;
        let f = tape.matmul(y, v[FF1_W])?;
        let f = tape.add_row(f, v[FF1_B])?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, v[FF2_W])?;
        let f = tape.add_row(f, v[FF2_B])?;
        let r2 = tape.add(y, f)?;
        Ok((self.layer_norm(tape, r2, v[LN2_G], v[LN2_B])?, weights))
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let z = tape.standardize_rows(x);
        let z = tape.mul_row(z, gain)?;
        tape.add_row(z, bias)
    }

    /// `cos(proj(state_t), emb_u) / τ` for every frame and unit.
    pub fn unit_logits_on_tape(&self, tape: &mut Tape, vars: &[Var], state: Var) -> Result<Var> {
        let p = tape.matmul(state, vars[self.proj_slot()])?;
        let pn = tape.normalize_rows(p);
        let en = tape.normalize_rows(vars[self.units_slot()]);
        let cos = tape.matmul_t(pn, en)?;
        Ok(tape.scale(cos, 1.0 / self.config.temperature))
    }

    /// Mean-pooled final state through the linear emotion head; `1 × 4`.
    pub fn emotion_logits_on_tape(&self, tape: &mut Tape, vars: &[Var], state: Var) -> Result<Var> {
        let pooled = tape.mean_rows(state);
        let z = tape.matmul(pooled, vars[self.head_slot()])?;
        tape.add_row(z, vars[self.head_slot() + 1])
    }

    /// Masked-prediction loss (mean over masked frames) and flat gradient,
    /// for one utterance of normalised features.
    pub fn pretrain_loss_and_grad(
        &self,
        features: &Matrix,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let trace = self.encode_on_tape(&mut tape, &vars, features, Some(mask))?;
        let last = *trace.states.last().expect("input state");
        let logits = self.unit_logits_on_tape(&mut tape, &vars, last)?;
        let targets = masked_targets(labels, mask, self.num_units())?;
        let loss = tape.cross_entropy(logits, &targets)?;
        let grads = tape.backward(loss)?;
        Ok((
            tape.value(loss)[(0, 0)],
            self.params.flat_grads(&grads, &vars),
        ))
    }

    /// Emotion cross-entropy and flat gradient for one utterance of normalised features.
    pub fn finetune_loss_and_grad(
        &self,
        features: &Matrix,
        label: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let trace = self.encode_on_tape(&mut tape, &vars, features, None)?;
        let last = *trace.states.last().expect("input state");
        let logits = self.emotion_logits_on_tape(&mut tape, &vars, last)?;
        let loss = tape.cross_entropy(logits, &[(0, label, 1.0)])?;
        let grads = tape.backward(loss)?;
        Ok((
            tape.value(loss)[(0, 0)],
            self.params.flat_grads(&grads, &vars),
        ))
    }

    /// Inference pass over raw (unnormalised) features.
    pub fn encoder_forward(
        &self,
        features: &Matrix,
        mask: Option<&[bool]>,
    ) -> Result<EncoderOutput> {
        let x = self.normalize(features)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_constants(&mut tape);
        let trace = self.encode_on_tape(&mut tape, &vars, &x, mask)?;
        Ok(EncoderOutput {
            states: trace
                .states
                .iter()
                .map(|v| tape.value(*v).clone())
                .collect(),
            attention: trace
                .attention
                .iter()
                .map(|l| l.iter().map(|v| tape.value(*v).clone()).collect())
                .collect(),
        })
    }

    /// Emotion logits for raw features.
    pub fn emotion_logits(&self, features: &Matrix) -> Result<[f64; NUM_CLASSES]> {
        let x = self.normalize(features)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_constants(&mut tape);
        let trace = self.encode_on_tape(&mut tape, &vars, &x, None)?;
        let last = *trace.states.last().expect("input state");
        let z = self.emotion_logits_on_tape(&mut tape, &vars, last)?;
        let out = tape.value(z);
        out.ensure_finite("emotion logits")?;
        Ok(out.as_slice().try_into().expect("four logits"))
    }

    pub fn to_checkpoint(&self, stage: &str, seed: u64) -> Checkpoint {
        let mut params = self.params.clone();
        params.push("norm.mean", Matrix::row_vector(&self.norm.mean));
        params.push("norm.std", Matrix::row_vector(&self.norm.std));
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, ParamSet::new());
        if let Some(cb) = &self.codebook {
            params.push("codebook.centroids", cb.centroids.clone());
            ck = ck.with("codebook_layer", cb.source_layer);
        }
        ck.params = params;
        let c = &self.config;
        ck.with("stage", stage)
            .with("feat_dim", self.feat_dim)
            .with("model_dim", c.model_dim)
            .with("layers", c.layers)
            .with("heads", c.heads)
            .with("ffn_dim", c.ffn_dim)
            .with("proj_dim", c.proj_dim)
            .with("temperature", c.temperature)
            .with("positional", c.positional)
            .with("units", self.num_units())
            .with("seed", seed)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::invalid(format!(
                "checkpoint holds a {} model, expected {CHECKPOINT_KIND}",
                ck.kind
            )));
        }
        let config = EncoderConfig {
            model_dim: ck.require("model_dim")?,
            layers: ck.require("layers")?,
            heads: ck.require("heads")?,
            ffn_dim: ck.require("ffn_dim")?,
            proj_dim: ck.require("proj_dim")?,
            temperature: ck.require("temperature")?,
            positional: ck.require("positional")?,
        };
        let feat_dim: usize = ck.require("feat_dim")?;
        let mut model = Self::new(config, feat_dim, ck.require("units")?, 0)?;
        let mut params = ParamSet::new();
        let mut extra = std::collections::HashMap::new();
        for (name, m) in ck.params.iter() {
            if name.starts_with("norm.") || name.starts_with("codebook.") {
                extra.insert(name.to_string(), m.clone());
            } else {
                params.push(name, m.clone());
            }
        }
        let same = params.len() == model.params.len()
            && params
                .iter()
                .zip(model.params.iter())
                .all(|((n, m), (en, em))| n == en && m.shape() == em.shape());
        if !same {
            return Err(Error::shape(
                "hubert checkpoint",
                "parameter names or shapes do not match the recorded config",
            ));
        }
        model.params = params;
        let row = |key: &str| -> Result<Vec<f64>> {
            extra
                .get(key)
                .map(|m| m.as_slice().to_vec())
                .ok_or_else(|| Error::parse("hubert checkpoint", format!("missing {key}")))
        };
        model.set_norm(FeatureNorm {
            mean: row("norm.mean")?,
            std: row("norm.std")?,
        })?;
        if let Some(c) = extra.remove("codebook.centroids") {
            model.codebook = Some(UnitCodebook {
                centroids: c,
                source_layer: ck.require("codebook_layer")?,
            });
        }
        model.params.ensure_finite()?;
        Ok(model)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

fn masked_targets(labels: &[usize], mask: &[bool], k: usize) -> Result<Vec<(usize, usize, f64)>> {
    if labels.len() != mask.len() {
        return Err(Error::shape(
            "masked prediction",
            format!("{} labels vs {} mask flags", labels.len(), mask.len()),
        ));
    }
    let masked = mask.iter().filter(|m| **m).count();
    if masked == 0 {
        return Err(Error::Data("no masked frames to predict".into()));
    }
    let w = 1.0 / masked as f64;
    labels
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, m))| **m)
        .map(|(t, (&l, _))| {
            if l >= k {
                Err(Error::invalid(format!(
                    "unit label {l} at frame {t} with {k} units"
                )))
            } else {
                Ok((t, l, w))
            }
        })
        .collect()
}

/// `cos(a_t, b_u) / τ` between every row of `a` and every row of `b`;
/// zero rows have cosine 0.
pub fn cosine_logits(a: &Matrix, b: &Matrix, temperature: f64) -> Result<Matrix> {
    let unit = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            let n = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                out.row_mut(r).iter_mut().for_each(|v| *v /= n);
            }
        }
        out
    };
    Ok(unit(a).matmul_t(&unit(b))?.scale(1.0 / temperature))
}

/// Mean cross-entropy over masked frames only.
pub fn masked_prediction_loss(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::shape(
            "masked prediction",
            format!("{} logit rows vs {} labels", logits.rows(), labels.len()),
        ));
    }
    let targets = masked_targets(labels, mask, logits.cols())?;
    let mut total = 0.0;
    for (t, l, w) in targets {
        let row = logits.row(t);
        let p = crate::numerics::softmax(row)?;
        total += w * crate::numerics::cross_entropy(&p, l)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, FnDifferentiable};

    pub(crate) fn tiny(layers: usize, positional: bool) -> HubertModel {
        let cfg = EncoderConfig {
            model_dim: 4,
            layers,
            heads: 2,
            ffn_dim: 6,
            proj_dim: 3,
            temperature: 0.1,
            positional,
        };
        let mut m = HubertModel::new(cfg, 3, 5, 1).unwrap();
        // non-trivial gains, biases and head so every path carries gradient
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flat: Vec<f64> = m
            .params
            .flatten()
            .iter()
            .map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        m.params.assign_flat(&flat).unwrap();
        m
    }

    fn frames(seed: u64, t: usize, d: usize) -> Matrix {
        gaussian(&mut ChaCha8Rng::seed_from_u64(seed), t, d)
    }

    fn check_flat<F>(model: &HubertModel, f: F)
    where
        F: Fn(&HubertModel) -> Result<(f64, Vec<f64>)>,
    {
        let with = |p: &[f64]| {
            let mut m = model.clone();
            m.params.assign_flat(p).unwrap();
            m
        };
        let op = FnDifferentiable {
            n: model.params.num_scalars(),
            value: |p: &[f64]| f(&with(p)).map(|r| r.0),
            value_and_grad: |p: &[f64]| f(&with(p)),
        };
        let report = grad_check(&op, &model.params.flatten(), 1e-4);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn default_config_is_valid() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.clustering_layer(), 2);
        assert!(EncoderConfig { heads: 3, ..c }.validate().is_err());
    }

    #[test]
    fn encoder_layer_gradient_check() {
        let m = tiny(1, true);
        let x = frames(3, 5, 3);
        let labels = [0, 4, 2, 2, 1];
        let mask = [true, false, true, true, false];
        check_flat(&m, |m| m.pretrain_loss_and_grad(&x, &labels, &mask));
    }

    #[test]
    fn pool_head_gradient_check() {
        let m = tiny(1, false);
        let x = frames(4, 4, 3);
        check_flat(&m, |m| m.finetune_loss_and_grad(&x, 3));
    }

    #[test]
    fn cosine_logits_cases() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let l = cosine_logits(&a, &b, 0.1).unwrap();
        assert_eq!(l.as_slice(), &[10.0, 0.0, 0.0]);

        let a = frames(5, 6, 4);
        let b = frames(6, 3, 4);
        let l = cosine_logits(&a, &b, 0.1).unwrap();
        for t in 0..6 {
            for u in 0..3 {
                let (x, y) = (a.row(t), b.row(u));
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((l[(t, u)] - dot / (nx * ny) / 0.1).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn tape_unit_logits_match_oracle() {
        let m = tiny(1, true);
        let x = frames(7, 5, 3);
        let mut tape = Tape::new();
        let vars = m.params.bind_constants(&mut tape);
        let trace = m.encode_on_tape(&mut tape, &vars, &x, None).unwrap();
        let last = *trace.states.last().unwrap();
        let logits = m.unit_logits_on_tape(&mut tape, &vars, last).unwrap();
        let proj = tape
            .value(last)
            .matmul(m.params.get(m.proj_slot()))
            .unwrap();
        let oracle = cosine_logits(&proj, m.params.get(m.units_slot()), 0.1).unwrap();
        assert!(tape.value(logits).max_abs_diff(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn masked_loss_cases() {
        let k = 50;
        let uniform = Matrix::zeros(4, k);
        let loss =
            masked_prediction_loss(&uniform, &[1, 2, 3, 4], &[true, false, true, false]).unwrap();
        assert!((loss - (50f64).ln()).abs() < 1e-12);

        let mut sharp = Matrix::zeros(3, 4);
        sharp[(0, 2)] = 60.0;
        sharp[(1, 0)] = -5.0;
        sharp[(2, 1)] = 60.0;
        let loss = masked_prediction_loss(&sharp, &[2, 3, 1], &[true, false, true]).unwrap();
        assert!(loss < 1e-20);
        assert!(masked_prediction_loss(&sharp, &[2, 3, 1], &[false; 3]).is_err());

        let l = frames(8, 3, 4);
        let got = masked_prediction_loss(&l, &[0, 3, 1], &[true, true, false]).unwrap();
        let ce = |r: &[f64], y: usize| {
            let m = r.iter().copied().fold(f64::MIN, f64::max);
            (r.iter().map(|v| (v - m).exp()).sum::<f64>()).ln() + m - r[y]
        };
        let oracle = (ce(l.row(0), 0) + ce(l.row(1), 3)) / 2.0;
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn unmasked_labels_do_not_affect_loss() {
        let m = tiny(2, true);
        let x = frames(9, 6, 3);
        let mask = [false, true, true, false, true, false];
        let a = m
            .pretrain_loss_and_grad(&x, &[0, 1, 2, 3, 4, 0], &mask)
            .unwrap();
        let b = m
            .pretrain_loss_and_grad(&x, &[4, 1, 2, 0, 4, 3], &mask)
            .unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let m = tiny(2, true);
        let out = m.encoder_forward(&frames(10, 7, 3), None).unwrap();
        assert_eq!(out.states.len(), 3);
        for a in out.attention.iter().flatten() {
            for row in a.iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn zero_layers_return_projected_input() {
        let m = tiny(0, false);
        let x = frames(11, 4, 3);
        let out = m.encoder_forward(&x, None).unwrap();
        let expect = x
            .matmul(m.params.get(IN_W))
            .unwrap()
            .add_row_broadcast(m.params.get(IN_B).as_slice())
            .unwrap();
        assert_eq!(out.states.len(), 1);
        assert!(out.states[0].max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn permutation_equivariance_depends_on_positions() {
        let x = frames(12, 5, 3);
        let perm = [3, 0, 4, 1, 2];
        let px = x.select_rows(&perm);
        for (positional, equivariant) in [(false, true), (true, false)] {
            let m = tiny(2, positional);
            let a = m.encoder_forward(&x, None).unwrap().states.pop().unwrap();
            let b = m.encoder_forward(&px, None).unwrap().states.pop().unwrap();
            let diff = a.select_rows(&perm).max_abs_diff(&b).unwrap();
            assert_eq!(
                diff < 1e-10,
                equivariant,
                "positional={positional} diff={diff}"
            );
        }
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut m = tiny(1, true);
        m.reset_head();
        let z = m.emotion_logits(&frames(13, 5, 3)).unwrap();
        assert_eq!(crate::numerics::softmax(&z).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn masked_frames_use_mask_vector() {
        let m = tiny(0, false);
        let out = m
            .encoder_forward(&frames(14, 3, 3), Some(&[false, true, false]))
            .unwrap();
        assert_eq!(out.states[0].row(1), m.params.get(MASK).as_slice());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny(2, true);
        m.set_norm(FeatureNorm {
            mean: vec![0.5, -1.0, 2.0],
            std: vec![1.5, 0.25, 3.0],
        })
        .unwrap();
        m.reset_units(
            UnitCodebook {
                centroids: frames(15, 5, 4),
                source_layer: 1,
            },
            3,
        );
        m.to_checkpoint("pretrained", 3).save(dir.path()).unwrap();
        assert_eq!(HubertModel::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn flat_ranges_partition_parameters() {
        let m = tiny(2, true);
        let (e, u, h) = (
            m.encoder_range(),
            m.unit_head_range(),
            m.emotion_head_range(),
        );
        assert_eq!(e.start, 0);
        assert_eq!(e.end, u.start);
        assert_eq!(u.end, h.start);
        assert_eq!(h.end, m.params.num_scalars());
        assert_eq!(h.len(), 4 * 4 + 4);
    }

    #[test]
    fn feature_norm_standardises() {
        let a = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let n = FeatureNorm::fit([&a]).unwrap();
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, STD_FLOOR]);
        let z = n.apply(&a).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
    }
}
