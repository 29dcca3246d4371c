//! Unit discovery, masked-prediction pretraining with re-clustering, and
//! supervised emotion fine-tuning.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::mask::{make_masks, MaskSpec};
use super::model::{EncoderConfig, FeatureNorm, HubertModel, UnitCodebook};
use crate::datasets::EmotionLabel;
use crate::error::{Error, Result};
use crate::fusion::{ScoreKind, ScoreRow, ScoreTable};
use crate::numerics::{adam_step, argmax, kmeans_assign, kmeans_fit, AdamState, Matrix};
use crate::training::{batch_gradient, EarlyStopping, EpochRecord, StopDecision};

/// One utterance of raw frame features.
#[derive(Debug, Clone)]
pub struct AudioExample {
    pub id: String,
    pub label: EmotionLabel,
    /// `frames × feat_dim`.
    pub features: Matrix,
}

/// Derives a stream seed from a base seed and a path of indices.
pub(crate) fn derive_seed(base: u64, path: &[u64]) -> u64 {
    // splitmix64 finaliser folded over the path
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in path {
        h = h.wrapping_add(p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// k-means over all frames pooled; returns the codebook and per-utterance labels.
pub fn discover_units(
    features: &[Matrix],
    k: usize,
    seed: u64,
    source_layer: usize,
) -> Result<(UnitCodebook, Vec<Vec<usize>>)> {
    let total: usize = features.iter().map(Matrix::rows).sum();
    if total < k {
        return Err(Error::Data(format!("{total} frames cannot form {k} units")));
    }
    let refs: Vec<&Matrix> = features.iter().collect();
    let pooled = Matrix::vstack(&refs)?;
    let km = kmeans_fit(&pooled, k, seed, 100)?;
    log::info!(
        "units: k={k} over {total} frames, {} iterations, inertia {:.3}",
        km.iterations,
        km.inertia
    );
    let labels = features
        .par_iter()
        .map(|f| kmeans_assign(&km, f))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        UnitCodebook {
            centroids: km.centroids,
            source_layer,
        },
        labels,
    ))
}

/// Re-clusters unmasked states of the middle encoder layer.
pub fn refine_units(
    model: &HubertModel,
    features: &[Matrix],
    k: usize,
    seed: u64,
) -> Result<(UnitCodebook, Vec<Vec<usize>>)> {
    let layer = model.config().clustering_layer();
    let states = features
        .par_iter()
        .map(|f| Ok(model.encoder_forward(f, None)?.states.swap_remove(layer)))
        .collect::<Result<Vec<_>>>()?;
    discover_units(&states, k, seed, layer)
}

/// Independent Adam states over disjoint ranges of the flat parameter
/// vector; parameters outside every range stay fixed.
struct GroupedAdam {
    groups: Vec<(Range<usize>, AdamState)>,
}

impl GroupedAdam {
    fn new(groups: Vec<(Range<usize>, f64)>) -> Self {
        Self {
            groups: groups
                .into_iter()
                .map(|(r, lr)| {
                    let n = r.len();
                    (r, AdamState::new(n, lr))
                })
                .collect(),
        }
    }

    fn step(&mut self, flat: &mut [f64], grad: &[f64]) -> Result<()> {
        for (r, state) in &mut self.groups {
            adam_step(&mut flat[r.clone()], &grad[r.clone()], state)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub units: usize,
    pub iterations: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask: MaskSpec,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            units: 50,
            iterations: 2,
            steps: 500,
            batch_size: 2,
            learning_rate: 1e-3,
            mask: MaskSpec::default(),
            seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.mask.validate()?;
        if self.units == 0 || self.iterations == 0 || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "units, iterations, steps and batch_size must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub iteration: usize,
    /// 1-based across all iterations.
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub model: HubertModel,
    pub log: Vec<StepLoss>,
    /// Fraction of frames whose unit changed when re-clustering, per refinement.
    pub label_change: Vec<f64>,
}

impl PretrainRun {
    /// Mean loss over the first and last `window` steps of `iteration`.
    pub fn loss_trend(&self, iteration: usize, window: usize) -> Option<(f64, f64)> {
        let losses: Vec<f64> = self
            .log
            .iter()
            .filter(|s| s.iteration == iteration)
            .map(|s| s.loss)
            .collect();
        let w = window.min(losses.len());
        if w == 0 {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
    }
}

pub fn write_step_log<W: Write>(log: &[StepLoss], mut w: W) -> Result<()> {
    let io = |e| Error::io("pretrain log", e);
    writeln!(w, "step,loss").map_err(io)?;
    for s in log {
        writeln!(w, "{},{:.6}", s.step, s.loss).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_step_log(log: &[StepLoss], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_step_log(log, std::io::BufWriter::new(file))
}

/// Masked unit prediction for `cfg.iterations` rounds. Round 1 targets
/// k-means units of normalised features; later rounds re-cluster the
/// middle layer of the current encoder and restart the unit head and
/// optimiser while keeping the encoder weights.
pub fn pretrain(examples: &[AudioExample], cfg: &PretrainConfig) -> Result<PretrainRun> {
    cfg.validate()?;
    let first = examples
        .first()
        .ok_or_else(|| Error::Data("pretraining needs at least one utterance".into()))?;
    let feat_dim = first.features.cols();
    let mut model = HubertModel::new(cfg.encoder, feat_dim, cfg.units, cfg.seed)?;
    model.set_norm(FeatureNorm::fit(examples.iter().map(|e| &e.features))?)?;
    let normalized = examples
        .par_iter()
        .map(|e| model.normalize(&e.features))
        .collect::<Result<Vec<_>>>()?;

    let mut log = Vec::with_capacity(cfg.iterations * cfg.steps);
    let mut label_change = Vec::new();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    let n_params = model.params().num_scalars();
    for iteration in 1..=cfg.iterations {
        let unit_seed = derive_seed(cfg.seed, &[1, iteration as u64]);
        let (codebook, new_labels) = if iteration == 1 {
            discover_units(&normalized, cfg.units, unit_seed, 0)?
        } else {
            let raw: Vec<Matrix> = examples.iter().map(|e| e.features.clone()).collect();
            refine_units(&model, &raw, cfg.units, unit_seed)?
        };
        if !labels.is_empty() {
            let (mut changed, mut total) = (0usize, 0usize);
            for (a, b) in labels.iter().zip(&new_labels) {
                changed += a.iter().zip(b).filter(|(x, y)| x != y).count();
                total += a.len();
            }
            let frac = changed as f64 / total as f64;
            log::info!(
                "iteration {iteration}: {:.1}% of frame units changed",
                100.0 * frac
            );
            label_change.push(frac);
        }
        labels = new_labels;
        model.reset_units(codebook, derive_seed(cfg.seed, &[2, iteration as u64]));

        let mut flat = model.params().flatten();
        let mut adam = GroupedAdam::new(vec![
            (model.encoder_range(), cfg.learning_rate),
            (model.unit_head_range(), cfg.learning_rate),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3, iteration as u64]));
        for step in 0..cfg.steps {
            let batch: Vec<(usize, Vec<bool>)> = (0..cfg.batch_size)
                .map(|b| {
                    let i = rng.random_range(0..examples.len());
                    let seed = derive_seed(cfg.seed, &[4, iteration as u64, step as u64, b as u64]);
                    (i, make_masks(normalized[i].rows(), &cfg.mask, seed))
                })
                .collect();
            let (loss, mut grad) = batch_gradient(&batch, n_params, |(i, mask)| {
                model.pretrain_loss_and_grad(&normalized[*i], &labels[*i], mask)
            })?;
            let scale = 1.0 / cfg.batch_size as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut flat, &grad)?;
            model.params_mut().assign_flat(&flat)?;
            let rec = StepLoss {
                iteration,
                step: log.len() + 1,
                loss: loss * scale,
            };
            if step % 50 == 0 || step + 1 == cfg.steps {
                log::info!(
                    "pretrain iteration {iteration} step {}: loss {:.4}",
                    step + 1,
                    rec.loss
                );
            }
            log.push(rec);
        }
    }
    Ok(PretrainRun {
        model,
        log,
        label_change,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Learning rate of the pretrained encoder (kept below the head's).
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            max_epochs: 15,
            patience: 10,
            batch_size: 4,
            encoder_lr: 2e-4,
            head_lr: 1e-2,
            seed: 7,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "max_epochs, patience and batch_size must be at least 1",
            ));
        }
        for lr in [self.encoder_lr, self.head_lr] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::invalid(
                    "learning rates must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub model: HubertModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Raw logits for the test examples.
    pub scores: ScoreTable,
}

fn check_examples(model: &HubertModel, examples: &[AudioExample]) -> Result<()> {
    for e in examples {
        if e.features.cols() != model.feat_dim() {
            return Err(Error::shape(
                "hubert input",
                format!(
                    "{} has {} feature columns, model expects {}",
                    e.id,
                    e.features.cols(),
                    model.feat_dim()
                ),
            ));
        }
        if !e.label.is_canonical() {
            return Err(Error::Data(format!(
                "{}: label {} is not one of the four classes",
                e.id, e.label
            )));
        }
    }
    Ok(())
}

pub fn accuracy(model: &HubertModel, examples: &[AudioExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("accuracy over zero examples".into()));
    }
    let hits = examples
        .par_iter()
        .map(|e| Ok(argmax(&model.emotion_logits(&e.features)?) == Some(e.label.index())))
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / examples.len() as f64)
}

/// Raw-logit score table for `examples`.
pub fn score(model: &HubertModel, examples: &[AudioExample]) -> Result<ScoreTable> {
    let rows = examples
        .par_iter()
        .map(|e| {
            Ok(ScoreRow {
                id: e.id.clone(),
                label: e.label,
                scores: model.emotion_logits(&e.features)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::new(ScoreKind::Raw, rows)
}

/// Trains a zero-initialised mean-pool head together with the encoder.
pub fn finetune(
    pretrained: &HubertModel,
    train: &[AudioExample],
    test: &[AudioExample],
    cfg: &FinetuneConfig,
) -> Result<FinetuneRun> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "fine-tuning needs train and test examples ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    check_examples(pretrained, train)?;
    check_examples(pretrained, test)?;
    let mut model = pretrained.clone();
    model.reset_head();
    let normalized = train
        .par_iter()
        .map(|e| model.normalize(&e.features))
        .collect::<Result<Vec<_>>>()?;
    let n_params = model.params().num_scalars();
    let mut flat = model.params().flatten();
    let mut adam = GroupedAdam::new(vec![
        (model.encoder_range(), cfg.encoder_lr),
        (model.emotion_head_range(), cfg.head_lr),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[5]));
    let mut stopper = EarlyStopping::new(cfg.patience)?;
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grad) = batch_gradient(batch, n_params, |&i| {
                model.finetune_loss_and_grad(&normalized[i], train[i].label.index())
            })?;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut flat, &grad)?;
            model.params_mut().assign_flat(&flat)?;
            epoch_loss += loss;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            train_acc: accuracy(&model, train)?,
            test_acc: accuracy(&model, test)?,
        };
        log::info!(
            "finetune epoch {epoch}: loss {:.4} train {:.3} test {:.3}",
            rec.train_loss,
            rec.train_acc,
            rec.test_acc
        );
        history.push(rec);
        match stopper.observe(rec.test_acc) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Wait { .. } => {}
            StopDecision::Stop => break,
        }
    }
    let scores = score(&best, test)?;
    Ok(FinetuneRun {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            model_dim: 8,
            layers: 2,
            heads: 2,
            ffn_dim: 16,
            proj_dim: 8,
            temperature: 0.1,
            positional: true,
        }
    }

    /// Four classes whose frames sit around class-specific means.
    fn toy_set(per_class: usize, frames: usize, seed: u64) -> Vec<AudioExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for c in 0..4 {
            for i in 0..per_class {
                let data = (0..frames * 6)
                    .map(|j| {
                        let centre = if j % 6 == c { 3.0 } else { 0.0 };
                        centre + 0.5 * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                out.push(AudioExample {
                    id: format!("c{c}_{i}"),
                    label: EmotionLabel::CANONICAL[c],
                    features: Matrix::from_vec(frames, 6, data).unwrap(),
                });
            }
        }
        out
    }

    #[test]
    fn units_from_tight_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut feats = Vec::new();
        for u in 0..2 {
            let data: Vec<f64> = (0..30)
                .flat_map(|t| {
                    let c = centres[(t + u) % 3];
                    [c[0] + 0.01 * rng.sample::<f64, _>(StandardNormal), c[1]]
                })
                .collect();
            feats.push(Matrix::from_vec(30, 2, data).unwrap());
        }
        let (cb, labels) = discover_units(&feats, 3, 5, 0).unwrap();
        assert_eq!(cb.k(), 3);
        // frames from the same blob share a unit, different blobs differ
        for (u, l) in labels.iter().enumerate() {
            for t in 0..30 {
                assert_eq!(l[t], labels[0][(t + u) % 3]);
            }
        }
        let mut distinct = labels[0][..3].to_vec();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 3);

        let (_, same) = discover_units(&[feats[0].clone(), feats[0].clone()], 3, 5, 0).unwrap();
        assert_eq!(same[0], same[1]);
        let (_, one) = discover_units(&feats, 1, 5, 0).unwrap();
        assert!(one.iter().flatten().all(|l| *l == 0));
        assert!(discover_units(&feats, 61, 5, 0).is_err());
    }

    #[test]
    fn refine_on_untrained_model() {
        let data = toy_set(2, 12, 3);
        let feats: Vec<Matrix> = data.iter().map(|e| e.features.clone()).collect();
        let model = HubertModel::new(small_encoder(), 6, 5, 4).unwrap();
        let (a, la) = refine_units(&model, &feats, 5, 9).unwrap();
        let (b, lb) = refine_units(&model, &feats, 5, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(a.source_layer, 1);
        assert_eq!(a.centroids.cols(), 8);
        let (_, mfcc) = discover_units(&feats, 5, 9, 0).unwrap();
        let changed = la
            .iter()
            .flatten()
            .zip(mfcc.iter().flatten())
            .filter(|(x, y)| x != y)
            .count();
        assert!(changed > 0);
    }

    #[test]
    fn pretrain_reduces_loss_and_is_deterministic() {
        let data = toy_set(2, 24, 6);
        let cfg = PretrainConfig {
            encoder: small_encoder(),
            units: 6,
            iterations: 2,
            steps: 200,
            batch_size: 1,
            learning_rate: 3e-3,
            mask: MaskSpec {
                span_len: 4,
                target_coverage: 0.5,
            },
            seed: 11,
        };
        let run = pretrain(&data[..5], &cfg).unwrap();
        assert_eq!(run.log.len(), 400);
        assert_eq!(run.label_change.len(), 1);
        for it in 1..=2 {
            let (initial, last) = run.loss_trend(it, 20).unwrap();
            assert!(last < initial, "iteration {it}: {initial} -> {last}");
        }
        let again = pretrain(&data[..5], &cfg).unwrap();
        assert_eq!(again.model, run.model);

        let single = pretrain(
            &data[..5],
            &PretrainConfig {
                iterations: 1,
                steps: 5,
                ..cfg
            },
        )
        .unwrap();
        assert!(single.label_change.is_empty());
        assert_eq!(single.model.codebook().unwrap().source_layer, 0);
    }

    #[test]
    fn finetune_separates_toy_classes() {
        let train = toy_set(6, 10, 7);
        let test = toy_set(2, 10, 8);
        let model = HubertModel::new(small_encoder(), 6, 4, 1).unwrap();
        let before = score(&model, &test).unwrap();
        assert!(before.rows().iter().all(|r| r.scores == [0.0; 4]));
        let cfg = FinetuneConfig {
            max_epochs: 20,
            batch_size: 4,
            ..FinetuneConfig::default()
        };
        let run = finetune(&model, &train, &test, &cfg).unwrap();
        let best = run.history.iter().map(|r| r.train_acc).fold(0.0, f64::max);
        assert!(best >= 0.9, "{:?}", run.history);
        assert_eq!(run.scores.len(), test.len());
    }

    #[test]
    fn finetune_rejects_mismatched_inputs() {
        let model = HubertModel::new(small_encoder(), 5, 4, 1).unwrap();
        let data = toy_set(1, 4, 2);
        assert!(finetune(&model, &data, &data, &FinetuneConfig::default()).is_err());
        let model = HubertModel::new(small_encoder(), 6, 4, 1).unwrap();
        let mut bad = data.clone();
        bad[0].label = EmotionLabel::Calm;
        assert!(finetune(&model, &bad, &data, &FinetuneConfig::default()).is_err());
    }

    #[test]
    fn step_log_format() {
        let mut buf = Vec::new();
        write_step_log(
            &[StepLoss {
                iteration: 1,
                step: 1,
                loss: 3.5,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,loss\n1,3.500000\n");
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }
}
