//! Spectral graph-convolution classifier over transcript graphs.
//!
//! Each layer applies a degree-`P` polynomial of the normalised Laplacian,
//! `ReLU(Σ θ_m L^m · H · W + b)`. The vertex-domain form needs no
//! eigendecomposition; [`gcn_layer_forward_spectral`] evaluates the same
//! filter through the graph Fourier basis. Two layers feed a sum pool and a
//! linear head over the four emotion classes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::datasets::{EmotionLabel, Utterance, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fusion::{ScoreKind, ScoreRow, ScoreTable};
use crate::numerics::{adam_step, argmax, softmax, AdamState, Matrix, ParamSet, Tape, Var};
use crate::textgraph::{sentence_graph, EmbeddingTable, TextGraph, DEFAULT_EMBEDDING_DIM};
use crate::training::{batch_gradient, EarlyStopping, EpochRecord, StopDecision};

pub const CHECKPOINT_KIND: &str = "gcn";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnDims {
    pub input: usize,
    pub hidden: usize,
    /// Polynomial degree `P`.
    pub order: usize,
}

impl Default for GcnDims {
    fn default() -> Self {
        Self {
            input: DEFAULT_EMBEDDING_DIM,
            hidden: 128,
            order: 2,
        }
    }
}

impl GcnDims {
    pub fn num_params(&self) -> usize {
        let layer = |fin: usize| (self.order + 1) + fin * self.hidden + self.hidden;
        layer(self.input) + layer(self.hidden) + self.hidden * NUM_CLASSES + NUM_CLASSES
    }
}

/// Borrowed view of one convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayer<'a> {
    /// `1 × (P+1)` filter coefficients.
    pub theta: &'a Matrix,
    pub weight: &'a Matrix,
    /// `1 × F_out`.
    pub bias: &'a Matrix,
}

// slot order inside the parameter set
const L1: usize = 0;
const L2: usize = 3;
const FC_W: usize = 6;
const FC_B: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    dims: GcnDims,
    params: ParamSet,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

impl GcnModel {
    /// Filters start as the identity (`θ = (1, 0, …)`), weights fan-in
    /// uniform, biases zero.
    pub fn new(dims: GcnDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Matrix::zeros(1, dims.order + 1);
        theta[(0, 0)] = 1.0;
        let mut params = ParamSet::new();
        for (k, fin) in [(1, dims.input), (2, dims.hidden)] {
            params.push(format!("l{k}.theta"), theta.clone());
            params.push(format!("l{k}.weight"), uniform(&mut rng, fin, dims.hidden));
            params.push(format!("l{k}.bias"), Matrix::zeros(1, dims.hidden));
        }
        params.push("fc.weight", uniform(&mut rng, dims.hidden, NUM_CLASSES));
        params.push("fc.bias", Matrix::zeros(1, NUM_CLASSES));
        Self { dims, params }
    }

    pub fn from_params(dims: GcnDims, params: ParamSet) -> Result<Self> {
        let expected = Self::new(dims, 0);
        let ok = params.len() == expected.params.len()
            && params
                .iter()
                .zip(expected.params.iter())
                .all(|((n, m), (en, em))| n == en && m.shape() == em.shape());
        if !ok {
            return Err(Error::shape(
                "gcn parameters",
                format!("parameter names or shapes do not match dims {dims:?}"),
            ));
        }
        params.ensure_finite()?;
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> GcnDims {
        self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Layer 0 or 1.
    pub fn layer(&self, k: usize) -> GcnLayer<'_> {
        let base = [L1, L2][k];
        GcnLayer {
            theta: self.params.get(base),
            weight: self.params.get(base + 1),
            bias: self.params.get(base + 2),
        }
    }

    /// Logits for one graph.
    pub fn logits(&self, g: &TextGraph) -> Result<[f64; NUM_CLASSES]> {
        let h1 = gcn_layer_forward(g, &g.features, self.layer(0))?;
        let h2 = gcn_layer_forward(g, &h1, self.layer(1))?;
        let pooled = Matrix::row_vector(&sum_pool(&h2));
        let out = pooled
            .matmul(self.params.get(FC_W))?
            .add(self.params.get(FC_B))?;
        out.ensure_finite("gcn logits")?;
        Ok(out.as_slice().try_into().expect("four logits"))
    }

    pub fn probabilities(&self, g: &TextGraph) -> Result<Vec<f64>> {
        softmax(&self.logits(g)?)
    }

    /// Places the forward pass on `tape`; returns the `1 × 4` logits node.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &[Var], g: &TextGraph) -> Result<Var> {
        let lap = tape.constant(g.laplacian.clone());
        let x = tape.constant(g.features.clone());
        let h1 = self.layer_on_tape(tape, lap, x, &vars[L1..L1 + 3])?;
        let h2 = self.layer_on_tape(tape, lap, h1, &vars[L2..L2 + 3])?;
        let pooled = tape.sum_rows(h2);
        let z = tape.matmul(pooled, vars[FC_W])?;
        tape.add(z, vars[FC_B])
    }

    fn layer_on_tape(&self, tape: &mut Tape, lap: Var, h: Var, v: &[Var]) -> Result<Var> {
        let (theta, w, b) = (v[0], v[1], v[2]);
        let mut term = tape.matmul(h, w)?;
        let t0 = tape.column_block(theta, 0, 1)?;
        let mut acc = tape.scale_by(t0, term)?;
        for m in 1..=self.dims.order {
            term = tape.matmul(lap, term)?;
            let tm = tape.column_block(theta, m, 1)?;
            let scaled = tape.scale_by(tm, term)?;
            acc = tape.add(acc, scaled)?;
        }
        let z = tape.add_row(acc, b)?;
        Ok(tape.relu(z))
    }

    /// Cross-entropy of one labelled graph and its flat parameter gradient.
    pub fn loss_and_grad(&self, g: &TextGraph, label: usize) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let logits = self.forward_on_tape(&mut tape, &vars, g)?;
        let loss = tape.cross_entropy(logits, &[(0, label, 1.0)])?;
        let grads = tape.backward(loss)?;
        Ok((
            tape.value(loss)[(0, 0)],
            self.params.flat_grads(&grads, &vars),
        ))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint::new(CHECKPOINT_KIND, self.params.clone())
            .with("input_dim", self.dims.input)
            .with("hidden", self.dims.hidden)
            .with("order", self.dims.order)
            .with("classes", NUM_CLASSES)
            .with("seed", seed)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::invalid(format!(
                "checkpoint holds a {} model, expected {CHECKPOINT_KIND}",
                ck.kind
            )));
        }
        let dims = GcnDims {
            input: ck.require("input_dim")?,
            hidden: ck.require("hidden")?,
            order: ck.require("order")?,
        };
        Self::from_params(dims, ck.params.clone())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

fn check_layer_input(g: &TextGraph, h: &Matrix, layer: GcnLayer<'_>) -> Result<()> {
    if h.rows() != g.n() || h.cols() != layer.weight.rows() {
        return Err(Error::shape(
            "gcn layer",
            format!(
                "input {}x{} for a {}-node graph and {}x{} weight",
                h.rows(),
                h.cols(),
                g.n(),
                layer.weight.rows(),
                layer.weight.cols()
            ),
        ));
    }
    Ok(())
}

fn finish_layer(filtered: Matrix, bias: &Matrix) -> Result<Matrix> {
    Ok(filtered
        .add_row_broadcast(bias.as_slice())?
        .map(|v| v.max(0.0)))
}

/// `ReLU(p(L) · H · W + b)` in the vertex domain.
pub fn gcn_layer_forward(g: &TextGraph, h: &Matrix, layer: GcnLayer<'_>) -> Result<Matrix> {
    check_layer_input(g, h, layer)?;
    let hw = h.matmul(layer.weight)?;
    let filter = g.polynomial_filter(layer.theta.as_slice());
    finish_layer(filter.matmul(&hw)?, layer.bias)
}

/// `ReLU(U · diag(p(λ)) · Uᵀ · H · W + b)` through the graph Fourier basis.
pub fn gcn_layer_forward_spectral(
    g: &TextGraph,
    h: &Matrix,
    layer: GcnLayer<'_>,
) -> Result<Matrix> {
    check_layer_input(g, h, layer)?;
    let hw = h.matmul(layer.weight)?;
    let u = &g.basis.eigenvectors;
    let mut spectrum = u.t_matmul(&hw)?;
    for (i, &l) in g.basis.eigenvalues.iter().enumerate() {
        let p: f64 = layer
            .theta
            .as_slice()
            .iter()
            .enumerate()
            .map(|(m, t)| t * l.powi(m as i32))
            .sum();
        spectrum.row_mut(i).iter_mut().for_each(|v| *v *= p);
    }
    finish_layer(u.matmul(&spectrum)?, layer.bias)
}

/// Column sums over nodes.
pub fn sum_pool(h: &Matrix) -> Vec<f64> {
    h.column_sums()
}

#[derive(Debug, Clone)]
pub struct GraphExample {
    pub id: String,
    pub label: EmotionLabel,
    pub graph: TextGraph,
}

/// Builds graphs for the given utterances. Transcripts with no tokens are
/// skipped with a warning.
pub fn build_examples<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    table: &EmbeddingTable,
) -> Result<Vec<GraphExample>> {
    let utts: Vec<&Utterance> = utterances.into_iter().collect();
    let built: Vec<Result<Option<GraphExample>>> = utts
        .par_iter()
        .map(|u| {
            if crate::textgraph::tokenize(&u.transcript).is_empty() {
                log::warn!("skipping {}: transcript has no words", u.id);
                return Ok(None);
            }
            let graph = sentence_graph(&u.transcript, table)?;
            Ok(Some(GraphExample {
                id: u.id.clone(),
                label: u.label,
                graph,
            }))
        })
        .collect();
    built.into_iter().filter_map(Result::transpose).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnTrainConfig {
    pub dims: GcnDims,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GcnTrainConfig {
    fn default() -> Self {
        Self {
            dims: GcnDims::default(),
            max_epochs: 45,
            patience: 10,
            learning_rate: 0.005,
            batch_size: 16,
            seed: 7,
        }
    }
}

impl GcnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "max_epochs, patience and batch_size must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GcnRun {
    /// Parameters from the best epoch.
    pub model: GcnModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Raw logits for the test examples.
    pub scores: ScoreTable,
}

/// Fraction of examples whose argmax logit matches the label.
pub fn accuracy(model: &GcnModel, examples: &[GraphExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("accuracy over zero examples".into()));
    }
    let hits: Vec<Result<bool>> = examples
        .par_iter()
        .map(|e| Ok(argmax(&model.logits(&e.graph)?) == Some(e.label.index())))
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Raw-logit score table for `examples`.
pub fn score(model: &GcnModel, examples: &[GraphExample]) -> Result<ScoreTable> {
    let rows: Vec<Result<ScoreRow>> = examples
        .par_iter()
        .map(|e| {
            Ok(ScoreRow {
                id: e.id.clone(),
                label: e.label,
                scores: model.logits(&e.graph)?,
            })
        })
        .collect();
    ScoreTable::new(ScoreKind::Raw, rows.into_iter().collect::<Result<_>>()?)
}

/// Adam over shuffled mini-batches with summed losses; early stopping on
/// test accuracy keeps the best epoch's parameters.
pub fn train_gcn(
    train: &[GraphExample],
    test: &[GraphExample],
    cfg: &GcnTrainConfig,
) -> Result<GcnRun> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "gcn training needs train and test examples ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    if let Some(e) = train
        .iter()
        .chain(test)
        .find(|e| e.graph.features.cols() != cfg.dims.input)
    {
        return Err(Error::shape(
            "gcn training",
            format!(
                "example {} has {}-dim features, model expects {}",
                e.id,
                e.graph.features.cols(),
                cfg.dims.input
            ),
        ));
    }
    let mut model = GcnModel::new(cfg.dims, cfg.seed);
    let n_params = model.num_params();
    let mut flat = model.params.flatten();
    let mut adam = AdamState::new(n_params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_6c4e);
    let mut stopper = EarlyStopping::new(cfg.patience)?;
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&GraphExample> = batch.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch_gradient(&items, n_params, |e| {
                model.loss_and_grad(&e.graph, e.label.index())
            })?;
            adam_step(&mut flat, &grad, &mut adam)?;
            model.params.assign_flat(&flat)?;
            epoch_loss += loss;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            train_acc: accuracy(&model, train)?,
            test_acc: accuracy(&model, test)?,
        };
        log::info!(
            "gcn epoch {epoch}: loss {:.4} train {:.3} test {:.3}",
            rec.train_loss,
            rec.train_acc,
            rec.test_acc
        );
        history.push(rec);
        match stopper.observe(rec.test_acc) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Wait { .. } => {}
            StopDecision::Stop => {
                log::info!(
                    "early stop after epoch {epoch}; best epoch {}",
                    stopper.best_epoch()
                );
                break;
            }
        }
    }
    let scores = score(&best, test)?;
    Ok(GcnRun {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
        scores,
    })
}
