//! Mini-batch losses and the training loop.
//!
//! Per batch the loss is
//!
//! ```text
//! L = (1/m) · YᵀLY + (λ/m) · KL
//! ```
//!
//! where the KL term compares compressed input affinities `p̃` with embedding
//! affinities `q`. Visualization uses `KL(p̃ ‖ q)`; the clustering modes
//! (labelled and region) use `KL(q ‖ p̃)`, which punishes embedding mass
//! placed where `p̃` is tiny.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{compress, conditional_p, conditional_q, student_t_kernel, AffinityRows};
use crate::data::DataMatrix;
use crate::error::{param, shape, Error, Result};
use crate::graph::{
    knn_adjacency_rows, label_adjacency, laplacian_gradient, laplacian_quadratic, region_adjacency, AdjacencyMode,
    SparseAdjacency,
};
use crate::network::{Adam, AdamConfig, Gradients, MlpModel};
use crate::scalar::Scalar;
use crate::segmentation::RegionMap;

/// Batches smaller than this are dropped.
pub const MIN_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    #[serde(rename = "vis", alias = "visualization")]
    Visualization,
    Labelled,
    Region,
}

impl EmbedMode {
    pub fn kl_direction(self) -> KlDirection {
        match self {
            EmbedMode::Visualization => KlDirection::Forward,
            EmbedMode::Labelled | EmbedMode::Region => KlDirection::Reverse,
        }
    }

    pub fn adjacency_mode(self) -> AdjacencyMode {
        match self {
            EmbedMode::Visualization => AdjacencyMode::Knn,
            EmbedMode::Labelled => AdjacencyMode::Label,
            EmbedMode::Region => AdjacencyMode::Region,
        }
    }
}

impl std::str::FromStr for EmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vis" | "visualization" => Ok(EmbedMode::Visualization),
            "labelled" | "labeled" => Ok(EmbedMode::Labelled),
            "region" => Ok(EmbedMode::Region),
            other => Err(param(format!("unknown mode `{other}` (expected vis, labelled or region)"))),
        }
    }
}

/// Which way the KL divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlDirection {
    /// `Σ p̃ log(p̃/q)`
    Forward,
    /// `Σ q log(q/p̃)`
    Reverse,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: EmbedMode,
    pub perplexity: f64,
    pub cf: f64,
    pub lambda: f64,
    /// Neighbors per sample for the kNN graph (visualization mode).
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
}

impl TrainConfig {
    /// Defaults: visualization uses a mild compression factor of 5 with
    /// k = 10; the clustering modes use 200.
    pub fn for_mode(mode: EmbedMode) -> Self {
        let cf = match mode {
            EmbedMode::Visualization => 5.0,
            EmbedMode::Labelled | EmbedMode::Region => 200.0,
        };
        Self {
            mode,
            perplexity: 30.0,
            cf,
            lambda: 1.0,
            k: 10,
            batch_size: 256,
            epochs: 50,
            seed: 0,
            adam: AdamConfig::default(),
            embedding_dim: 2,
            hidden: vec![256, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cf >= 1.0) {
            return Err(param("cf must be >= 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(param("lambda must be >= 0"));
        }
        if !(self.perplexity > 1.0) {
            return Err(param("perplexity must exceed 1"));
        }
        if self.batch_size < MIN_BATCH {
            return Err(param(format!("batch_size must be at least {MIN_BATCH}")));
        }
        if self.embedding_dim < 1 {
            return Err(param("embedding dimension must be at least 1"));
        }
        if self.mode == EmbedMode::Visualization && self.k < 1 {
            return Err(param("k must be at least 1"));
        }
        if !(self.adam.lr >= 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(param("invalid optimizer settings"));
        }
        Ok(())
    }
}

/// Per-batch loss split into its two terms (both already divided by `m`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub laplacian: T,
    pub kl: T,
    pub total: T,
}

/// Epoch means of the batch loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub laplacian: f64,
    pub kl: f64,
    pub total: f64,
}

fn kl<T: Scalar>(a: &AffinityRows<T>, b: &AffinityRows<T>) -> Result<T> {
    if a.m() != b.m() {
        return Err(shape("affinity batches differ in size"));
    }
    let mut total = T::zero();
    for ((i, j), &pa) in a.probs().indexed_iter() {
        if i == j || pa <= T::zero() {
            continue;
        }
        total += pa * (pa / b.probs()[[i, j]]).ln();
    }
    Ok(total.max(T::zero()))
}

/// `Σ_i Σ_{j≠i} p̃_{j|i} log(p̃_{j|i} / q_{j|i})`.
pub fn kl_forward<T: Scalar>(p_tilde: &AffinityRows<T>, q: &AffinityRows<T>) -> Result<T> {
    kl(p_tilde, q)
}

/// `Σ_i Σ_{j≠i} q_{j|i} log(q_{j|i} / p̃_{j|i})`.
pub fn kl_reverse<T: Scalar>(q: &AffinityRows<T>, p_tilde: &AffinityRows<T>) -> Result<T> {
    kl(q, p_tilde)
}

/// Loss and `dL/dY` for a fixed embedding batch.
///
/// The KL gradient flows through the Student-t kernel including the row
/// normalization: with `g = ∂KL/∂q`, `ḡ_i = Σ_j g_ij q_ij` and kernel weights
/// `w_ij`, each pair contributes `−2 w_ij² (g_ij − ḡ_i) / Z_i · (y_i − y_j)`
/// to `y_i` and the negation to `y_j`. The probability floor is treated as
/// inactive, so the gradient is exact whenever no `q` entry sits on it.
pub fn embedding_loss_and_grad<T: Scalar>(
    y: ArrayView2<T>,
    p_tilde: &AffinityRows<T>,
    adj: &SparseAdjacency,
    lambda: T,
    direction: KlDirection,
) -> Result<(LossTerms<T>, Array2<T>)> {
    let m = y.nrows();
    if p_tilde.m() != m || adj.n() != m {
        return Err(shape(format!(
            "batch of {m} embeddings with {} affinity rows and {} graph nodes",
            p_tilde.m(),
            adj.n()
        )));
    }
    let mf = T::from_count(m);
    let laplacian = laplacian_quadratic(adj, y)? / mf;
    let mut grad = laplacian_gradient(adj, y)? / mf;

    let q = conditional_q(y)?;
    let kl_value = match direction {
        KlDirection::Forward => kl_forward(p_tilde, &q)?,
        KlDirection::Reverse => kl_reverse(&q, p_tilde)?,
    } / mf;

    if lambda > T::zero() {
        let w = student_t_kernel(y);
        let z = w.sum_axis(Axis(1));
        let (qp, pp) = (q.probs(), p_tilde.probs());
        let scale = lambda / mf;
        let two = T::lit(2.0);
        let mut g = vec![T::zero(); m];
        for i in 0..m {
            for j in 0..m {
                g[j] = if i == j {
                    T::zero()
                } else {
                    match direction {
                        KlDirection::Forward => -pp[[i, j]] / qp[[i, j]],
                        KlDirection::Reverse => (qp[[i, j]] / pp[[i, j]]).ln() + T::one(),
                    }
                };
            }
            let gbar: T = (0..m).filter(|&j| j != i).map(|j| g[j] * qp[[i, j]]).sum();
            for j in (0..m).filter(|&j| j != i) {
                let wij = w[[i, j]];
                let coef = scale * (-two * wij * wij) * (g[j] - gbar) / z[i];
                for c in 0..y.ncols() {
                    let diff = coef * (y[[i, c]] - y[[j, c]]);
                    grad[[i, c]] += diff;
                    grad[[j, c]] -= diff;
                }
            }
        }
    }
    let terms = LossTerms {
        laplacian,
        kl: kl_value,
        total: laplacian + lambda * kl_value,
    };
    Ok((terms, grad))
}

/// Everything needed to evaluate the loss of one batch for any weights.
#[derive(Debug, Clone)]
pub struct BatchProblem<T> {
    pub x: Array2<T>,
    pub p_tilde: AffinityRows<T>,
    pub adj: SparseAdjacency,
    pub lambda: T,
    pub direction: KlDirection,
}

impl<T: Scalar> BatchProblem<T> {
    /// Calibrates `p`, applies the compression factor against `adj`.
    pub fn new(x: Array2<T>, adj: SparseAdjacency, config: &TrainConfig) -> Result<Self> {
        let p = conditional_p(x.view(), T::lit(config.perplexity))?;
        let p_tilde = compress(&p, &adj, T::lit(config.cf))?;
        Ok(Self {
            x,
            p_tilde,
            adj,
            lambda: T::lit(config.lambda),
            direction: config.mode.kl_direction(),
        })
    }

    /// Train-mode forward, loss, `dL/dY` and parameter gradients.
    pub fn loss_and_grad(&self, model: &mut MlpModel<T>) -> Result<BatchOutcome<T>> {
        let (y, cache) = model.forward_train(self.x.view())?;
        let (terms, grad_y) = embedding_loss_and_grad(y.view(), &self.p_tilde, &self.adj, self.lambda, self.direction)?;
        let grads = model.backward(&cache, grad_y.view())?;
        Ok(BatchOutcome {
            terms,
            y,
            grad_y,
            grads,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome<T> {
    pub terms: LossTerms<T>,
    pub y: Array2<T>,
    pub grad_y: Array2<T>,
    pub grads: Gradients<T>,
}

/// One-shot form of [`BatchProblem::loss_and_grad`].
pub fn batch_loss_and_grad<T: Scalar>(
    model: &mut MlpModel<T>,
    x: ArrayView2<T>,
    adj: &SparseAdjacency,
    config: &TrainConfig,
) -> Result<BatchOutcome<T>> {
    BatchProblem::new(x.to_owned(), adj.clone(), config)?.loss_and_grad(model)
}

/// Observation point for each optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct BatchEvent {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    pub adjacency: AdjacencyMode,
    pub direction: KlDirection,
    pub laplacian: f64,
    pub kl: f64,
}

pub trait TrainObserver {
    fn on_batch(&mut self, _event: &BatchEvent) {}
    fn on_epoch(&mut self, _loss: &EpochLoss) {}
}

impl TrainObserver for () {}

/// Output of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult<T> {
    /// Inference-mode projection of every sample, labelled or not.
    pub embedding: Array2<T>,
    pub history: Vec<EpochLoss>,
    pub config: TrainConfig,
}

/// Training indices and their adjacency (in training-subset numbering).
fn training_graph<T: Scalar>(
    data: &DataMatrix<T>,
    config: &TrainConfig,
    regions: Option<&RegionMap>,
) -> Result<(Vec<usize>, SparseAdjacency)> {
    match config.mode {
        EmbedMode::Visualization => {
            let idx: Vec<usize> = (0..data.n()).collect();
            let adj = knn_adjacency_rows(data.values().view(), config.k)?;
            Ok((idx, adj))
        }
        EmbedMode::Labelled => {
            let labels = data
                .labels()
                .ok_or_else(|| Error::Mode("labelled mode needs labels".into()))?;
            let idx = data.labelled_indices();
            if idx.is_empty() {
                return Err(Error::Mode("labelled mode needs at least one labelled sample".into()));
            }
            let sub: Vec<Option<usize>> = idx.iter().map(|&i| labels[i]).collect();
            Ok((idx, label_adjacency(&sub)?))
        }
        EmbedMode::Region => {
            let regions = regions.ok_or_else(|| Error::Mode("region mode needs a region map".into()))?;
            let adj = region_adjacency(regions, data.n())?;
            Ok(((0..data.n()).collect(), adj))
        }
    }
}

/// Mini-batch training. Each epoch shuffles the training samples, drops a
/// tail batch smaller than [`MIN_BATCH`], and for every batch recalibrates
/// `p̃`, back-propagates the loss and takes one Adam step.
pub fn train<T: Scalar>(
    data: &DataMatrix<T>,
    config: &TrainConfig,
    regions: Option<&RegionMap>,
) -> Result<(MlpModel<T>, EmbeddingResult<T>)> {
    train_observed(data, config, regions, &mut ())
}

pub fn train_observed<T: Scalar>(
    data: &DataMatrix<T>,
    config: &TrainConfig,
    regions: Option<&RegionMap>,
    observer: &mut dyn TrainObserver,
) -> Result<(MlpModel<T>, EmbeddingResult<T>)> {
    config.validate()?;
    let (train_idx, adj) = training_graph(data, config, regions)?;
    if train_idx.len() < MIN_BATCH {
        return Err(param(format!(
            "{} training samples; at least {MIN_BATCH} are needed",
            train_idx.len()
        )));
    }
    let mut model = MlpModel::init(data.d(), &config.hidden, config.embedding_dim, config.seed)?;
    let mut adam = Adam::new(config.adam, model.parameter_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut lap, mut klsum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < MIN_BATCH {
                continue;
            }
            let rows: Vec<usize> = chunk.iter().map(|&i| train_idx[i]).collect();
            let x = data.values().select(Axis(0), &rows);
            let problem = BatchProblem::new(x, adj.restrict_to_batch(chunk)?, config)?;
            let out = problem.loss_and_grad(&mut model)?;
            if !out.terms.total.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam.step(&mut model, &out.grads)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            let event = BatchEvent {
                epoch,
                batch: b,
                size: chunk.len(),
                adjacency: problem.adj.mode(),
                direction: problem.direction,
                laplacian: out.terms.laplacian.as_f64(),
                kl: out.terms.kl.as_f64(),
            };
            observer.on_batch(&event);
            lap += event.laplacian;
            klsum += event.kl;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let loss = EpochLoss {
            epoch,
            laplacian: lap / nb,
            kl: klsum / nb,
            total: (lap + config.lambda * klsum) / nb,
        };
        observer.on_epoch(&loss);
        history.push(loss);
    }

    let embedding = model.predict(data.values().view())?;
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("projection produced non-finite values".into()));
    }
    Ok((
        model,
        EmbeddingResult {
            embedding,
            history,
            config: config.clone(),
        },
    ))
}
