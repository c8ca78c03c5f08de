//! Parametric neighbor embedding that blends a graph Laplacian penalty with
//! a t-SNE style divergence whose input affinities are sharpened along known
//! structure (kNN neighbors, shared labels or shared image regions) by a
//! compression factor.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the common `f64` and `f32` instantiations.

pub mod affinity;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod network;
pub mod objective;
pub mod scalar;
pub mod segmentation;

pub use affinity::{
    apply_floor, calibrate_sigma, compress, conditional_p, conditional_q, pairwise_sq_distances, student_t_kernel,
    AffinityRow, AffinityRows, SigmaCalibration, PERPLEXITY_TOL, PROB_FLOOR,
};
pub use data::{
    load_cube, load_tabular, make_blobs, make_quadrant_cube, make_swiss_roll, read_cube, read_tabular,
    stratified_split, write_cube, write_tabular, CubeDtype, DataMatrix, Grid, HyperCubeHeader, Split,
};
pub use error::{Error, Result};
pub use eval::{
    cohen_kappa, evaluate, evaluate_split, knn_classify_accuracy, linear_svm_train, pca_project, EvalReport,
    LinearSvm, Pca, SplitDescriptor, SvmConfig,
};
pub use graph::{
    knn_adjacency, knn_adjacency_rows, label_adjacency, laplacian_gradient, laplacian_quadratic, region_adjacency,
    AdjacencyMode, SparseAdjacency,
};
pub use network::{Activation, Adam, AdamConfig, Architecture, Gradients, LayerSpec, MlpModel};
pub use objective::{
    batch_loss_and_grad, embedding_loss_and_grad, kl_forward, kl_reverse, train, train_observed, BatchEvent,
    BatchProblem, EmbedMode, EmbeddingResult, EpochLoss, KlDirection, TrainConfig, TrainObserver,
};
pub use scalar::Scalar;
pub use segmentation::{load_region_map, merge_regions, save_region_map, slic, Image, RegionMap};

pub type Data = DataMatrix<f64>;
pub type Model = MlpModel<f64>;
pub type Affinities = AffinityRows<f64>;
pub type Embedding = EmbeddingResult<f64>;
pub type ImageF64 = Image<f64>;

pub type DataF32 = DataMatrix<f32>;
pub type ModelF32 = MlpModel<f32>;
pub type AffinitiesF32 = AffinityRows<f32>;
pub type EmbeddingF32 = EmbeddingResult<f32>;
pub type ImageF32 = Image<f32>;
