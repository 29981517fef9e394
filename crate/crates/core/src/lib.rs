//! Search for functionally equivalent parameters of small ReLU networks,
//! and analysis of the sets they form.
//!
//! The pipeline: [`sgd_search`] finds parameter vectors that almost
//! reproduce a reference network on a sample set, [`gram_schmidt`] spans a
//! plane through them, [`evaluate_grid`] scores a regular grid on that
//! plane, [`epsilon_filter`] and [`connected_components`] describe the
//! low-loss region, and [`naive_binning`] / [`anchor_binning`] group models
//! by function distance. [`pca_fit`] projects point sets for plotting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` and `*F32` aliases below name the usual instantiations.

pub mod artifact;
pub mod binning;
pub mod error;
pub mod hyperplane;
pub mod model;
pub mod reduce;
pub mod scalar;
pub mod search;
pub mod symmetry;
pub mod topology;

pub use binning::{
    anchor_binning, anchor_binning_traced, classify_against_targets, loss_prefilter, naive_binning, AnchorTable, Bin,
    BinSet, PrefilterVerdict, PrunedPairs, Target,
};
pub use error::{Error, Result};
pub use hyperplane::{
    build_grid, embed, epsilon_filter, evaluate_grid, gram_schmidt, EpsilonSet, GridEvaluation, GridSpec, Hyperplane,
    DROP_TOLERANCE, MAX_GRID_POINTS,
};
pub use model::{
    aux_loss, aux_loss_grad, forward, function_distance, outputs_on, Activation, LayerOrdering, LayerWeights,
    ModelArch, Objective, ParamVector, SampleSet, SampleSpec,
};
pub use reduce::{pca_fit, project, Projection};
pub use scalar::Scalar;
pub use search::{
    collect_independent, select_independent, sgd_search, sgd_search_from, Found, Rejected, SearchConfig, SearchResult,
};
pub use symmetry::{apply_transform, random_equivalent, random_transform, SymmetryTransform, TransformKind};
pub use topology::{connected_components, locate_markers, Adjacency, Component, ComponentReport, MarkerLocation};

pub type ParamVectorF64 = ParamVector<f64>;
pub type ParamVectorF32 = ParamVector<f32>;
pub type SampleSetF64 = SampleSet<f64>;
pub type SampleSetF32 = SampleSet<f32>;
pub type HyperplaneF64 = Hyperplane<f64>;
pub type HyperplaneF32 = Hyperplane<f32>;
pub type GridEvaluationF64 = GridEvaluation<f64>;
pub type GridEvaluationF32 = GridEvaluation<f32>;
pub type SearchResultF64 = SearchResult<f64>;
pub type BinSetF64 = BinSet<f64>;
pub type BinSetF32 = BinSet<f32>;
pub type ComponentReportF64 = ComponentReport<f64>;
pub type ProjectionF64 = Projection<f64>;
pub type ProjectionF32 = Projection<f32>;
