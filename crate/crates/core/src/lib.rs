pub mod dataio;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod mask;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod postproc;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::SegmentationMask;
pub use optim::{make_state, HyperOverrides, OptimizerState, SolverKind};
pub use models::{build_model, BackboneSpec, ModelGraph, Variant};
pub use tensor::{Gradients, Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/models.md")]
    struct Models;
    #[doc = include_str!("../../../book/src/solvers.md")]
    struct Solvers;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/postproc.md")]
    struct Postproc;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    struct Pipeline;
}
