//! Bivariate gamma distribution and bivariate gamma mixture-of-experts
//! regression fitted by EM.

pub mod baseline;
pub mod bgdist;
pub mod config;
pub mod data;
pub mod em;
pub mod error;
pub mod metrics;
pub mod model_io;
pub mod moe;
pub mod quad;
pub mod select;
pub mod sim;
pub mod special;

pub use bgdist::{BGParams, ConditionalMoments, Moments};
pub use data::{Column, ColumnKind, Dataset, Design};
pub use error::{Error, ErrorCategory, Result};
pub use quad::{QuadratureConfig, QuadratureScheme};
pub use moe::{ExpertParams, FittedModel, GatingParams, ModelDesigns, ModelSpec, ModelType, NetworkKind, NetworkSpec};
pub use em::{EMConfig, EStepCache};
