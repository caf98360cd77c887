//! Differentiable numeric primitives.

pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod norm;
pub mod ops;
pub mod params;

pub use attention::{AttentionConfig, ATTENTION_EPS};
pub use conv::Conv1dSpec;
pub use gradcheck::{grad_check, GradCheckResult, DEFAULT_STEP};
pub use graph::{Backward, BackwardFn, Gradients, Graph, Mode, StatUpdate, Var};
pub use norm::{RunningStats, BN_EPS};
pub use params::{uniform_fan_in, ParamEntry, ParamKind, ParamRegistry};
