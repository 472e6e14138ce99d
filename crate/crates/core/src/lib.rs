//! Vectorized genetic programming.
//!
//! Programs are expression trees evaluated over an entire grid of fitness
//! cases at once: every operator is applied to whole tensors rather than
//! point by point. Repeated subtrees are served from a byte-bounded cache,
//! and a per-point interpreter is kept as a reference baseline.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod eval;
pub mod expr;
mod math;
pub mod persistence;
pub mod primitives;
pub mod tensor;

pub use bench::{pagie_target, Approach, BenchPlan, BenchResult};
pub use engine::{Engine, EngineError, GenerationReport, Objective, RunConfig, RunObserver, RunState, StopReason, TargetSpec};
pub use eval::{EngineKind, EvalCache, EvalError, EvalStats, Evaluator};
pub use expr::{parse, Individual, Method, ParseError, Tree};
pub use persistence::{export_image, load_state, save_state, PersistError, RunFolder, RunLogger};
pub use primitives::{Arity, Builtin, Kind, Primitive, PrimitiveError, PrimitiveSet};
pub use tensor::{constant_tensor, make_coordinate_tensors, map_elementwise, rmse, DomainSpec, Tensor, TensorError};
