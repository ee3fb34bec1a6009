//! Dense tensors, reverse-mode autodiff, layers, optimizer and schedules.

pub mod checkpoint;
mod graph;
pub mod nn;
pub mod optim;
mod params;
pub mod schedule;
#[allow(clippy::module_inception)]
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig, StepOutcome};
pub use params::{Init, Param, ParamSpec, ParamStore};
pub use schedule::{LrSchedule, ScheduleKind};
pub use tensor::Tensor;

/// Differentiable primitives recorded by [`Graph`], each with a backward rule.
/// Composite layers (convolution, attention, the norms with affine terms) are
/// built from these in [`nn`].
pub fn op_catalog() -> &'static [&'static str] {
    &[
        "add",
        "sub",
        "mul",
        "scale",
        "add_scalar",
        "add_row",
        "mul_row",
        "mul_col",
        "matmul",
        "transpose",
        "gelu",
        "relu",
        "sqrt",
        "square",
        "ln",
        "softmax",
        "normalize_rows",
        "normalize_cols",
        "group_normalize",
        "mean_rows",
        "masked_mean_rows",
        "sum",
        "gather",
        "concat_cols",
        "concat_rows",
        "slice_cols",
        "im2col",
    ]
}
