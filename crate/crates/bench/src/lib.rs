//! Shared fixtures for the criterion benchmarks in `benches/`.

use volterra_ldp::{KernelSpec, ModelSpec, ScalarFunction};

/// Rough model used throughout the benchmarks: RL(0.3) kernel, linear
/// volatility growth, negative correlation.
pub fn rough_model() -> ModelSpec {
    ModelSpec::new(
        ScalarFunction::Constant { c: 0.0 },
        ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 },
        -0.5,
        0.0,
        1.0,
        KernelSpec::riemann_liouville(0.3, 1.0).expect("valid kernel"),
    )
    .expect("valid model")
}
