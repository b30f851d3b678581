//! Analytic cycle model of the hardware design variants and FLOP accounting.

mod cost;
mod flops;

use serde::Serialize;

pub use cost::{
    builtin_variants, estimate_cycles, ii_speedup, matches_measured_ranking, strictly_decreasing, CostParams, Estimate,
    ModelError, StageEstimate, StageSpec, VariantSpec, INPUT_VALUES, OUTPUT_VALUES, THREADED_RESULT_WORKERS,
};
pub use flops::{count_flops, gflops, FlopReport, FlopStage, KERNEL_FLOPS, KERNEL_FLOPS_TOTAL};

/// Estimates for a set of variants, as emitted by the `model` command.
#[derive(Clone, Debug, Serialize)]
pub struct ModelReport {
    pub num_elements: u64,
    pub params: CostParams,
    pub variants: Vec<Estimate>,
    /// Built-in ladder predicted strictly faster at every step.
    pub ladder_ordered: bool,
}

/// Estimates the built-in ladder followed by `extra` variants.
pub fn model_report(
    params: &CostParams,
    num_gauss: u64,
    num_elements: u64,
    extra: &[VariantSpec],
) -> Result<ModelReport, ModelError> {
    let ladder = builtin_variants(params, num_gauss)
        .iter()
        .map(|v| estimate_cycles(v, num_elements, params))
        .collect::<Result<Vec<_>, _>>()?;
    let ladder_ordered = strictly_decreasing(&ladder) && matches_measured_ranking(&ladder);
    let mut variants = ladder;
    for v in extra {
        variants.push(estimate_cycles(v, num_elements, params)?);
    }
    Ok(ModelReport { num_elements, params: params.clone(), variants, ladder_ordered })
}
