//! Scalar summaries of per-path evaluation results.

use super::PathState;

/// Total probability mass and target-variable moments of a set of final
/// path states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSummary {
    /// Total unnormalized probability over all paths.
    pub total_prob: f64,
    pub mean: f64,
    pub std: f64,
}

/// Summarizes `var` over final path states, in plain `f64`.
///
/// When every path has vanished (total probability zero) the distributions
/// are still summarized — uniformly over paths — because the
/// zero-probability convention keeps them unchanged and they remain the
/// meaningful reference output.
pub fn soga_posterior_summary(states: &[PathState], var: usize) -> TargetSummary {
    let masses: Vec<f64> = states
        .iter()
        .map(|s| {
            let lw = s.log_weight.value();
            if lw == f64::NEG_INFINITY {
                0.0
            } else {
                lw.exp()
            }
        })
        .collect();
    let total: f64 = masses.iter().sum();
    let path_w: Vec<f64> = if total > 0.0 {
        masses.iter().map(|m| m / total).collect()
    } else {
        vec![1.0 / states.len() as f64; states.len()]
    };
    let mut mean = 0.0;
    let mut second = 0.0;
    for (pw, st) in path_w.iter().zip(states) {
        for (w, g) in st.dist.weights.iter().zip(&st.dist.comps) {
            let w = pw * w.value();
            let m = g.mean[var].value();
            mean += w * m;
            second += w * (g.cov.get(var, var).value() + m * m);
        }
    }
    let var_v = (second - mean * mean).max(0.0);
    TargetSummary {
        total_prob: total,
        mean,
        std: var_v.sqrt(),
    }
}
