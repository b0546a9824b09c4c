//! Loss construction and gradient descent over program parameters.
//!
//! Two loss families: negative log-likelihood of a dataset under the
//! posterior marginal of the observed variables, and reachability
//! objectives built from posterior marginal cdf masses and path
//! probabilities. Each optimizer step re-evaluates the program on a fresh
//! tape, extracts the gradient by one reverse sweep, applies a
//! bias-corrected Adam update and projects parameters back into their
//! interval domains (mixture-weight parameters onto the simplex).

mod loss;

pub use loss::{nll_loss, parse_reach_expr, reachability_loss, Dataset, LossSpec, ReachExpr};

use std::collections::BTreeMap;
use std::time::Instant;

use thiserror::Error;

use crate::cfg::Cfg;
use crate::diff::{self, gradient, DiffError, ParamStore};
use crate::semantics::{eval_program, SemanticsError, SmoothConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("loss is not finite at step {step}{detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("gradient of `{param}` is not finite at step {step}")]
    NonFiniteGradient { step: usize, param: String },
    #[error("evaluation failed at step {step}: {source}")]
    Eval {
        step: usize,
        #[source]
        source: SemanticsError,
    },
    #[error("bad loss specification: {0}")]
    BadLossSpec(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Margin kept from finite domain bounds so open intervals stay open.
const DOMAIN_MARGIN: f64 = 1e-6;

/// Clips every parameter into its domain (shrunk by a small margin) and
/// renormalizes parameterized mixture-weight vectors onto the simplex.
pub fn project_params(params: &mut ParamStore) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let dom = params.domain(name).expect("known parameter");
        let mut v = params.value(name).expect("known parameter");
        let lo = if dom.lo.is_finite() { dom.lo + DOMAIN_MARGIN } else { dom.lo };
        let hi = if dom.hi.is_finite() { dom.hi - DOMAIN_MARGIN } else { dom.hi };
        if lo > hi {
            v = 0.5 * (dom.lo + dom.hi);
        } else {
            v = v.clamp(lo, hi);
        }
        params.set_value(name, v);
    }
    let groups: Vec<(Vec<String>, f64)> = params
        .simplex_groups()
        .iter()
        .map(|g| (g.names.clone(), g.literal_mass))
        .collect();
    for (members, literal_mass) in groups {
        let mut sum = 0.0;
        for m in &members {
            let v = params.value(m).expect("known parameter").clamp(1e-6, 1.0);
            params.set_value(m, v);
            sum += v;
        }
        let target = 1.0 - literal_mass;
        if target > 0.0 && sum > 0.0 {
            let scale = target / sum;
            for m in &members {
                let v = params.value(m).expect("known parameter") * scale;
                params.set_value(m, v);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub tolerance: f64,
    pub patience: usize,
    /// Smoothing std used when evaluating the program each step.
    pub epsilon: f64,
    pub seed: u64,
    pub max_paths: usize,
}

impl OptimizerConfig {
    pub fn new(lr: f64, steps: usize, epsilon: f64) -> Self {
        assert!(lr > 0.0 && epsilon > 0.0);
        OptimizerConfig {
            lr,
            steps,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            tolerance: 1e-8,
            patience: 30,
            epsilon,
            seed: 0,
            max_paths: crate::cfg::DEFAULT_MAX_PATHS,
        }
    }
}

/// Bias-corrected first/second-moment stepper.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: BTreeMap<String, f64>,
    v: BTreeMap<String, f64>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update in place from the gradient map.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, f64>) {
        self.t += 1;
        let t = self.t as i32;
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let g = grads.get(&name).copied().unwrap_or(0.0);
            let m = self.m.entry(name.clone()).or_insert(0.0);
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let v = self.v.entry(name.clone()).or_insert(0.0);
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / (1.0 - self.beta1.powi(t));
            let v_hat = *v / (1.0 - self.beta2.powi(t));
            let cur = params.value(&name).expect("known parameter");
            params.set_value(&name, cur - self.lr * m_hat / (v_hat.sqrt() + self.eps));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub loss: f64,
    /// Parameter values after the update of this step.
    pub params: Vec<(String, f64)>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptTrace {
    pub steps: Vec<TraceStep>,
    /// True when early stopping fired (no improvement for `patience` steps).
    pub converged: bool,
}

/// Runs the optimization loop: evaluate, differentiate, update, project.
pub fn run_optimization(
    cfg: &Cfg,
    params: &mut ParamStore,
    spec: &LossSpec,
    ocfg: &OptimizerConfig,
    smooth: &SmoothConfig,
) -> Result<OptTrace, OptimError> {
    project_params(params);
    let mut adam = Adam::new(ocfg);
    let mut trace = OptTrace::default();
    let mut best = f64::INFINITY;
    let mut stall = 0usize;

    for step in 0..ocfg.steps {
        let t0 = Instant::now();
        diff::reset();
        let posterior = eval_program(cfg, params, smooth, ocfg.max_paths)
            .map_err(|source| OptimError::Eval { step, source })?;
        let loss = match spec {
            LossSpec::Nll(dataset) => nll_loss(&posterior, dataset)
                .map_err(|e| attach_step(e, step))?,
            LossSpec::Reach(expr) => reachability_loss(expr, &posterior)
                .map_err(|e| attach_step(e, step))?,
        };
        if !loss.value().is_finite() {
            return Err(OptimError::NonFiniteLoss { step, detail: String::new() });
        }
        let grads = gradient(loss, params)?;
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient { step, param: name.clone() });
            }
        }
        adam.step(params, &grads);
        project_params(params);
        trace.steps.push(TraceStep {
            loss: loss.value(),
            params: params.snapshot(),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        if loss.value() < best - ocfg.tolerance {
            best = loss.value();
            stall = 0;
        } else {
            stall += 1;
            if stall >= ocfg.patience {
                trace.converged = true;
                break;
            }
        }
    }
    diff::reset();
    Ok(trace)
}

fn attach_step(e: OptimError, step: usize) -> OptimError {
    match e {
        OptimError::NonFiniteLoss { detail, .. } => OptimError::NonFiniteLoss { step, detail },
        other => other,
    }
}

#[cfg(test)]
mod tests;
