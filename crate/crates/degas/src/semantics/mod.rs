//! Program evaluation under the smoothed differentiable semantics and the
//! moment-matched reference semantics.
//!
//! A path state is the triple `(log-weight, mixture, smoothed set)`. Node
//! evaluation composes the mixture algebra along control-flow paths; the
//! program posterior is the normalized mixture over all paths.
//!
//! In smoothed mode every degenerate construct gains a Gaussian perturbation
//! of standard deviation `epsilon`: constant and fresh-linear assignments
//! add `epsilon^2` to the target variance, zero-std mixture components are
//! widened to `epsilon`, and equality observations re-attach the observed
//! coordinate as `N(c, epsilon^2)`. Predicates over smoothed variables are
//! shifted by `delta` so conditioning never hits a measure-zero event. In
//! reference mode nothing is perturbed: zero-variance coordinates are kept
//! and test/observe on them resolves by point membership, with probability
//! zero events yielding a dead path and an unchanged distribution.

mod soga;

pub use soga::soga_posterior_summary;

use thiserror::Error;

use crate::cfg::{self, Cfg, CfgError, CfgNode, DetArg, NodeKind, Path, PredArg, RndArg};
use crate::diff::{log_sum_exp, DiffScalar, ParamStore};
use crate::frontend::CmpOp;
use crate::gmix::{
    affine_assign, condition_equal, mix_product, moment_match, product_assign,
    truncate_component, GaussMix, Gaussian, GmixError, SymMatrix,
};

/// Mixture-level conditioning probabilities below this threshold follow the
/// zero-probability convention of the reference semantics: the path weight
/// collapses and the distribution is left unchanged.
pub const MIN_BRANCH_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemanticsError {
    #[error("every path of the program vanished numerically")]
    AllPathsVanished,
    #[error(transparent)]
    Gmix(#[from] GmixError),
    #[error(transparent)]
    Cfg(#[from] CfgError),
}

/// How thresholds scale with the smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// `delta = sqrt(epsilon)`.
    Sqrt,
    /// `delta = epsilon^k`; consistency needs `0 < k < 1`.
    Pow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Degas,
    Soga,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothConfig {
    pub epsilon: f64,
    pub delta: DeltaRule,
    pub mode: Mode,
}

impl SmoothConfig {
    pub fn degas(epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        SmoothConfig {
            epsilon,
            delta: DeltaRule::Sqrt,
            mode: Mode::Degas,
        }
    }

    pub fn soga() -> Self {
        SmoothConfig {
            epsilon: 0.0,
            delta: DeltaRule::Sqrt,
            mode: Mode::Soga,
        }
    }

    pub fn with_delta(mut self, rule: DeltaRule) -> Self {
        self.delta = rule;
        self
    }

    pub fn delta_value(&self) -> f64 {
        match self.delta {
            DeltaRule::Sqrt => self.epsilon.sqrt(),
            DeltaRule::Pow(k) => self.epsilon.powf(k),
        }
    }
}

/// Variables whose exact distribution would be discrete, as a bitset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmoothedSet(u64);

impl SmoothedSet {
    pub fn empty() -> Self {
        SmoothedSet(0)
    }

    pub fn contains(self, var: usize) -> bool {
        self.0 & (1 << var) != 0
    }

    pub fn insert(&mut self, var: usize) {
        self.0 |= 1 << var;
    }

    pub fn remove(&mut self, var: usize) {
        self.0 &= !(1 << var);
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// The triple threaded through node evaluation.
#[derive(Debug, Clone)]
pub struct PathState {
    pub log_weight: DiffScalar,
    pub dist: GaussMix,
    pub smoothed: SmoothedSet,
}

impl PathState {
    fn initial(n_vars: usize) -> Self {
        PathState {
            log_weight: DiffScalar::constant(0.0),
            dist: GaussMix::standard(n_vars),
            smoothed: SmoothedSet::empty(),
        }
    }

    pub fn is_dead(&self) -> bool {
        self.log_weight.value() == f64::NEG_INFINITY
    }
}

/// A comparison predicate with resolved bound, as used for conditioning.
#[derive(Debug, Clone, Copy)]
pub enum SPred {
    True,
    False,
    Cmp {
        var: usize,
        op: CmpOp,
        bound: DiffScalar,
    },
    /// `lo < x_var < hi`; produced by smoothing an equality.
    Band {
        var: usize,
        lo: DiffScalar,
        hi: DiffScalar,
    },
}

fn resolve_pred(p: &PredArg, params: &ParamStore) -> SPred {
    match p {
        PredArg::True => SPred::True,
        PredArg::False => SPred::False,
        PredArg::Cmp { var, op, bound } => SPred::Cmp {
            var: *var,
            op: *op,
            bound: bound.resolve(params),
        },
    }
}

/// Threshold-shifting smoothing of a predicate over smoothed variables.
///
/// Strict and non-strict comparisons move apart by `delta`, and equality
/// becomes the open band of width `2 delta`. Predicates over variables
/// outside the smoothed set are returned unchanged.
pub fn smooth_predicate(pred: SPred, smoothed: SmoothedSet, delta: f64) -> SPred {
    let SPred::Cmp { var, op, bound } = pred else {
        return pred;
    };
    if !smoothed.contains(var) {
        return pred;
    }
    let d = DiffScalar::constant(delta);
    match op {
        CmpOp::Gt => SPred::Cmp { var, op: CmpOp::Gt, bound: bound + d },
        CmpOp::Ge => SPred::Cmp { var, op: CmpOp::Gt, bound: bound - d },
        CmpOp::Le => SPred::Cmp { var, op: CmpOp::Lt, bound: bound + d },
        CmpOp::Lt => SPred::Cmp { var, op: CmpOp::Lt, bound: bound - d },
        CmpOp::Eq => SPred::Band { var, lo: bound - d, hi: bound + d },
    }
}

fn negate(pred: SPred) -> SPred {
    match pred {
        SPred::True => SPred::False,
        SPred::False => SPred::True,
        SPred::Cmp { var, op, bound } => {
            let flipped = match op {
                CmpOp::Lt => CmpOp::Ge,
                CmpOp::Le => CmpOp::Gt,
                CmpOp::Ge => CmpOp::Lt,
                CmpOp::Gt => CmpOp::Le,
                CmpOp::Eq => unreachable!("equality cannot appear in a test guard"),
            };
            SPred::Cmp { var, op: flipped, bound }
        }
        SPred::Band { .. } => unreachable!("bands arise only from observes, which are not negated"),
    }
}

/// One-coordinate truncation event with bound strictness (strictness only
/// matters for point-membership on zero-variance coordinates).
enum TruncEvent {
    All,
    Nothing,
    Band {
        var: usize,
        lo: Option<(DiffScalar, bool)>,
        hi: Option<(DiffScalar, bool)>,
    },
}

fn to_event(pred: SPred) -> TruncEvent {
    match pred {
        SPred::True => TruncEvent::All,
        SPred::False => TruncEvent::Nothing,
        SPred::Cmp { var, op, bound } => match op {
            CmpOp::Lt => TruncEvent::Band { var, lo: None, hi: Some((bound, true)) },
            CmpOp::Le => TruncEvent::Band { var, lo: None, hi: Some((bound, false)) },
            CmpOp::Gt => TruncEvent::Band { var, lo: Some((bound, true)), hi: None },
            CmpOp::Ge => TruncEvent::Band { var, lo: Some((bound, false)), hi: None },
            CmpOp::Eq => unreachable!("unsmoothed equality is handled by the density branch"),
        },
        SPred::Band { var, lo, hi } => TruncEvent::Band {
            var,
            lo: Some((lo, true)),
            hi: Some((hi, true)),
        },
    }
}

/// Does the point `x` satisfy the band bounds? Used for zero-variance
/// coordinates in reference mode.
fn point_in_band(x: f64, lo: &Option<(DiffScalar, bool)>, hi: &Option<(DiffScalar, bool)>) -> bool {
    if let Some((b, strict)) = lo {
        let b = b.value();
        if *strict && !(x > b) || !*strict && !(x >= b) {
            return false;
        }
    }
    if let Some((b, strict)) = hi {
        let b = b.value();
        if *strict && !(x < b) || !*strict && !(x <= b) {
            return false;
        }
    }
    true
}

/// Applies a truncation event to every component and folds the component
/// probabilities into one mixture-level probability.
fn condition_mixture(
    mut state: PathState,
    event: &TruncEvent,
    mode: Mode,
) -> Result<PathState, SemanticsError> {
    let (var, lo, hi) = match event {
        TruncEvent::All => return Ok(state),
        TruncEvent::Nothing => {
            state.log_weight = DiffScalar::constant(f64::NEG_INFINITY);
            return Ok(state);
        }
        TruncEvent::Band { var, lo, hi } => (*var, lo, hi),
    };

    let mut total = DiffScalar::constant(0.0);
    let mut kept: Vec<(DiffScalar, Gaussian)> = Vec::with_capacity(state.dist.n_comps());
    for (w, g) in state.dist.weights.iter().zip(&state.dist.comps) {
        let res = truncate_component(g, var, lo.map(|(b, _)| b), hi.map(|(b, _)| b));
        match res {
            Ok((prob, matched)) => {
                let mass = *w * prob;
                total += mass;
                kept.push((mass, matched));
            }
            Err(GmixError::NumericallyVanishing) => {}
            Err(GmixError::DegenerateVariance { .. }) if mode == Mode::Soga => {
                // Zero-variance coordinate: the event resolves by membership.
                if point_in_band(g.mean[var].value(), lo, hi) {
                    total += *w;
                    kept.push((*w, g.clone()));
                }
            }
            Err(e) => return Err(e.into()),
        }
    }

    let threshold = match mode {
        Mode::Degas => MIN_BRANCH_PROB,
        Mode::Soga => 0.0,
    };
    if kept.is_empty() || total.value() <= threshold {
        // Zero-probability conditioning keeps the distribution unchanged,
        // as in the reference semantics.
        let lw = if total.value() > 0.0 {
            total.value().ln()
        } else {
            f64::NEG_INFINITY
        };
        state.log_weight += DiffScalar::constant(lw);
        return Ok(state);
    }

    state.log_weight += total.ln();
    state.dist = GaussMix {
        weights: kept.iter().map(|(m, _)| *m / total).collect(),
        comps: kept.into_iter().map(|(_, g)| g).collect(),
    };
    Ok(state)
}

/// Equality observation through the marginal density, for a coordinate that
/// is not smoothed: weight by the density of `x_var` at `c`, condition the
/// rest, re-attach `var` as `N(c, resample_std^2)`.
fn condition_equality(
    mut state: PathState,
    var: usize,
    c: DiffScalar,
    resample_std: DiffScalar,
    mode: Mode,
) -> Result<PathState, SemanticsError> {
    let mut total = DiffScalar::constant(0.0);
    let mut kept: Vec<(DiffScalar, Gaussian)> = Vec::with_capacity(state.dist.n_comps());
    for (w, g) in state.dist.weights.iter().zip(&state.dist.comps) {
        match condition_equal(g, var, c, resample_std) {
            Ok((density, cond)) => {
                let mass = *w * density;
                total += mass;
                kept.push((mass, cond));
            }
            Err(GmixError::DegenerateVariance { .. }) if mode == Mode::Soga => {
                // Point mass: the component survives iff it sits on c.
                if (g.mean[var].value() - c.value()).abs() <= 1e-12 {
                    total += *w;
                    kept.push((*w, g.clone()));
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    let threshold = match mode {
        Mode::Degas => MIN_BRANCH_PROB,
        Mode::Soga => 0.0,
    };
    if kept.is_empty() || total.value() <= threshold {
        let lw = if total.value() > 0.0 {
            total.value().ln()
        } else {
            f64::NEG_INFINITY
        };
        state.log_weight += DiffScalar::constant(lw);
        return Ok(state);
    }
    state.log_weight += total.ln();
    state.dist = GaussMix {
        weights: kept.iter().map(|(m, _)| *m / total).collect(),
        comps: kept.into_iter().map(|(_, g)| g).collect(),
    };
    Ok(state)
}

fn apply_det(
    mut state: PathState,
    arg: &DetArg,
    config: &SmoothConfig,
    params: &ParamStore,
) -> PathState {
    match arg {
        DetArg::Skip => state,
        DetArg::Linear { target, terms, constant } => {
            let n = state.dist.dim();
            let mut coeffs = vec![DiffScalar::constant(0.0); n];
            for (c, v) in terms {
                coeffs[*v] += c.resolve(params);
            }
            let constant = constant.resolve(params);
            let xi_in_e = terms.iter().any(|(_, v)| v == target);
            let is_const = terms.is_empty();
            let noise = match config.mode {
                Mode::Degas if is_const || !xi_in_e => {
                    Some(DiffScalar::constant(config.epsilon))
                }
                _ => None,
            };
            state.dist = affine_assign(&state.dist, *target, &coeffs, constant, noise);
            let all_smoothed = terms.iter().all(|(_, v)| state.smoothed.contains(*v));
            if all_smoothed {
                state.smoothed.insert(*target);
            } else {
                state.smoothed.remove(*target);
            }
            state
        }
        DetArg::Product { target, a, b } => {
            state.dist = product_assign(&state.dist, *target, *a, *b);
            if state.smoothed.contains(*a) && state.smoothed.contains(*b) {
                state.smoothed.insert(*target);
            } else {
                state.smoothed.remove(*target);
            }
            state
        }
    }
}

fn apply_rnd(
    mut state: PathState,
    arg: &RndArg,
    config: &SmoothConfig,
    params: &ParamStore,
) -> PathState {
    let weights: Vec<DiffScalar> = arg.weights.iter().map(|w| w.resolve(params)).collect();
    let means: Vec<DiffScalar> = arg.means.iter().map(|m| m.resolve(params)).collect();
    // Only a literal zero std marks the component as discrete; in smoothed
    // mode it is widened to epsilon.
    let mut any_zero = false;
    let stds: Vec<DiffScalar> = arg
        .stds
        .iter()
        .map(|s| {
            let raw = s.resolve(params);
            if raw.is_const() && raw.value() == 0.0 {
                any_zero = true;
                match config.mode {
                    Mode::Degas => DiffScalar::constant(config.epsilon),
                    Mode::Soga => raw,
                }
            } else {
                raw
            }
        })
        .collect();
    state.dist = mix_product(&state.dist, arg.var, &weights, &means, &stds);
    if any_zero {
        state.smoothed.insert(arg.var);
    } else {
        state.smoothed.remove(arg.var);
    }
    state
}

fn apply_test(
    state: PathState,
    pred: &PredArg,
    branch: bool,
    config: &SmoothConfig,
    params: &ParamStore,
) -> Result<PathState, SemanticsError> {
    let resolved = resolve_pred(pred, params);
    let smoothed = match config.mode {
        Mode::Degas => smooth_predicate(resolved, state.smoothed, config.delta_value()),
        Mode::Soga => resolved,
    };
    let event = if branch {
        to_event(smoothed)
    } else {
        to_event(negate(smoothed))
    };
    condition_mixture(state, &event, config.mode)
}

fn apply_observe(
    state: PathState,
    pred: &PredArg,
    config: &SmoothConfig,
    params: &ParamStore,
) -> Result<PathState, SemanticsError> {
    let resolved = resolve_pred(pred, params);
    if let SPred::Cmp { var, op: CmpOp::Eq, bound } = resolved {
        let smoothed_var = state.smoothed.contains(var);
        match config.mode {
            Mode::Degas if !smoothed_var => {
                let mut st = condition_equality(
                    state,
                    var,
                    bound,
                    DiffScalar::constant(config.epsilon),
                    config.mode,
                )?;
                st.smoothed.insert(var);
                return Ok(st);
            }
            Mode::Soga => {
                return condition_equality(state, var, bound, DiffScalar::constant(0.0), config.mode);
            }
            Mode::Degas => {} // smoothed equality falls through to the band
        }
    }
    let smoothed = match config.mode {
        Mode::Degas => smooth_predicate(resolved, state.smoothed, config.delta_value()),
        Mode::Soga => resolved,
    };
    condition_mixture(state, &to_event(smoothed), config.mode)
}

/// Evaluates one node in the context of `path` (needed to pick the branch at
/// a test node). The entry node ignores the incoming state.
pub fn eval_node(
    cfg: &Cfg,
    node: &CfgNode,
    state: PathState,
    path: &Path,
    config: &SmoothConfig,
    params: &ParamStore,
) -> Result<PathState, SemanticsError> {
    match &node.kind {
        NodeKind::Entry => Ok(PathState::initial(cfg.n_vars())),
        NodeKind::Exit => Ok(state),
        NodeKind::Det(arg) => Ok(apply_det(state, arg, config, params)),
        NodeKind::Rnd(arg) => Ok(apply_rnd(state, arg, config, params)),
        NodeKind::Test(pred) => {
            let succ = cfg::successor(path, node.id)?;
            let branch = cfg.nodes[succ]
                .cond
                .expect("test successor carries a branch condition");
            apply_test(state, pred, branch, config, params)
        }
        NodeKind::Observe(pred) => apply_observe(state, pred, config, params),
    }
}

/// Folds node evaluation along one path.
pub fn eval_path(
    cfg: &Cfg,
    path: &Path,
    params: &ParamStore,
    config: &SmoothConfig,
) -> Result<PathState, SemanticsError> {
    let mut state = PathState::initial(cfg.n_vars());
    for &id in &path.nodes {
        state = eval_node(cfg, &cfg.nodes[id], state, path, config, params)?;
    }
    Ok(state)
}

/// Final states of every path in enumeration order, including dead paths.
///
/// Prefix states are shared between paths, which produces bit-identical
/// results to folding each path separately.
pub fn eval_paths_raw(
    cfg: &Cfg,
    params: &ParamStore,
    config: &SmoothConfig,
    max_paths: usize,
) -> Result<Vec<PathState>, SemanticsError> {
    // Enumerate up front so the budget error fires before any evaluation.
    let n_paths = cfg::enumerate_paths(cfg, max_paths)?.len();
    let mut out = Vec::with_capacity(n_paths);
    walk(cfg, cfg.entry, PathState::initial(cfg.n_vars()), config, params, &mut out)?;
    Ok(out)
}

fn walk(
    cfg: &Cfg,
    id: usize,
    state: PathState,
    config: &SmoothConfig,
    params: &ParamStore,
    out: &mut Vec<PathState>,
) -> Result<(), SemanticsError> {
    let node = &cfg.nodes[id];
    match &node.kind {
        NodeKind::Exit => {
            out.push(state);
            Ok(())
        }
        NodeKind::Test(pred) => {
            for &child in cfg.children(id) {
                let branch = cfg.nodes[child]
                    .cond
                    .expect("test successor carries a branch condition");
                let st = apply_test(state.clone(), pred, branch, config, params)?;
                walk(cfg, child, st, config, params, out)?;
            }
            Ok(())
        }
        _ => {
            let st = match &node.kind {
                NodeKind::Entry => state,
                NodeKind::Det(arg) => apply_det(state, arg, config, params),
                NodeKind::Rnd(arg) => apply_rnd(state, arg, config, params),
                NodeKind::Observe(pred) => apply_observe(state, pred, config, params)?,
                NodeKind::Exit | NodeKind::Test(_) => unreachable!(),
            };
            let children = cfg.children(id);
            debug_assert_eq!(children.len(), 1);
            walk(cfg, children[0], st, config, params, out)
        }
    }
}

/// The normalized program posterior.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub var_names: Vec<String>,
    /// Unnormalized per-path log-probabilities, in path enumeration order.
    pub path_log_probs: Vec<DiffScalar>,
    /// Log of the total unnormalized probability mass.
    pub total_log_prob: DiffScalar,
    /// Normalized path weights.
    pub path_weights: Vec<DiffScalar>,
    /// Flattened mixture: normalized weights and components from all
    /// surviving paths.
    pub weights: Vec<DiffScalar>,
    pub comps: Vec<Gaussian>,
    pub param_snapshot: Vec<(String, f64)>,
}

/// Evaluates the whole program and normalizes over paths.
pub fn eval_program(
    cfg: &Cfg,
    params: &ParamStore,
    config: &SmoothConfig,
    max_paths: usize,
) -> Result<Posterior, SemanticsError> {
    let states = eval_paths_raw(cfg, params, config, max_paths)?;
    posterior_from_states(cfg, params, states)
}

/// Normalizes a set of final path states into a posterior.
pub fn posterior_from_states(
    cfg: &Cfg,
    params: &ParamStore,
    states: Vec<PathState>,
) -> Result<Posterior, SemanticsError> {
    let path_log_probs: Vec<DiffScalar> = states.iter().map(|s| s.log_weight).collect();
    let total_log_prob = log_sum_exp(&path_log_probs);
    if total_log_prob.value() == f64::NEG_INFINITY {
        return Err(SemanticsError::AllPathsVanished);
    }
    let path_weights: Vec<DiffScalar> = path_log_probs
        .iter()
        .map(|lp| {
            if lp.value() == f64::NEG_INFINITY {
                DiffScalar::constant(0.0)
            } else {
                (*lp - total_log_prob).exp()
            }
        })
        .collect();
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (pw, st) in path_weights.iter().zip(&states) {
        if st.is_dead() {
            continue;
        }
        for (w, g) in st.dist.weights.iter().zip(&st.dist.comps) {
            weights.push(*pw * *w);
            comps.push(g.clone());
        }
    }
    Ok(Posterior {
        var_names: cfg.var_names.clone(),
        path_log_probs,
        total_log_prob,
        path_weights,
        weights,
        comps,
        param_snapshot: params.snapshot(),
    })
}

impl Posterior {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    pub fn as_mixture(&self) -> GaussMix {
        GaussMix {
            weights: self.weights.clone(),
            comps: self.comps.clone(),
        }
    }

    /// Posterior mean and covariance over all variables.
    pub fn stats(&self) -> (Vec<DiffScalar>, SymMatrix) {
        let parts: Vec<(DiffScalar, Gaussian)> = self
            .weights
            .iter()
            .copied()
            .zip(self.comps.iter().cloned())
            .collect();
        let matched = moment_match(&parts);
        (matched.mean, matched.cov)
    }

    /// Marginal cdf of one variable at `t`.
    ///
    /// Zero-variance coordinates (reference mode) degrade to a step.
    pub fn marginal_cdf(&self, var: usize, t: DiffScalar) -> DiffScalar {
        let mut acc = DiffScalar::constant(0.0);
        for (w, g) in self.weights.iter().zip(&self.comps) {
            let s2 = g.cov.get(var, var);
            let term = if s2.value() > 0.0 {
                ((t - g.mean[var]) / s2.sqrt()).normal_cdf()
            } else {
                DiffScalar::constant(if t.value() >= g.mean[var].value() { 1.0 } else { 0.0 })
            };
            acc += *w * term;
        }
        acc
    }

    /// Marginal density of one variable at `t`.
    pub fn marginal_pdf(&self, var: usize, t: DiffScalar) -> DiffScalar {
        let mut acc = DiffScalar::constant(0.0);
        for (w, g) in self.weights.iter().zip(&self.comps) {
            let sigma = g.cov.get(var, var).sqrt();
            acc += *w * ((t - g.mean[var]) / sigma).normal_pdf() / sigma;
        }
        acc
    }

    /// Probability mass of `lo <= x_var <= hi` under the posterior marginal.
    ///
    /// The band mass is accumulated per component in whichever tail is
    /// stable; differencing two mixture cdfs near 1 would cancel away the
    /// entire mass (and its gradient) for off-target regions.
    pub fn interval_mass(&self, var: usize, lo: Option<DiffScalar>, hi: Option<DiffScalar>) -> DiffScalar {
        if lo.is_none() && hi.is_none() {
            return DiffScalar::constant(1.0);
        }
        let mut acc = DiffScalar::constant(0.0);
        for (w, g) in self.weights.iter().zip(&self.comps) {
            let s2 = g.cov.get(var, var);
            let term = if s2.value() > 0.0 {
                let sigma = s2.sqrt();
                let z = |t: DiffScalar| (t - g.mean[var]) / sigma;
                match (lo, hi) {
                    (Some(a), Some(b)) => {
                        let za = z(a);
                        let zb = z(b);
                        if za.value() >= 0.0 {
                            za.normal_sf() - zb.normal_sf()
                        } else {
                            zb.normal_cdf() - za.normal_cdf()
                        }
                    }
                    (Some(a), None) => z(a).normal_sf(),
                    (None, Some(b)) => z(b).normal_cdf(),
                    (None, None) => unreachable!(),
                }
            } else {
                // Zero-variance coordinate: point membership.
                let m = g.mean[var].value();
                let inside = lo.is_none_or(|a| m >= a.value()) && hi.is_none_or(|b| m <= b.value());
                DiffScalar::constant(if inside { 1.0 } else { 0.0 })
            };
            acc += *w * term;
        }
        acc
    }

    /// Normalized probability of one path.
    pub fn path_prob(&self, idx: usize) -> DiffScalar {
        self.path_weights[idx]
    }
}

/// Reference-semantics evaluation: per-path probability and mixture, with
/// zero-variance coordinates kept degenerate. Not differentiable (all
/// quantities are constants unless parameters feed them).
pub fn soga_eval(
    cfg: &Cfg,
    params: &ParamStore,
    max_paths: usize,
) -> Result<Vec<PathState>, SemanticsError> {
    eval_paths_raw(cfg, params, &SmoothConfig::soga(), max_paths)
}
