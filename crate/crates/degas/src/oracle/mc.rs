//! Forward Monte-Carlo simulation of the exact program semantics.
//!
//! Runs draw every `gm` literal, follow branches on concrete values, reject
//! runs violating inequality observations, and handle equality observations
//! by point membership (discrete coordinates) or likelihood weighting
//! (continuous coordinates freshly drawn and not yet read).
//!
//! Sampling uses ChaCha20 split into 64 fixed sub-streams, so results are
//! identical across platforms and across thread counts; reduction runs in
//! stream order.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use std::collections::BTreeMap;

use crate::diff::{norm_pdf_f64, ParamStore};
use crate::frontend::{Ast, CmpOp, Expr, Pred, Stmt, Value};

use super::OracleError;

const CHUNKS: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub n_requested: u64,
    /// Effective sample size `(sum w)^2 / sum w^2`, floored.
    pub n_effective: u64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// Standard error of each posterior mean estimate.
    pub std_error: Vec<f64>,
    /// Fraction of runs with positive weight.
    pub acceptance_rate: f64,
}

impl McResult {
    /// Asymptotic standard error of the covariance entry `(i, j)`.
    pub fn cov_std_error(&self, i: usize, j: usize) -> f64 {
        let v = self.cov[i][i] * self.cov[j][j] + self.cov[i][j] * self.cov[i][j];
        (v.max(0.0) / self.n_effective.max(1) as f64).sqrt()
    }
}

/// Distribution a variable was last drawn from, for likelihood weighting.
#[derive(Clone)]
struct FreshDraw {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

struct RunState<'a> {
    values: Vec<f64>,
    /// Mirrors the discrete-variable tracking of the exact semantics.
    discrete: Vec<bool>,
    fresh: Vec<Option<FreshDraw>>,
    weight: f64,
    params: &'a BTreeMap<String, f64>,
}

impl RunState<'_> {
    fn value_of(&self, v: &Value) -> f64 {
        match v {
            Value::Lit(x) => *x,
            Value::Param(p) => *self.params.get(p).expect("declared parameter"),
        }
    }

    fn read(&mut self, var: usize) -> f64 {
        // A read makes a later equality observation on this variable depend
        // on downstream state; invalidate the fresh-draw marker.
        self.fresh[var] = None;
        self.values[var]
    }
}

fn holds(op: CmpOp, x: f64, c: f64) -> bool {
    match op {
        CmpOp::Lt => x < c,
        CmpOp::Le => x <= c,
        CmpOp::Eq => (x - c).abs() <= 1e-9,
        CmpOp::Ge => x >= c,
        CmpOp::Gt => x > c,
    }
}

/// Runs one simulation; returns false if the run was rejected.
fn exec(
    ast: &Ast,
    stmts: &[Stmt],
    st: &mut RunState,
    rng: &mut ChaCha20Rng,
) -> Result<bool, OracleError> {
    let index = |name: &str| ast.var_index(name).expect("declared variable");
    for stmt in stmts {
        match stmt {
            Stmt::Skip => {}
            Stmt::Assign { var, expr } => {
                let target = index(var);
                match expr {
                    Expr::Product(a, b) => {
                        let ia = index(a);
                        let ib = index(b);
                        let (va, vb) = (st.read(ia), st.read(ib));
                        st.values[target] = va * vb;
                        st.discrete[target] = st.discrete[ia] && st.discrete[ib];
                    }
                    Expr::Linear { terms, constant } => {
                        let mut acc = st.value_of(constant);
                        let mut all_discrete = true;
                        for (c, v) in terms {
                            let iv = index(v);
                            acc += st.value_of(c) * st.read(iv);
                            all_discrete &= st.discrete[iv];
                        }
                        st.values[target] = acc;
                        st.discrete[target] = all_discrete;
                    }
                }
                st.fresh[target] = None;
            }
            Stmt::RndAssign { var, gm } => {
                let target = index(var);
                let weights: Vec<f64> = gm.weights.iter().map(|w| st.value_of(w)).collect();
                let means: Vec<f64> = gm.means.iter().map(|m| st.value_of(m)).collect();
                let stds: Vec<f64> = gm.stds.iter().map(|s| st.value_of(s)).collect();
                let total: f64 = weights.iter().sum();
                let mut u: f64 = rng.gen::<f64>() * total;
                let mut comp = weights.len() - 1;
                for (j, w) in weights.iter().enumerate() {
                    if u < *w {
                        comp = j;
                        break;
                    }
                    u -= w;
                }
                let z: f64 = rng.sample(StandardNormal);
                st.values[target] = means[comp] + stds[comp] * z;
                st.discrete[target] = stds.contains(&0.0);
                st.fresh[target] = Some(FreshDraw {
                    weights: weights.iter().map(|w| w / total).collect(),
                    means,
                    stds,
                });
            }
            Stmt::If { guard, then_body, else_body } => {
                let taken = match guard {
                    Pred::True => true,
                    Pred::False => false,
                    Pred::Cmp { var, op, bound } => {
                        let iv = index(var);
                        let x = st.read(iv);
                        let c = st.value_of(bound);
                        holds(*op, x, c)
                    }
                };
                let body = if taken { then_body } else { else_body };
                if !exec(ast, body, st, rng)? {
                    return Ok(false);
                }
            }
            Stmt::Observe(pred) => match pred {
                Pred::True => {}
                Pred::False => return Ok(false),
                Pred::Cmp { var, op: CmpOp::Eq, bound } => {
                    let iv = index(var);
                    let c = st.value_of(bound);
                    if st.discrete[iv] {
                        if !holds(CmpOp::Eq, st.values[iv], c) {
                            return Ok(false);
                        }
                    } else {
                        let Some(draw) = st.fresh[iv].clone() else {
                            return Err(OracleError::UnsupportedObserve);
                        };
                        // Likelihood weighting: weight by the density of the
                        // generating mixture at c, then pin the coordinate.
                        let mut dens = 0.0;
                        for ((w, m), s) in draw.weights.iter().zip(&draw.means).zip(&draw.stds) {
                            if *s > 0.0 {
                                dens += w * norm_pdf_f64((c - m) / s) / s;
                            }
                        }
                        st.weight *= dens;
                        st.values[iv] = c;
                        st.discrete[iv] = true;
                        st.fresh[iv] = None;
                        if st.weight == 0.0 {
                            return Ok(false);
                        }
                    }
                }
                Pred::Cmp { var, op, bound } => {
                    let iv = index(var);
                    let x = st.read(iv);
                    if !holds(*op, x, st.value_of(bound)) {
                        return Ok(false);
                    }
                }
            },
        }
    }
    Ok(true)
}

#[derive(Clone)]
struct Accum {
    n: u64,
    accepted: u64,
    sum_w: f64,
    sum_w2: f64,
    sum_wx: Vec<f64>,
    sum_wxx: Vec<f64>,
}

impl Accum {
    fn new(dim: usize) -> Self {
        Accum {
            n: 0,
            accepted: 0,
            sum_w: 0.0,
            sum_w2: 0.0,
            sum_wx: vec![0.0; dim],
            sum_wxx: vec![0.0; dim * dim],
        }
    }

    fn add_run(&mut self, values: &[f64], w: f64) {
        self.n += 1;
        if w <= 0.0 {
            return;
        }
        self.accepted += 1;
        self.sum_w += w;
        self.sum_w2 += w * w;
        let d = values.len();
        for i in 0..d {
            self.sum_wx[i] += w * values[i];
            for j in 0..d {
                self.sum_wxx[i * d + j] += w * values[i] * values[j];
            }
        }
    }

    fn merge(&mut self, other: &Accum) {
        self.n += other.n;
        self.accepted += other.accepted;
        self.sum_w += other.sum_w;
        self.sum_w2 += other.sum_w2;
        for (a, b) in self.sum_wx.iter_mut().zip(&other.sum_wx) {
            *a += b;
        }
        for (a, b) in self.sum_wxx.iter_mut().zip(&other.sum_wxx) {
            *a += b;
        }
    }
}

fn run_chunk(
    ast: &Ast,
    params: &BTreeMap<String, f64>,
    n_runs: u64,
    seed: u64,
    stream: u64,
) -> Result<Accum, OracleError> {
    let dim = ast.var_names.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream + 1);
    let mut acc = Accum::new(dim);
    for _ in 0..n_runs {
        let mut st = RunState {
            values: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
            discrete: vec![false; dim],
            fresh: vec![None; dim],
            weight: 1.0,
            params,
        };
        let ok = exec(ast, &ast.body, &mut st, &mut rng)?;
        acc.add_run(&st.values, if ok { st.weight } else { 0.0 });
    }
    Ok(acc)
}

/// Draws `n` accepted runs of the observed variables by rejection.
///
/// Supports programs whose observations are inequalities or equalities on
/// discrete coordinates (anything rejection can handle without weights).
pub fn simulate_dataset(
    ast: &Ast,
    params: &ParamStore,
    observed: &[String],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let values: BTreeMap<String, f64> = params.snapshot().into_iter().collect();
    let idx: Vec<usize> = observed
        .iter()
        .map(|name| ast.var_index(name).expect("declared variable"))
        .collect();
    let dim = ast.var_names.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // distinct from the moment-estimator streams
    let mut rows = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while rows.len() < n {
        attempts += 1;
        if attempts > n.saturating_mul(1000) {
            return Err(OracleError::NoAcceptedSamples);
        }
        let mut st = RunState {
            values: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
            discrete: vec![false; dim],
            fresh: vec![None; dim],
            weight: 1.0,
            params: &values,
        };
        let ok = exec(ast, &ast.body, &mut st, &mut rng)?;
        if ok && st.weight == 1.0 {
            rows.push(idx.iter().map(|&i| st.values[i]).collect());
        } else if ok {
            // A reweighted run cannot be turned into an unweighted draw.
            return Err(OracleError::UnsupportedObserve);
        }
    }
    Ok(rows)
}

/// Simulates `n` runs of the program and reports weighted posterior moments.
pub fn mc_sample(
    ast: &Ast,
    params: &ParamStore,
    n: u64,
    seed: u64,
    threads: usize,
) -> Result<McResult, OracleError> {
    assert!(n >= 1000, "the sampler needs at least 1000 runs");
    let values: BTreeMap<String, f64> = params.snapshot().into_iter().collect();
    let params = &values;
    let dim = ast.var_names.len();
    let base = n / CHUNKS;
    let extra = n % CHUNKS;
    let sizes: Vec<u64> = (0..CHUNKS).map(|c| base + u64::from(c < extra)).collect();

    let chunks: Vec<Result<Accum, OracleError>> = if threads <= 1 {
        sizes
            .iter()
            .enumerate()
            .map(|(c, sz)| run_chunk(ast, params, *sz, seed, c as u64))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<Accum, OracleError>>> =
            (0..CHUNKS).map(|_| None).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<&mut Option<Result<Accum, OracleError>>>> =
            slots.iter_mut().map(std::sync::Mutex::new).collect();
        std::thread::scope(|scope| {
            let results = &results;
            let sizes = &sizes;
            let next = &next;
            for _ in 0..threads.min(CHUNKS as usize) {
                scope.spawn(move || loop {
                    let c = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if c >= CHUNKS as usize {
                        break;
                    }
                    let r = run_chunk(ast, params, sizes[c], seed, c as u64);
                    **results[c].lock().unwrap() = Some(r);
                });
            }
        });
        slots.into_iter().map(|o| o.expect("chunk computed")).collect()
    };

    let mut total = Accum::new(dim);
    for c in chunks {
        total.merge(&c?);
    }
    if total.sum_w <= 0.0 {
        return Err(OracleError::NoAcceptedSamples);
    }

    let mean: Vec<f64> = total.sum_wx.iter().map(|s| s / total.sum_w).collect();
    let mut cov = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            cov[i][j] = total.sum_wxx[i * dim + j] / total.sum_w - mean[i] * mean[j];
        }
    }
    let ess = total.sum_w * total.sum_w / total.sum_w2;
    let std_error: Vec<f64> = (0..dim).map(|i| (cov[i][i].max(0.0) / ess).sqrt()).collect();
    Ok(McResult {
        n_requested: n,
        n_effective: ess.floor() as u64,
        mean,
        cov,
        std_error,
        acceptance_rate: total.accepted as f64 / total.n as f64,
    })
}
