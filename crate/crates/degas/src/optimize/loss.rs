//! Loss functions over the program posterior.

use crate::diff::{log_sum_exp, DiffScalar};
use crate::gmix::{marginal, CholeskyFactor};
use crate::semantics::Posterior;

use super::OptimError;

/// Observations of a subset of program variables, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub var_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    /// Parses `var,names` header plus one comma-separated row per line.
    pub fn from_csv(text: &str) -> Result<Dataset, OptimError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| OptimError::Dataset("empty dataset".into()))?;
        let var_names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        for (i, n) in var_names.iter().enumerate() {
            if var_names[..i].contains(n) {
                return Err(OptimError::Dataset(format!("duplicate column `{n}`")));
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| OptimError::Dataset(format!("row {}: {e}", i + 2)))?;
            if row.len() != var_names.len() {
                return Err(OptimError::Dataset(format!(
                    "row {} has {} fields, expected {}",
                    i + 2,
                    row.len(),
                    var_names.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::Dataset(format!("row {} has a non-finite entry", i + 2)));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(OptimError::Dataset("dataset has no rows".into()));
        }
        Ok(Dataset { var_names, rows })
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.var_names.join(",");
        s.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }
}

/// Expression tree for reachability objectives.
#[derive(Debug, Clone, PartialEq)]
pub enum ReachExpr {
    /// Posterior marginal mass of `lo <= var <= hi`.
    Cdf { var: String, lo: f64, hi: f64 },
    /// Normalized probability of one path (enumeration order).
    PathProb(usize),
    Prod(Vec<ReachExpr>),
    Sum(Vec<ReachExpr>),
    Neg(Box<ReachExpr>),
    /// `1 - e`.
    Complement(Box<ReachExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    Nll(Dataset),
    Reach(ReachExpr),
}

/// Negative log-likelihood of the dataset under the posterior marginal of
/// the observed variables.
pub fn nll_loss(posterior: &Posterior, dataset: &Dataset) -> Result<DiffScalar, OptimError> {
    let idx: Vec<usize> = dataset
        .var_names
        .iter()
        .map(|n| {
            posterior
                .var_index(n)
                .ok_or_else(|| OptimError::Dataset(format!("unknown observed variable `{n}`")))
        })
        .collect::<Result<_, _>>()?;
    let mix = marginal(&posterior.as_mixture(), &idx);
    let k = idx.len();
    let half_k_log_2pi = 0.5 * k as f64 * (2.0 * std::f64::consts::PI).ln();

    // Factor every component once; rows only need a triangular solve.
    let mut comps = Vec::with_capacity(mix.n_comps());
    for (w, g) in mix.weights.iter().zip(&mix.comps) {
        if w.value() <= 0.0 {
            continue;
        }
        let chol = CholeskyFactor::new(&g.cov)
            .map_err(|e| OptimError::NonFiniteLoss { step: 0, detail: format!(": {e}") })?;
        let log_norm = w.ln() - 0.5 * chol.log_det() - half_k_log_2pi;
        comps.push((g.mean.clone(), chol, log_norm));
    }

    let mut total = DiffScalar::constant(0.0);
    for (r, row) in dataset.rows.iter().enumerate() {
        let mut terms = Vec::with_capacity(comps.len());
        for (mean, chol, log_norm) in &comps {
            let diff: Vec<DiffScalar> = (0..k)
                .map(|i| DiffScalar::constant(row[i]) - mean[i])
                .collect();
            let u = chol.solve_lower(&diff);
            let mut quad = DiffScalar::constant(0.0);
            for ui in &u {
                quad += *ui * *ui;
            }
            terms.push(*log_norm - 0.5 * quad);
        }
        let row_log_density = log_sum_exp(&terms);
        if !row_log_density.value().is_finite() {
            return Err(OptimError::NonFiniteLoss {
                step: 0,
                detail: format!(": zero density at dataset row {}", r + 1),
            });
        }
        total += row_log_density;
    }
    Ok(-total)
}

/// Evaluates a reachability expression tree over posterior marginals.
pub fn reachability_loss(expr: &ReachExpr, posterior: &Posterior) -> Result<DiffScalar, OptimError> {
    match expr {
        ReachExpr::Cdf { var, lo, hi } => {
            let v = posterior
                .var_index(var)
                .ok_or_else(|| OptimError::BadLossSpec(format!("unknown variable `{var}`")))?;
            let lo = if lo.is_finite() { Some(DiffScalar::constant(*lo)) } else { None };
            let hi = if hi.is_finite() { Some(DiffScalar::constant(*hi)) } else { None };
            Ok(posterior.interval_mass(v, lo, hi))
        }
        ReachExpr::PathProb(i) => {
            if *i >= posterior.path_weights.len() {
                return Err(OptimError::BadLossSpec(format!(
                    "path index {i} out of range ({} paths)",
                    posterior.path_weights.len()
                )));
            }
            Ok(posterior.path_prob(*i))
        }
        ReachExpr::Prod(parts) => {
            let mut acc = DiffScalar::constant(1.0);
            for p in parts {
                acc *= reachability_loss(p, posterior)?;
            }
            Ok(acc)
        }
        ReachExpr::Sum(parts) => {
            let mut acc = DiffScalar::constant(0.0);
            for p in parts {
                acc += reachability_loss(p, posterior)?;
            }
            Ok(acc)
        }
        ReachExpr::Neg(e) => Ok(-reachability_loss(e, posterior)?),
        ReachExpr::Complement(e) => Ok(DiffScalar::constant(1.0) - reachability_loss(e, posterior)?),
    }
}

/// Parses the loss expression grammar used on the command line:
///
/// ```text
/// expr := cdf(var, lo, hi) | pathprob(idx)
///       | prod(expr, ...) | sum(expr, ...) | neg(expr) | complement(expr)
/// ```
///
/// Bounds accept `inf` and `-inf`.
pub fn parse_reach_expr(text: &str) -> Result<ReachExpr, OptimError> {
    let mut p = ExprParser { chars: text.chars().collect(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.chars.len() {
        return Err(OptimError::BadLossSpec(format!(
            "trailing input at offset {}",
            p.pos
        )));
    }
    Ok(e)
}

struct ExprParser {
    chars: Vec<char>,
    pos: usize,
}

impl ExprParser {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_alphanumeric() || "._+-".contains(self.chars[self.pos]))
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn expect(&mut self, c: char) -> Result<(), OptimError> {
        self.skip_ws();
        if self.pos < self.chars.len() && self.chars[self.pos] == c {
            self.pos += 1;
            Ok(())
        } else {
            Err(OptimError::BadLossSpec(format!(
                "expected `{c}` at offset {}",
                self.pos
            )))
        }
    }

    fn peek_is(&mut self, c: char) -> bool {
        self.skip_ws();
        self.pos < self.chars.len() && self.chars[self.pos] == c
    }

    fn number(&mut self) -> Result<f64, OptimError> {
        let w = self.word();
        match w.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => w
                .parse()
                .map_err(|_| OptimError::BadLossSpec(format!("bad number `{w}`"))),
        }
    }

    fn expr(&mut self) -> Result<ReachExpr, OptimError> {
        let head = self.word();
        match head.as_str() {
            "cdf" => {
                self.expect('(')?;
                let var = self.word();
                self.expect(',')?;
                let lo = self.number()?;
                self.expect(',')?;
                let hi = self.number()?;
                self.expect(')')?;
                Ok(ReachExpr::Cdf { var, lo, hi })
            }
            "pathprob" => {
                self.expect('(')?;
                let idx = self.word();
                let idx: usize = idx
                    .parse()
                    .map_err(|_| OptimError::BadLossSpec(format!("bad path index `{idx}`")))?;
                self.expect(')')?;
                Ok(ReachExpr::PathProb(idx))
            }
            "prod" | "sum" => {
                self.expect('(')?;
                let mut parts = vec![self.expr()?];
                while self.peek_is(',') {
                    self.expect(',')?;
                    parts.push(self.expr()?);
                }
                self.expect(')')?;
                Ok(if head == "prod" {
                    ReachExpr::Prod(parts)
                } else {
                    ReachExpr::Sum(parts)
                })
            }
            "neg" | "complement" => {
                self.expect('(')?;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(if head == "neg" {
                    ReachExpr::Neg(Box::new(inner))
                } else {
                    ReachExpr::Complement(Box::new(inner))
                })
            }
            other => Err(OptimError::BadLossSpec(format!("unknown form `{other}`"))),
        }
    }
}
