//! Gaussian-mixture algebra over differentiable scalars.
//!
//! Every program state is a weighted list of multivariate Gaussians. The
//! operations here — density evaluation, moment matching, affine and product
//! assignments, single-coordinate truncation, equality conditioning,
//! marginals and mixture products — are the closed-form updates the program
//! semantics composes along control-flow paths.
//!
//! Guards in the source language compare one variable against one bound, so
//! truncation is always on a single coordinate and is lifted to the joint
//! by the regression decomposition against that coordinate. This avoids the
//! general multivariate truncated-moment recursions entirely.

mod matrix;

pub use matrix::{CholeskyFactor, SymMatrix};

use thiserror::Error;

use crate::diff::{log_sum_exp, DiffScalar};

/// Probabilities below this are treated as exactly vanished.
pub const VANISH_PROB: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GmixError {
    #[error("covariance matrix is not positive definite (pivot {pivot})")]
    SingularCovariance { pivot: usize },
    #[error("variance of coordinate {var} is not positive")]
    DegenerateVariance { var: usize },
    #[error("event probability vanished numerically")]
    NumericallyVanishing,
}

/// One mixture component: mean vector and symmetric covariance.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: Vec<DiffScalar>,
    pub cov: SymMatrix,
}

impl Gaussian {
    pub fn standard(n: usize) -> Self {
        Gaussian {
            mean: vec![DiffScalar::constant(0.0); n],
            cov: SymMatrix::identity(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Weighted list of Gaussian components over a shared variable vector.
#[derive(Clone, Debug)]
pub struct GaussMix {
    pub weights: Vec<DiffScalar>,
    pub comps: Vec<Gaussian>,
}

impl GaussMix {
    pub fn single(g: Gaussian) -> Self {
        GaussMix {
            weights: vec![DiffScalar::constant(1.0)],
            comps: vec![g],
        }
    }

    pub fn standard(n: usize) -> Self {
        Self::single(Gaussian::standard(n))
    }

    pub fn dim(&self) -> usize {
        self.comps.first().map_or(0, Gaussian::dim)
    }

    pub fn n_comps(&self) -> usize {
        self.comps.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.value()).sum()
    }
}

/// Mixture log-density at `x`, as a log-sum-exp over components.
pub fn log_pdf(mix: &GaussMix, x: &[f64]) -> Result<DiffScalar, GmixError> {
    let n = mix.dim();
    debug_assert_eq!(x.len(), n);
    let half_n_log_2pi = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut terms = Vec::with_capacity(mix.n_comps());
    for (w, g) in mix.weights.iter().zip(&mix.comps) {
        if w.value() <= 0.0 {
            continue;
        }
        let chol = CholeskyFactor::new(&g.cov)?;
        let diff: Vec<DiffScalar> = g
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| DiffScalar::constant(x[i]) - *m)
            .collect();
        let u = chol.solve_lower(&diff);
        let mut quad = DiffScalar::constant(0.0);
        for ui in &u {
            quad += *ui * *ui;
        }
        let lp = -0.5 * (quad + chol.log_det()) - half_n_log_2pi;
        terms.push(w.ln() + lp);
    }
    Ok(log_sum_exp(&terms))
}

/// Mixture density at `x`.
pub fn pdf(mix: &GaussMix, x: &[f64]) -> Result<DiffScalar, GmixError> {
    Ok(log_pdf(mix, x)?.exp())
}

/// Collapses weighted parts to the single Gaussian with the same overall
/// mean and covariance. With one part this is the identity.
pub fn moment_match(parts: &[(DiffScalar, Gaussian)]) -> Gaussian {
    debug_assert!(!parts.is_empty());
    debug_assert!(
        (parts.iter().map(|(w, _)| w.value()).sum::<f64>() - 1.0).abs() < 1e-6,
        "moment_match expects normalized weights"
    );
    if parts.len() == 1 {
        return parts[0].1.clone();
    }
    let n = parts[0].1.dim();
    let mut mean = vec![DiffScalar::constant(0.0); n];
    for (w, g) in parts {
        for i in 0..n {
            mean[i] += *w * g.mean[i];
        }
    }
    let mut cov = SymMatrix::zeros(n);
    for (w, g) in parts {
        let dev: Vec<DiffScalar> = (0..n).map(|i| g.mean[i] - mean[i]).collect();
        for i in 0..n {
            for j in i..n {
                let v = cov.get(i, j) + *w * (g.cov.get(i, j) + dev[i] * dev[j]);
                cov.set(i, j, v);
            }
        }
    }
    Gaussian { mean, cov }
}

fn is_zero_const(v: DiffScalar) -> bool {
    v.is_const() && v.value() == 0.0
}

/// `target := coeffs . x + constant (+ fresh noise)`, per component.
///
/// The fresh noise variable is never materialized: its only effect is the
/// `noise_std^2` term on the `(target, target)` covariance entry.
pub fn affine_assign(
    mix: &GaussMix,
    target: usize,
    coeffs: &[DiffScalar],
    constant: DiffScalar,
    noise_std: Option<DiffScalar>,
) -> GaussMix {
    let n = mix.dim();
    debug_assert_eq!(coeffs.len(), n);
    let active: Vec<usize> = (0..n).filter(|&k| !is_zero_const(coeffs[k])).collect();
    let comps = mix
        .comps
        .iter()
        .map(|g| {
            let mut new_mean_t = constant;
            for &k in &active {
                new_mean_t += coeffs[k] * g.mean[k];
            }
            // Cross covariances against the old matrix, then the variance.
            let mut new_row = vec![DiffScalar::constant(0.0); n];
            for j in 0..n {
                if j == target {
                    continue;
                }
                let mut c = DiffScalar::constant(0.0);
                for &k in &active {
                    c += coeffs[k] * g.cov.get(k, j);
                }
                new_row[j] = c;
            }
            let mut var = DiffScalar::constant(0.0);
            for &k in &active {
                for &l in &active {
                    var += coeffs[k] * coeffs[l] * g.cov.get(k, l);
                }
            }
            if let Some(s) = noise_std {
                var += s * s;
            }
            let mut mean = g.mean.clone();
            mean[target] = new_mean_t;
            let mut cov = g.cov.clone();
            for (j, item) in new_row.iter().enumerate() {
                if j != target {
                    cov.set(target, j, *item);
                }
            }
            cov.set(target, target, var);
            Gaussian { mean, cov }
        })
        .collect();
    GaussMix {
        weights: mix.weights.clone(),
        comps,
    }
}

/// `target := x_j * x_k`, moment-matched per component.
///
/// First and second moments of the product come from the Gaussian moment
/// identities: `E = mu_j mu_k + S_jk`,
/// `Var = mu_j^2 S_kk + mu_k^2 S_jj + 2 mu_j mu_k S_jk + S_jj S_kk + S_jk^2`,
/// `Cov(x_j x_k, x_l) = mu_j S_kl + mu_k S_jl`.
pub fn product_assign(mix: &GaussMix, target: usize, j: usize, k: usize) -> GaussMix {
    let n = mix.dim();
    let comps = mix
        .comps
        .iter()
        .map(|g| {
            let (mj, mk) = (g.mean[j], g.mean[k]);
            let (sjj, skk, sjk) = (g.cov.get(j, j), g.cov.get(k, k), g.cov.get(j, k));
            let e = mj * mk + sjk;
            let var = mj * mj * skk
                + mk * mk * sjj
                + 2.0 * (mj * mk * sjk)
                + sjj * skk
                + sjk * sjk;
            let cross: Vec<DiffScalar> = (0..n)
                .map(|l| mj * g.cov.get(k, l) + mk * g.cov.get(j, l))
                .collect();
            let mut mean = g.mean.clone();
            mean[target] = e;
            let mut cov = g.cov.clone();
            for (l, c) in cross.iter().enumerate() {
                if l != target {
                    cov.set(target, l, *c);
                }
            }
            cov.set(target, target, var);
            Gaussian { mean, cov }
        })
        .collect();
    GaussMix {
        weights: mix.weights.clone(),
        comps,
    }
}

/// Restriction of one component to `lo < x_var < hi`, moment-matched.
///
/// Returns the event probability and the Gaussian matching the first two
/// moments of the truncated distribution. The scalar truncated moments are
/// lifted to the joint through the regression vector
/// `gamma = cov[., var] / cov[var, var]`.
pub fn truncate_component(
    g: &Gaussian,
    var: usize,
    lo: Option<DiffScalar>,
    hi: Option<DiffScalar>,
) -> Result<(DiffScalar, Gaussian), GmixError> {
    let s2 = g.cov.get(var, var);
    if !(s2.value() > 0.0) {
        return Err(GmixError::DegenerateVariance { var });
    }
    let (lo, hi) = match (lo, hi) {
        (None, None) => return Ok((DiffScalar::constant(1.0), g.clone())),
        pair => pair,
    };
    let sigma = s2.sqrt();
    let mu = g.mean[var];

    // prob, r1 = (phi(a)-phi(b))/Z, r2 = (a phi(a) - b phi(b))/Z with the
    // conventions phi(+-inf) = 0, z phi(z) -> 0.
    let (prob, r1, r2) = match (lo, hi) {
        (Some(a), Some(b)) => {
            let alpha = (a - mu) / sigma;
            let beta = (b - mu) / sigma;
            // Evaluate the interval mass in whichever tail is stable.
            let prob = if alpha.value() >= 0.0 {
                alpha.normal_sf() - beta.normal_sf()
            } else {
                beta.normal_cdf() - alpha.normal_cdf()
            };
            if prob.value() < VANISH_PROB || !prob.value().is_finite() {
                return Err(GmixError::NumericallyVanishing);
            }
            let pa = alpha.normal_pdf();
            let pb = beta.normal_pdf();
            let r1 = (pa - pb) / prob;
            let r2 = (alpha * pa - beta * pb) / prob;
            (prob, r1, r2)
        }
        (Some(a), None) => {
            let alpha = (a - mu) / sigma;
            let prob = alpha.normal_sf();
            if prob.value() < VANISH_PROB {
                return Err(GmixError::NumericallyVanishing);
            }
            let lam = alpha.normal_hazard();
            (prob, lam, alpha * lam)
        }
        (None, Some(b)) => {
            let beta = (b - mu) / sigma;
            let prob = beta.normal_cdf();
            if prob.value() < VANISH_PROB {
                return Err(GmixError::NumericallyVanishing);
            }
            // phi(b)/Phi(b) is the hazard evaluated at -b.
            let lam = (-beta).normal_hazard();
            (prob, -lam, -(beta * lam))
        }
        (None, None) => unreachable!(),
    };

    let m_t = mu + sigma * r1;
    let v_t = s2 * (DiffScalar::constant(1.0) + r2 - r1 * r1);
    if !(v_t.value() > 0.0) || !v_t.value().is_finite() {
        return Err(GmixError::NumericallyVanishing);
    }

    let n = g.dim();
    let gamma: Vec<DiffScalar> = (0..n).map(|j| g.cov.get(j, var) / s2).collect();
    let shift = m_t - mu;
    let mean: Vec<DiffScalar> = (0..n).map(|j| g.mean[j] + gamma[j] * shift).collect();
    let dv = v_t - s2;
    let mut cov = g.cov.clone();
    for i in 0..n {
        for j in i..n {
            cov.set(i, j, g.cov.get(i, j) + gamma[i] * gamma[j] * dv);
        }
    }
    Ok((prob, Gaussian { mean, cov }))
}

/// Conditions one component on `x_var == c`, then re-attaches `var` as an
/// independent `N(c, resample_std^2)` coordinate.
///
/// Returns the marginal density of `var` at `c` and the conditioned Gaussian.
pub fn condition_equal(
    g: &Gaussian,
    var: usize,
    c: DiffScalar,
    resample_std: DiffScalar,
) -> Result<(DiffScalar, Gaussian), GmixError> {
    let s2 = g.cov.get(var, var);
    if !(s2.value() > 0.0) {
        return Err(GmixError::DegenerateVariance { var });
    }
    let sigma = s2.sqrt();
    let z = (c - g.mean[var]) / sigma;
    let density = z.normal_pdf() / sigma;

    let n = g.dim();
    let gamma: Vec<DiffScalar> = (0..n).map(|j| g.cov.get(j, var) / s2).collect();
    let shift = c - g.mean[var];
    let mut mean: Vec<DiffScalar> = (0..n).map(|j| g.mean[j] + gamma[j] * shift).collect();
    mean[var] = c;
    let mut cov = g.cov.clone();
    for i in 0..n {
        for j in i..n {
            if i == var || j == var {
                continue;
            }
            cov.set(i, j, g.cov.get(i, j) - gamma[i] * gamma[j] * s2);
        }
    }
    for j in 0..n {
        if j != var {
            cov.set(var, j, DiffScalar::constant(0.0));
        }
    }
    cov.set(var, var, resample_std * resample_std);
    Ok((density, Gaussian { mean, cov }))
}

/// Replaces coordinate `var` with an independent draw from the literal
/// mixture `(weights, means, stds)`; component counts multiply.
///
/// Literal weights are normalized by their sum, which keeps parameterized
/// weight vectors on the simplex during optimization.
pub fn mix_product(
    mix: &GaussMix,
    var: usize,
    weights: &[DiffScalar],
    means: &[DiffScalar],
    stds: &[DiffScalar],
) -> GaussMix {
    debug_assert!(weights.len() == means.len() && means.len() == stds.len());
    let mut wsum = DiffScalar::constant(0.0);
    for w in weights {
        wsum += *w;
    }
    let n = mix.dim();
    let mut out_w = Vec::with_capacity(mix.n_comps() * weights.len());
    let mut out_c = Vec::with_capacity(mix.n_comps() * weights.len());
    for (w0, g) in mix.weights.iter().zip(&mix.comps) {
        for j in 0..weights.len() {
            let mut mean = g.mean.clone();
            mean[var] = means[j];
            let mut cov = g.cov.clone();
            for l in 0..n {
                if l != var {
                    cov.set(var, l, DiffScalar::constant(0.0));
                }
            }
            cov.set(var, var, stds[j] * stds[j]);
            out_w.push(*w0 * weights[j] / wsum);
            out_c.push(Gaussian { mean, cov });
        }
    }
    GaussMix {
        weights: out_w,
        comps: out_c,
    }
}

/// Marginal mixture over the coordinates in `vars`, in the given order.
pub fn marginal(mix: &GaussMix, vars: &[usize]) -> GaussMix {
    debug_assert!(!vars.is_empty());
    let comps = mix
        .comps
        .iter()
        .map(|g| Gaussian {
            mean: vars.iter().map(|&v| g.mean[v]).collect(),
            cov: g.cov.select(vars),
        })
        .collect();
    GaussMix {
        weights: mix.weights.clone(),
        comps,
    }
}
