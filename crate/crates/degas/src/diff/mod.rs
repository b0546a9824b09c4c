//! Reverse-mode automatic differentiation on a thread-local tape.
//!
//! All quantities that depend on program parameters are carried as
//! [`DiffScalar`]s. Arithmetic on them is recorded on the active tape;
//! [`gradient`] runs one reverse sweep and returns the partial derivatives
//! with respect to every registered parameter. Constants never touch the
//! tape, so parameter-free evaluation allocates nothing.
//!
//! The tape is epoch-stamped: [`tape::reset`] starts a new epoch and frees
//! the node log, and using a recorded value from an earlier epoch is an
//! error rather than silent corruption.

mod norm;
mod params;
mod scalar;
mod tape;

pub use norm::{norm_cdf_f64, norm_hazard_f64, norm_pdf_f64, norm_sf_f64};
pub use params::{Interval, ParamStore, SimplexGroup};
pub use scalar::DiffScalar;
pub use tape::{node_count, reset};

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error in {op}: argument {value}")]
    DomainError { op: &'static str, value: f64 },
    /// The value was recorded on a tape epoch that has since been reset.
    #[error("stale tape value: recorded in epoch {recorded}, current epoch {current}")]
    StaleTape { recorded: u32, current: u32 },
    /// Finite differencing could not keep the probe inside a parameter domain.
    #[error("finite-difference probe for {param} leaves its domain even after shrinking h")]
    ProbeOutsideDomain { param: String },
}

/// Partial derivatives of `output` with respect to every parameter in `params`.
///
/// Parameters that do not appear on the tape (or when `output` is a constant)
/// get gradient 0.
pub fn gradient(
    output: DiffScalar,
    params: &ParamStore,
) -> Result<BTreeMap<String, f64>, DiffError> {
    let mut grads: BTreeMap<String, f64> = params.names().map(|n| (n.to_string(), 0.0)).collect();
    if output.is_const() {
        return Ok(grads);
    }
    let adjoints = tape::reverse_sweep(output)?;
    for name in params.names() {
        if let Some(leaf) = params.registered_leaf(name) {
            if !leaf.is_const() {
                if let Some(a) = adjoints.get(leaf.index() as usize) {
                    *grads.get_mut(name).unwrap() = *a;
                }
            }
        }
    }
    Ok(grads)
}

/// Compares the tape gradient of `f` against central finite differences.
///
/// Returns the maximum relative discrepancy over all parameters, with
/// denominator `max(|analytic|, 1e-8)`. The probe step shrinks by 10x (up to
/// three times) when `value ± h` would leave a parameter's domain.
pub fn finite_diff_check<F>(
    f: F,
    params: &mut ParamStore,
    h: f64,
) -> Result<f64, DiffError>
where
    F: Fn(&ParamStore) -> DiffScalar,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    tape::reset();
    let out = f(params);
    let grads = gradient(out, params)?;

    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    let mut max_rel = 0.0f64;
    for name in &names {
        let center = params.value(name).expect("parameter exists");
        let dom = params.domain(name).expect("parameter exists");
        let mut step = h;
        let mut tries = 0;
        while center + step > dom.hi || center - step < dom.lo {
            if tries == 3 {
                return Err(DiffError::ProbeOutsideDomain {
                    param: name.clone(),
                });
            }
            step /= 10.0;
            tries += 1;
        }

        params.set_value(name, center + step);
        tape::reset();
        let plus = f(params).value();
        params.set_value(name, center - step);
        tape::reset();
        let minus = f(params).value();
        params.set_value(name, center);

        let fd = (plus - minus) / (2.0 * step);
        let analytic = grads[name];
        let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
        max_rel = max_rel.max(rel);
    }
    tape::reset();
    Ok(max_rel)
}

/// `log(sum(exp(terms)))` with the usual max-shift; skips `-inf` entries.
///
/// Returns a constant `-inf` when every term is `-inf` (or the slice is
/// empty).
pub fn log_sum_exp(terms: &[DiffScalar]) -> DiffScalar {
    let m = terms
        .iter()
        .map(|t| t.value())
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return DiffScalar::constant(f64::NEG_INFINITY);
    }
    let shift = DiffScalar::constant(m);
    let mut acc = DiffScalar::constant(0.0);
    for t in terms {
        if t.value() == f64::NEG_INFINITY {
            continue;
        }
        acc += (*t - shift).exp();
    }
    shift + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn store(pairs: &[(&str, f64)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, v) in pairs {
            s.insert(n, *v, Interval::unbounded());
        }
        s
    }

    #[test]
    fn grad_of_square() {
        let mut p = store(&[("theta", 3.0)]);
        tape::reset();
        let t = p.leaf("theta").unwrap();
        let y = t * t;
        let g = gradient(y, &p).unwrap();
        assert_relative_eq!(g["theta"], 6.0, max_relative = 1e-12);
        let err = finite_diff_check(|p| { let t = p.leaf("theta").unwrap(); t * t }, &mut p, 1e-4)
            .unwrap();
        assert!(err < 1e-7, "fd error {err}");
    }

    #[test]
    fn grad_of_exp_log_identity() {
        let p = store(&[("theta", 2.0)]);
        tape::reset();
        let t = p.leaf("theta").unwrap();
        let y = t.ln().exp();
        let g = gradient(y, &p).unwrap();
        assert_relative_eq!(g["theta"], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn grad_of_product_pair() {
        let p = store(&[("a", 2.0), ("b", 5.0)]);
        tape::reset();
        let a = p.leaf("a").unwrap();
        let b = p.leaf("b").unwrap();
        let g = gradient(a * b, &p).unwrap();
        assert_relative_eq!(g["a"], 5.0);
        assert_relative_eq!(g["b"], 2.0);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let p = store(&[("a", 2.0)]);
        tape::reset();
        let g = gradient(DiffScalar::constant(4.2), &p).unwrap();
        assert_eq!(g["a"], 0.0);
    }

    #[test]
    fn cdf_chain_rule() {
        // d/dtheta Phi(theta/sigma) at theta=0, sigma=1 is phi(0); d/dsigma is 0.
        let p = store(&[("theta", 0.0), ("sigma", 1.0)]);
        tape::reset();
        let t = p.leaf("theta").unwrap();
        let s = p.leaf("sigma").unwrap();
        let g = gradient((t / s).normal_cdf(), &p).unwrap();
        assert_relative_eq!(g["theta"], 0.3989422804014327, max_relative = 1e-12);
        assert_relative_eq!(g["sigma"], 0.0);
    }

    #[test]
    fn fd_check_on_cdf() {
        let mut p = store(&[("theta", 1.0)]);
        let err = finite_diff_check(
            |p| p.leaf("theta").unwrap().normal_cdf(),
            &mut p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "fd error {err}");
    }

    #[test]
    fn fd_shrinks_step_near_domain_edge() {
        let mut p = ParamStore::new();
        p.insert("s", 5e-6, Interval::new(0.0, f64::INFINITY));
        // The probe must shrink from 1e-4 to 1e-6 to stay inside (0, inf);
        // at that step the sqrt curvature dominates, so the bound is loose.
        let err = finite_diff_check(|p| p.leaf("s").unwrap().sqrt(), &mut p, 1e-4).unwrap();
        assert!(err < 0.05, "fd error {err}");
    }

    #[test]
    fn stale_value_is_rejected() {
        let p = store(&[("a", 1.0)]);
        tape::reset();
        let a = p.leaf("a").unwrap();
        let y = a * a;
        tape::reset();
        assert!(matches!(gradient(y, &p), Err(DiffError::StaleTape { .. })));
    }

    #[test]
    fn gradient_is_linear_in_output() {
        let p = store(&[("a", 0.7), ("b", -1.3)]);
        tape::reset();
        let a = p.leaf("a").unwrap();
        let b = p.leaf("b").unwrap();
        let f = a.exp() * b;
        let g = (a * b).normal_cdf();
        let sum = f + g;
        let gs = gradient(sum, &p).unwrap();
        let gf = gradient(f, &p).unwrap();
        let gg = gradient(g, &p).unwrap();
        for k in ["a", "b"] {
            assert_relative_eq!(gs[k], gf[k] + gg[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn tape_does_not_grow_across_epochs() {
        let p = store(&[("a", 1.5)]);
        let mut baseline = None;
        for _ in 0..5 {
            tape::reset();
            let a = p.leaf("a").unwrap();
            let mut y = a;
            for _ in 0..100 {
                y = y * a + DiffScalar::constant(0.5);
            }
            let n = tape::node_count();
            match baseline {
                None => baseline = Some(n),
                Some(b) => assert_eq!(n, b),
            }
        }
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        tape::reset();
        let xs = [
            DiffScalar::constant(-1.0),
            DiffScalar::constant(0.5),
            DiffScalar::constant(f64::NEG_INFINITY),
        ];
        let lse = log_sum_exp(&xs);
        let direct = ((-1.0f64).exp() + 0.5f64.exp()).ln();
        assert_relative_eq!(lse.value(), direct, max_relative = 1e-14);
        assert_eq!(
            log_sum_exp(&[DiffScalar::constant(f64::NEG_INFINITY)]).value(),
            f64::NEG_INFINITY
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(1000))]
        #[test]
        fn fd_matches_reverse_on_random_compositions(
            a in -2.0f64..2.0,
            b in 0.1f64..3.0,
            c in -1.5f64..1.5,
        ) {
            let mut p = ParamStore::new();
            p.insert("a", a, Interval::unbounded());
            p.insert("b", b, Interval::new(1e-3, f64::INFINITY));
            p.insert("c", c, Interval::unbounded());
            let f = |p: &ParamStore| {
                let a = p.leaf("a").unwrap();
                let b = p.leaf("b").unwrap();
                let c = p.leaf("c").unwrap();
                let z = (a - c) / b.sqrt();
                z.normal_cdf() * b.ln() + (a * c).exp() / (b + DiffScalar::constant(1.0))
                    + z.normal_pdf() + b.powf(1.3) * 0.1 + a.powi(3) * 0.01
            };
            let err = finite_diff_check(f, &mut p, 1e-5).unwrap();
            proptest::prop_assert!(err < 1e-4, "fd error {}", err);
        }
    }
}
