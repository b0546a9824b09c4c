//! Differentiable scalar values.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::{norm, tape, DiffError};

/// A real number whose dependence on the registered parameters is recorded
/// on the active tape. Constants carry no provenance and never allocate.
#[derive(Clone, Copy, Debug)]
pub struct DiffScalar {
    value: f64,
    idx: u32,
    epoch: u32,
}

impl DiffScalar {
    pub fn constant(value: f64) -> Self {
        DiffScalar {
            value,
            idx: tape::NONE,
            epoch: 0,
        }
    }

    pub(crate) fn recorded(value: f64, idx: u32, epoch: u32) -> Self {
        DiffScalar { value, idx, epoch }
    }

    pub fn value(self) -> f64 {
        self.value
    }

    pub fn is_const(self) -> bool {
        self.epoch == 0
    }

    pub(crate) fn index(self) -> u32 {
        self.idx
    }

    pub(crate) fn epoch(self) -> u32 {
        self.epoch
    }

    fn unary(self, value: f64, d: f64) -> Self {
        tape::check_epoch(self);
        if self.is_const() {
            Self::constant(value)
        } else {
            tape::push(value, self.idx, tape::NONE, d, 0.0)
        }
    }

    fn binary(a: Self, b: Self, value: f64, da: f64, db: f64) -> Self {
        tape::check_epoch(a);
        tape::check_epoch(b);
        match (a.is_const(), b.is_const()) {
            (true, true) => Self::constant(value),
            (false, true) => tape::push(value, a.idx, tape::NONE, da, 0.0),
            (true, false) => tape::push(value, b.idx, tape::NONE, db, 0.0),
            (false, false) => tape::push(value, a.idx, b.idx, da, db),
        }
    }

    pub fn exp(self) -> Self {
        let v = self.value.exp();
        self.unary(v, v)
    }

    pub fn ln(self) -> Self {
        self.try_ln().unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_ln(self) -> Result<Self, DiffError> {
        if self.value <= 0.0 {
            return Err(DiffError::DomainError {
                op: "ln",
                value: self.value,
            });
        }
        Ok(self.unary(self.value.ln(), 1.0 / self.value))
    }

    pub fn sqrt(self) -> Self {
        self.try_sqrt().unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_sqrt(self) -> Result<Self, DiffError> {
        if self.value <= 0.0 {
            return Err(DiffError::DomainError {
                op: "sqrt",
                value: self.value,
            });
        }
        let v = self.value.sqrt();
        Ok(self.unary(v, 0.5 / v))
    }

    pub fn try_div(self, rhs: Self) -> Result<Self, DiffError> {
        if rhs.value == 0.0 {
            return Err(DiffError::DomainError {
                op: "div",
                value: 0.0,
            });
        }
        Ok(Self::binary(
            self,
            rhs,
            self.value / rhs.value,
            1.0 / rhs.value,
            -self.value / (rhs.value * rhs.value),
        ))
    }

    pub fn powi(self, k: i32) -> Self {
        let v = self.value.powi(k);
        self.unary(v, f64::from(k) * self.value.powi(k - 1))
    }

    /// General real power; the base must be positive.
    pub fn powf(self, p: f64) -> Self {
        assert!(self.value > 0.0, "powf of non-positive base {}", self.value);
        self.unary(self.value.powf(p), p * self.value.powf(p - 1.0))
    }

    pub fn recip(self) -> Self {
        self.unary(1.0 / self.value, -1.0 / (self.value * self.value))
    }

    /// Branches on values; the loser contributes zero gradient.
    pub fn max(self, other: Self) -> Self {
        if self.value >= other.value {
            Self::binary(self, other, self.value, 1.0, 0.0)
        } else {
            Self::binary(self, other, other.value, 0.0, 1.0)
        }
    }

    /// Branches on values; the loser contributes zero gradient.
    pub fn min(self, other: Self) -> Self {
        if self.value <= other.value {
            Self::binary(self, other, self.value, 1.0, 0.0)
        } else {
            Self::binary(self, other, other.value, 0.0, 1.0)
        }
    }

    /// Standard normal density `phi(z)`.
    pub fn normal_pdf(self) -> Self {
        let v = norm::norm_pdf_f64(self.value);
        self.unary(v, -self.value * v)
    }

    /// Standard normal cdf `Phi(z)`; the derivative is `phi(z)`.
    pub fn normal_cdf(self) -> Self {
        self.unary(norm::norm_cdf_f64(self.value), norm::norm_pdf_f64(self.value))
    }

    /// Standard normal survival function `1 - Phi(z)`, accurate in the
    /// right tail.
    pub fn normal_sf(self) -> Self {
        self.unary(norm::norm_sf_f64(self.value), -norm::norm_pdf_f64(self.value))
    }

    /// Hazard `phi(z) / (1 - Phi(z))`, stable for large `z`.
    ///
    /// Its derivative satisfies `h'(z) = h(z) * (h(z) - z)`.
    pub fn normal_hazard(self) -> Self {
        let h = norm::norm_hazard_f64(self.value);
        self.unary(h, h * (h - self.value))
    }
}

impl From<f64> for DiffScalar {
    fn from(v: f64) -> Self {
        DiffScalar::constant(v)
    }
}

impl Add for DiffScalar {
    type Output = DiffScalar;
    fn add(self, rhs: Self) -> Self {
        Self::binary(self, rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for DiffScalar {
    type Output = DiffScalar;
    fn sub(self, rhs: Self) -> Self {
        Self::binary(self, rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for DiffScalar {
    type Output = DiffScalar;
    fn mul(self, rhs: Self) -> Self {
        Self::binary(self, rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for DiffScalar {
    type Output = DiffScalar;
    fn div(self, rhs: Self) -> Self {
        self.try_div(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Neg for DiffScalar {
    type Output = DiffScalar;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl Add<f64> for DiffScalar {
    type Output = DiffScalar;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl Sub<f64> for DiffScalar {
    type Output = DiffScalar;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl Mul<f64> for DiffScalar {
    type Output = DiffScalar;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl Div<f64> for DiffScalar {
    type Output = DiffScalar;
    fn div(self, rhs: f64) -> Self {
        assert!(rhs != 0.0, "division by zero constant");
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl Mul<DiffScalar> for f64 {
    type Output = DiffScalar;
    fn mul(self, rhs: DiffScalar) -> DiffScalar {
        rhs * self
    }
}

impl Add<DiffScalar> for f64 {
    type Output = DiffScalar;
    fn add(self, rhs: DiffScalar) -> DiffScalar {
        rhs + self
    }
}

impl Sub<DiffScalar> for f64 {
    type Output = DiffScalar;
    fn sub(self, rhs: DiffScalar) -> DiffScalar {
        -rhs + self
    }
}

impl AddAssign for DiffScalar {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for DiffScalar {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for DiffScalar {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}
