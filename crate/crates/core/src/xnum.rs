//! Extended-range signed arithmetic.
//!
//! The recursion tables built by the predictor modules hold values that scale
//! like `m!` for conditioning values up to a few hundred, far beyond the range
//! of `f64`. [`XReal`] stores a sign and the natural log of the magnitude, so
//! products become additions and sums are evaluated with log-sum-exp. The
//! module also provides log-domain combinatorics (`log_binomial`,
//! `falling_factorial`) used by the generating-function recursions.

use crate::error::{Error, Result};

/// Natural log of `f64::MAX`; conversions beyond this overflow.
const LOG_F64_MAX: f64 = 709.782712893384;

/// Opposite-sign addends whose log-magnitudes agree to within this are
/// treated as exact cancellation.
const CANCEL_EPS: f64 = 1e-15;

/// A signed real stored as sign and log-magnitude.
///
/// `sign == 0` represents exactly zero and `logmag` is then meaningless.
/// For nonzero values `logmag` is finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XReal {
    sign: i8,
    logmag: f64,
}

impl XReal {
    pub const ZERO: XReal = XReal { sign: 0, logmag: f64::NEG_INFINITY };
    pub const ONE: XReal = XReal { sign: 1, logmag: 0.0 };

    /// Build from sign and log-magnitude directly.
    pub fn from_sign_log(sign: i8, logmag: f64) -> XReal {
        if sign == 0 || logmag == f64::NEG_INFINITY {
            XReal::ZERO
        } else {
            debug_assert!(logmag.is_finite(), "logmag must be finite for nonzero XReal");
            XReal { sign: sign.signum(), logmag }
        }
    }

    pub fn from_real(x: f64) -> XReal {
        if x == 0.0 {
            XReal::ZERO
        } else if x > 0.0 {
            XReal { sign: 1, logmag: x.ln() }
        } else {
            XReal { sign: -1, logmag: (-x).ln() }
        }
    }

    /// Convert back to `f64`. Overflow is an error, never an infinity.
    pub fn to_real(self) -> Result<f64> {
        if self.sign == 0 {
            return Ok(0.0);
        }
        if self.logmag > LOG_F64_MAX {
            return Err(Error::Overflow(format!(
                "XReal log-magnitude {:.3} exceeds f64 range",
                self.logmag
            )));
        }
        Ok(self.sign as f64 * self.logmag.exp())
    }

    pub fn sign(self) -> i8 {
        self.sign
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    /// Natural log of the absolute value (`-inf` for zero).
    pub fn log_abs(self) -> f64 {
        if self.sign == 0 {
            f64::NEG_INFINITY
        } else {
            self.logmag
        }
    }

    pub fn abs(self) -> XReal {
        XReal { sign: self.sign.abs(), logmag: self.logmag }
    }

    pub fn neg(self) -> XReal {
        XReal { sign: -self.sign, logmag: self.logmag }
    }

    pub fn mul(self, rhs: XReal) -> XReal {
        if self.sign == 0 || rhs.sign == 0 {
            return XReal::ZERO;
        }
        XReal { sign: self.sign * rhs.sign, logmag: self.logmag + rhs.logmag }
    }

    /// Multiply by `e^shift` (rescaling in log domain).
    pub fn scale_log(self, shift: f64) -> XReal {
        if self.sign == 0 {
            return XReal::ZERO;
        }
        XReal { sign: self.sign, logmag: self.logmag + shift }
    }

    /// Signed addition via log-sum-exp on the larger magnitude.
    ///
    /// Opposite-sign operands with log-magnitudes equal to within 1e-15
    /// return exact zero, so downstream sign tests are deterministic.
    pub fn add(self, rhs: XReal) -> XReal {
        if self.sign == 0 {
            return rhs;
        }
        if rhs.sign == 0 {
            return self;
        }
        let (hi, lo) = if self.logmag >= rhs.logmag { (self, rhs) } else { (rhs, self) };
        let d = lo.logmag - hi.logmag; // <= 0
        if self.sign == rhs.sign {
            XReal { sign: hi.sign, logmag: hi.logmag + d.exp().ln_1p() }
        } else if -d <= CANCEL_EPS {
            XReal::ZERO
        } else {
            // ln(1 - e^d) computed as ln(-expm1(d)) for accuracy near d = 0.
            XReal { sign: hi.sign, logmag: hi.logmag + (-d.exp_m1()).ln() }
        }
    }

    pub fn sub(self, rhs: XReal) -> XReal {
        self.add(rhs.neg())
    }

    /// Quotient as a plain `f64`.
    pub fn ratio(self, denom: XReal) -> Result<f64> {
        if denom.sign == 0 {
            return Err(Error::Overflow("XReal ratio by zero".into()));
        }
        if self.sign == 0 {
            return Ok(0.0);
        }
        let d = self.logmag - denom.logmag;
        if d > LOG_F64_MAX {
            return Err(Error::Overflow(format!(
                "XReal ratio log-magnitude {d:.3} exceeds f64 range"
            )));
        }
        Ok((self.sign * denom.sign) as f64 * d.exp())
    }
}

/// Accumulator for signed sums that measures cancellation.
///
/// Positive and negative parts are folded separately with log-sum-exp and
/// combined once at the end. The reported loss is
/// `log10(max part / |result|)`: the number of decimal digits destroyed by
/// cancellation between the parts.
#[derive(Debug, Clone, Copy)]
pub struct SignedSum {
    pos: f64, // log of positive part, -inf if empty
    neg: f64, // log of negative part magnitude, -inf if empty
}

impl SignedSum {
    pub fn new() -> SignedSum {
        SignedSum { pos: f64::NEG_INFINITY, neg: f64::NEG_INFINITY }
    }

    pub fn push(&mut self, term: XReal) {
        match term.sign {
            0 => {}
            1 => self.pos = log_add(self.pos, term.logmag),
            _ => self.neg = log_add(self.neg, term.logmag),
        }
    }

    /// Final value and cancellation loss in decimal digits.
    pub fn finish(self) -> (XReal, f64) {
        let p = XReal::from_sign_log(if self.pos.is_finite() { 1 } else { 0 }, self.pos);
        let n = XReal::from_sign_log(if self.neg.is_finite() { -1 } else { 0 }, self.neg);
        let total = p.add(n);
        let peak = self.pos.max(self.neg);
        let loss = if peak == f64::NEG_INFINITY {
            0.0
        } else if total.is_zero() {
            f64::INFINITY
        } else {
            ((peak - total.log_abs()) * std::f64::consts::LOG10_E).max(0.0)
        };
        (total, loss)
    }
}

impl Default for SignedSum {
    fn default() -> Self {
        Self::new()
    }
}

/// log(e^a + e^b) guarding -inf operands.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// ln C(n, k), exact via log-gamma.
pub fn log_binomial(n: u64, k: i64) -> Result<f64> {
    if k < 0 || k as u64 > n {
        return Err(Error::InvalidArgument(format!("log_binomial: k = {k} out of range for n = {n}")));
    }
    let k = k as u64;
    if k == 0 || k == n {
        return Ok(0.0);
    }
    Ok(ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0))
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Falling factorial x(x-1)…(x-j+1) as a plain `f64` (j = 0 gives 1).
///
/// Direct product for j ≤ 64; signed log-gamma beyond that. Results larger
/// than `f64` range saturate to signed infinity.
pub fn falling_factorial(x: f64, j: u32) -> f64 {
    if j <= 64 {
        let mut acc = 1.0;
        for i in 0..j {
            acc *= x - i as f64;
        }
        acc
    } else {
        let xf = xf_falling_factorial(x, j);
        match xf.to_real() {
            Ok(v) => v,
            Err(_) => xf.sign() as f64 * f64::INFINITY,
        }
    }
}

/// Falling factorial in extended range: x(x-1)…(x-j+1) as [`XReal`].
///
/// Signed log-gamma route: |ff| = Γ(x+1)/Γ(x+1-j) with the sign recovered
/// from the count of negative factors. Integer x in [0, j) makes a factor
/// exactly zero.
pub fn xf_falling_factorial(x: f64, j: u32) -> XReal {
    if j == 0 {
        return XReal::ONE;
    }
    if j <= 64 {
        // Direct product in log domain, factor by factor (exact signs).
        let mut sign: i8 = 1;
        let mut logmag = 0.0;
        for i in 0..j {
            let f = x - i as f64;
            if f == 0.0 {
                return XReal::ZERO;
            }
            if f < 0.0 {
                sign = -sign;
            }
            logmag += f.abs().ln();
        }
        return XReal::from_sign_log(sign, logmag);
    }
    let (lg_num, sg_num) = lgamma_sign(x + 1.0);
    let (lg_den, sg_den) = lgamma_sign(x + 1.0 - j as f64);
    if sg_num == 0 || sg_den == 0 {
        // Γ pole in the numerator means a zero factor appeared in the product.
        return if sg_num == 0 { XReal::ZERO } else { XReal::ZERO };
    }
    XReal::from_sign_log(sg_num * sg_den, lg_num - lg_den)
}

/// (ln |Γ(x)|, sign of Γ(x)); sign 0 at the poles (x a nonpositive integer).
fn lgamma_sign(x: f64) -> (f64, i8) {
    if x <= 0.0 && x == x.floor() {
        return (f64::INFINITY, 0);
    }
    let (lg, s) = libm::lgamma_r(x);
    (lg, s as i8)
}
