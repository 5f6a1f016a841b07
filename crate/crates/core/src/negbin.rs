//! Exact conditional predictor and conditional variance for
//! non-homogeneous negative-binomial clusters.
//!
//! Conditional on the arrival configuration V, the paid count M(t) is
//! NB(R, p) with R = Σⱼ μ(t−Vⱼ). The conditional law given {M(t) = m} is
//! assembled from derivatives of the joint probability generating function
//! G(z₁, z₂) = E[z₁^{R(t)} z₂^{R(t+s)}] at (p, 1):
//!
//! ```text
//! H_j^(ℓ)(p) = ∫ ff(μ(t+s−v), j) · ff(μ(t−v), ℓ) · p^{μ(t−v)−ℓ} Λ(dv)
//! G^(ℓ,0)    = Σ_{k<ℓ} C(ℓ-1,k) G^(k,0) H₀^(ℓ-k)     (and the mixed
//! G^(ℓ,1), G^(ℓ,2) analogues)
//! ```
//!
//! where ff is the falling factorial. Falling factorials alternate in sign
//! once the derivative order passes μ, so these tables are genuinely
//! signed: sums run through [`SignedSum`] and every entry records how many
//! decimal digits were lost to cancellation. Entries losing more than 12
//! digits are flagged and the flag propagates to any result touching them.
//! Conditioning values m ≤ 60 are the validated envelope; beyond that the
//! result always carries the precision warning.

use crate::error::{Error, Result};
use crate::model::{table_fingerprint, window_breakpoints, ClusterModel, Scenario};
use crate::prediction::{DiagnosticFlags, PredictionResult};
use crate::quadrature::{integrate_log_scaled, QuadratureConfig};
use crate::xnum::{ln_gamma, log_binomial, xf_falling_factorial, SignedSum, XReal};

const M_MAX_GUARD: u64 = 10_000;
/// Cancellation beyond this many decimal digits flags the entry.
const LOSS_LIMIT: f64 = 12.0;
/// Conditioning values beyond this always carry the precision warning.
const VALIDATED_M: u64 = 60;
const EXTREME_TAIL_LOG: f64 = -690.77552789821;

#[derive(Debug, Clone, Copy)]
struct Entry {
    value: XReal,
    /// Decimal digits lost to cancellation while forming this entry.
    loss: f64,
    /// Own loss above the limit, or any contributing entry flagged.
    flagged: bool,
}

/// Derivative tables for one (Λ, μ, p, t, s) configuration.
#[derive(Debug, Clone)]
pub struct NBTables {
    m_max: u64,
    p: f64,
    /// H[j][ℓ] = H_j^(ℓ)(p), j = 0,1,2, ℓ = 0..=m_max+2.
    h: [Vec<Entry>; 3],
    /// g[ℓ][j] = G^(ℓ,j)(p, 1), ℓ = 0..=m_max+2, j = 0,1,2.
    g: Vec<[Entry; 3]>,
    degenerate: bool,
    fingerprint: u64,
}

/// Build the pgf derivative tables for conditioning values up to `m_max`.
pub fn build_nb_tables(sc: &Scenario, m_max: u64, cfg: &QuadratureConfig) -> Result<NBTables> {
    let (mu, p) = match &sc.cluster {
        ClusterModel::NegBinomial { mu, p } => (mu.clone(), *p),
        _ => {
            return Err(Error::InvalidArgument(
                "build_nb_tables requires a negbinomial cluster family".into(),
            ))
        }
    };
    if m_max > M_MAX_GUARD {
        return Err(Error::InvalidArgument(format!(
            "m_max = {m_max} exceeds the table size guard {M_MAX_GUARD}"
        )));
    }
    cfg.validate()?;
    let (t, s) = (sc.t, sc.s);
    let breaks = window_breakpoints(&mu, &[t, t + s], 0.0, 1.0);
    let lambda_total = sc.center_mass();
    let ln_p = p.ln();
    let len = (m_max + 3) as usize;

    let mut h: [Vec<Entry>; 3] =
        [Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len)];
    for (j, hj) in h.iter_mut().enumerate() {
        for l in 0..len {
            let g_log = |v: f64| -> XReal {
                let m2 = mu.eval(t + s - v);
                let m1 = mu.eval(t - v);
                let f2 = xf_falling_factorial(m2, j as u32);
                if f2.is_zero() {
                    return XReal::ZERO;
                }
                let f1 = xf_falling_factorial(m1, l as u32);
                if f1.is_zero() {
                    return XReal::ZERO;
                }
                f2.mul(f1).scale_log((m1 - l as f64) * ln_p)
            };
            let (value, loss) = integrate_log_scaled(&g_log, &sc.center, 0.0, 1.0, &breaks, cfg)?;
            hj.push(Entry { value, loss, flagged: loss > LOSS_LIMIT });
        }
    }

    // G recursion. G^(0,0)(p,1) = exp(H₀(p) − Λ(1)).
    let h00 = h[0][0].value.to_real()?;
    let mut g: Vec<[Entry; 3]> = Vec::with_capacity(len);
    let g00 = Entry {
        value: XReal::from_sign_log(1, h00 - lambda_total),
        loss: 0.0,
        flagged: h[0][0].flagged,
    };
    let g01 = Entry {
        value: g00.value.mul(h[1][0].value),
        loss: 0.0,
        flagged: g00.flagged || h[1][0].flagged,
    };
    let g02 = {
        let mut s = SignedSum::new();
        s.push(g01.value.mul(h[1][0].value));
        s.push(g00.value.mul(h[2][0].value));
        let (value, loss) = s.finish();
        Entry {
            value,
            loss,
            flagged: g01.flagged || g00.flagged || h[2][0].flagged || loss > LOSS_LIMIT,
        }
    };
    g.push([g00, g01, g02]);
    for l in 1..len {
        let mut s0 = SignedSum::new();
        let mut flagged = false;
        for k in 0..l {
            let w = log_binomial((l - 1) as u64, k as i64)?;
            s0.push(g[k][0].value.mul(h[0][l - k].value).scale_log(w));
            flagged |= g[k][0].flagged || h[0][l - k].flagged;
        }
        let (v0, loss0) = s0.finish();
        let g0 = Entry { value: v0, loss: loss0, flagged: flagged || loss0 > LOSS_LIMIT };

        let mut s1 = SignedSum::new();
        let mut flagged1 = false;
        for k in 0..=l {
            let w = log_binomial(l as u64, k as i64)?;
            let gk0 = if k == l { g0 } else { g[k][0] };
            s1.push(gk0.value.mul(h[1][l - k].value).scale_log(w));
            flagged1 |= gk0.flagged || h[1][l - k].flagged;
        }
        let (v1, loss1) = s1.finish();
        let g1 = Entry { value: v1, loss: loss1, flagged: flagged1 || loss1 > LOSS_LIMIT };

        let mut s2 = SignedSum::new();
        let mut flagged2 = false;
        for k in 0..=l {
            let w = log_binomial(l as u64, k as i64)?;
            let (gk0, gk1) = if k == l { (g0, g1) } else { (g[k][0], g[k][1]) };
            s2.push(gk1.value.mul(h[1][l - k].value).scale_log(w));
            s2.push(gk0.value.mul(h[2][l - k].value).scale_log(w));
            flagged2 |= gk0.flagged || gk1.flagged || h[1][l - k].flagged || h[2][l - k].flagged;
        }
        let (v2, loss2) = s2.finish();
        let g2 = Entry { value: v2, loss: loss2, flagged: flagged2 || loss2 > LOSS_LIMIT };

        g.push([g0, g1, g2]);
    }

    Ok(NBTables {
        m_max,
        p,
        h,
        g,
        degenerate: sc.window_is_degenerate(),
        fingerprint: table_fingerprint(sc),
    })
}

/// Result of assembling the Leibniz sum (p^{m-1} G_R(p))^{(m)} scaled by p.
struct Denominator {
    value: XReal,
    flagged: bool,
}

impl NBTables {
    pub fn m_max(&self) -> u64 {
        self.m_max
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, sc: &Scenario) -> bool {
        self.fingerprint == table_fingerprint(sc)
    }

    /// Largest cancellation loss (decimal digits) across the table entries
    /// needed for conditioning values up to `m`.
    pub fn max_loss_through(&self, m: u64) -> f64 {
        let hi = ((m + 2) as usize).min(self.g.len() - 1);
        let mut worst: f64 = 0.0;
        for l in 0..=hi {
            for j in 0..3 {
                worst = worst.max(self.g[l][j].loss).max(self.h[j][l].loss);
            }
        }
        worst
    }

    /// p·(p^{m-1} G_R(p))^{(m)}_p via the Leibniz expansion; the natural
    /// truncation ff(m-1, k) = 0 for k ≥ m bounds the sum, and m = 0
    /// reduces to the direct pgf evaluation G_R(p).
    fn denominator(&self, m: u64) -> Result<Denominator> {
        let ln_p = self.p.ln();
        let mut sum = SignedSum::new();
        let mut flagged = false;
        let k_hi = if m == 0 { 0 } else { m - 1 };
        for k in 0..=k_hi {
            let a = (m - k) as usize;
            let ff = xf_falling_factorial(m as f64 - 1.0, k as u32);
            if ff.is_zero() {
                continue;
            }
            let w = log_binomial(m, k as i64)? + (m - k) as f64 * ln_p;
            sum.push(self.g[a][0].value.mul(ff).scale_log(w));
            flagged |= self.g[a][0].flagged;
        }
        let (value, loss) = sum.finish();
        Ok(Denominator { value, flagged: flagged || loss > LOSS_LIMIT })
    }

    /// P(M(t) = m), clamped into [0, 1].
    pub fn pmf(&self, m: u64) -> Result<f64> {
        Ok(self.pmf_detail(m)?.0)
    }

    /// P(M(t) = m) together with the diagnostic flags met on the way.
    pub fn pmf_detail(&self, m: u64) -> Result<(f64, DiagnosticFlags)> {
        if m > self.m_max {
            return Err(Error::TableRange { m, m_max: self.m_max });
        }
        let mut flags = DiagnosticFlags::default();
        if m > VALIDATED_M {
            flags.precision_warning = true;
        }
        let den = self.denominator(m)?;
        flags.precision_warning |= den.flagged;
        if den.value.sign() < 0 {
            // Probabilities cannot be negative; cancellation ate the value.
            flags.precision_warning = true;
            return Ok((0.0, flags));
        }
        if den.value.is_zero() {
            return Ok((0.0, flags));
        }
        let q = 1.0 - self.p;
        let lp = m as f64 * q.ln() - ln_gamma(m as f64 + 1.0) + den.value.log_abs();
        Ok((lp.exp().min(1.0), flags))
    }

    /// ln P(M(t) = m); `None` when the probability is zero (or destroyed
    /// by cancellation).
    pub fn log_pmf(&self, m: u64) -> Result<Option<f64>> {
        if m > self.m_max {
            return Err(Error::TableRange { m, m_max: self.m_max });
        }
        let den = self.denominator(m)?;
        if den.value.sign() <= 0 {
            return Ok(None);
        }
        let q = 1.0 - self.p;
        Ok(Some(m as f64 * q.ln() - ln_gamma(m as f64 + 1.0) + den.value.log_abs()))
    }

    /// Conditional mean and variance of M(t, t+s] given {M(t) = m}.
    pub fn predict(&self, m: u64) -> Result<PredictionResult> {
        if m > self.m_max {
            return Err(Error::TableRange { m, m_max: self.m_max });
        }
        let p = self.p;
        let q = 1.0 - p;
        let ln_p = p.ln();
        let mut flags = DiagnosticFlags::default();
        if m > VALIDATED_M {
            flags.precision_warning = true;
        }

        let den = self.denominator(m)?;
        flags.precision_warning |= den.flagged;
        if den.value.is_zero() {
            return Err(Error::NullConditioning { m });
        }
        let log_pmf = if den.value.sign() > 0 {
            Some(m as f64 * q.ln() - ln_gamma(m as f64 + 1.0) + den.value.log_abs())
        } else {
            flags.precision_warning = true;
            None
        };
        if log_pmf.map_or(true, |l| l < EXTREME_TAIL_LOG) {
            flags.extreme_tail = true;
        }

        if self.degenerate {
            return Ok(PredictionResult {
                conditioning: m,
                mean: 0.0,
                variance: 0.0,
                log_pmf,
                flags,
            });
        }

        // Leibniz weights shared by both moment sums.
        let k_hi = if m == 0 { 0 } else { m - 1 };
        let mut mean_sum = SignedSum::new();
        let mut sec_sum = SignedSum::new();
        for k in 0..=k_hi {
            let a = (m - k) as usize;
            let ff = xf_falling_factorial(m as f64 - 1.0, k as u32);
            if ff.is_zero() {
                continue;
            }
            let base = log_binomial(m, k as i64)?;
            flags.precision_warning |= self.g[a][0].flagged
                || self.g[a + 1][0].flagged
                || self.g[a][1].flagged
                || self.g[a + 2][0].flagged
                || self.g[a + 1][1].flagged
                || self.g[a][2].flagged;

            // Mean: −q p^{m−k−1} { a·G^(a,0) + p·G^(a+1,0) − G^(a,1) }.
            let w1 = base + (m - k) as f64 * ln_p - ln_p;
            let af = a as f64;
            for (coef, entry) in [
                (-q * af, self.g[a][0]),
                (-q * p, self.g[a + 1][0]),
                (q, self.g[a][1]),
            ] {
                mean_sum.push(entry.value.mul(ff).mul(XReal::from_real(coef)).scale_log(w1));
            }

            // Second moment: q p^{m−k−2} { a(aq−1)·G^(a,0) + p(2aq−p)·G^(a+1,0)
            //   − (2aq−1−q)·G^(a,1) + q(p²·G^(a+2,0) − 2p·G^(a+1,1) + G^(a,2)) }.
            let w2 = base + (m - k) as f64 * ln_p - 2.0 * ln_p;
            for (coef, entry) in [
                (q * af * (af * q - 1.0), self.g[a][0]),
                (q * p * (2.0 * af * q - p), self.g[a + 1][0]),
                (-q * (2.0 * af * q - 1.0 - q), self.g[a][1]),
                (q * q * p * p, self.g[a + 2][0]),
                (-2.0 * q * q * p, self.g[a + 1][1]),
                (q * q, self.g[a][2]),
            ] {
                sec_sum.push(entry.value.mul(ff).mul(XReal::from_real(coef)).scale_log(w2));
            }
        }
        let (mean_num, mean_loss) = mean_sum.finish();
        let (sec_num, sec_loss) = sec_sum.finish();
        flags.precision_warning |=
            (mean_loss > LOSS_LIMIT && !mean_num.is_zero()) || (sec_loss > LOSS_LIMIT && !sec_num.is_zero());

        let mut mean = mean_num.ratio(den.value)?;
        if mean < 0.0 {
            if mean < -1e-9 {
                flags.precision_warning = true;
            }
            flags.mean_clamped = true;
            mean = 0.0;
        }
        let secmom = sec_num.ratio(den.value)?;
        let mut variance = secmom - mean * mean;
        if variance < 0.0 {
            if variance < -1e-9 {
                flags.precision_warning = true;
            }
            flags.variance_clamped = true;
            variance = 0.0;
        }
        Ok(PredictionResult { conditioning: m, mean, variance, log_pmf, flags })
    }
}
