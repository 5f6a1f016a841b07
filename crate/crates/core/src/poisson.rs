//! Exact conditional predictor and conditional variance for
//! non-homogeneous Poisson clusters.
//!
//! Conditional on the arrival configuration V, the paid count M(t) is
//! Poisson(R) with R = Σⱼ μ(t−Vⱼ) and the future increment is Poisson(ΔR)
//! with ΔR = Σⱼ Δμ(Vⱼ), Δμ(v) = μ(t+s−v) − μ(t−v), independent of M(t).
//! The tables hold
//!
//! ```text
//! B[ℓ][j] = E[ Rˡ ΔRʲ e^{−R} ]        (all nonnegative)
//! c[j][ℓ] = ∫ Δμ(v)ʲ μ(t−v)ˡ e^{−μ(t−v)} Λ(dv)
//! ```
//!
//! built by Leibniz recursions in extended-range log arithmetic. Working
//! with the increment ΔR instead of the pair (R(t), R(t+s)) keeps every
//! recursion term nonnegative, so there is no cancellation; the predictor
//! is a ratio of positive quantities:
//!
//! ```text
//! P(M(t) = m)   = B[m][0] / m!
//! E[incr | m]   = B[m][1] / B[m][0]
//! Var(incr | m) = (B[m][2] + B[m][1]) / B[m][0] − mean²
//! ```
//!
//! The algebraically equivalent signed route that differentiates the joint
//! transform of (R(t), R(t+s)) directly is kept in [`DifferenceFormTables`]
//! as a cross-check of the reformulation.

use crate::error::{Error, Result};
use crate::model::{table_fingerprint, window_breakpoints, ClusterModel, Scenario};
use crate::prediction::{DiagnosticFlags, PredictionResult};
use crate::quadrature::{integrate_log_scaled, QuadratureConfig};
use crate::xnum::{ln_gamma, log_binomial, XReal};

/// Largest accepted table size.
const M_MAX_GUARD: u64 = 10_000;
/// ln(1e-300): conditioning events rarer than this are flagged as extreme.
const EXTREME_TAIL_LOG: f64 = -690.77552789821;

/// Recursion tables for one (Λ, μ, t, s) configuration.
#[derive(Debug, Clone)]
pub struct PoissonTables {
    m_max: u64,
    /// c[j][ℓ] for j = 0,1,2, ℓ = 0..=m_max+2; nonnegative.
    c: [Vec<XReal>; 3],
    /// b[ℓ] = (B[ℓ][0], B[ℓ][1], B[ℓ][2]) for ℓ = 0..=m_max; nonnegative.
    b: Vec<[XReal; 3]>,
    degenerate: bool,
    fingerprint: u64,
}

/// Build the quadrature coefficients and recursion tables for conditioning
/// values up to `m_max`.
pub fn build_poisson_tables(
    sc: &Scenario,
    m_max: u64,
    cfg: &QuadratureConfig,
) -> Result<PoissonTables> {
    if !matches!(sc.cluster, ClusterModel::Poisson { .. }) {
        return Err(Error::InvalidArgument(
            "build_poisson_tables requires a poisson cluster family".into(),
        ));
    }
    if m_max > M_MAX_GUARD {
        return Err(Error::InvalidArgument(format!(
            "m_max = {m_max} exceeds the table size guard {M_MAX_GUARD}"
        )));
    }
    cfg.validate()?;
    let mu = sc.cluster.mu().clone();
    let (t, s) = (sc.t, sc.s);
    let breaks = window_breakpoints(&mu, &[t, t + s], 0.0, 1.0);
    let lambda_total = sc.center_mass();

    // log Δμ(v) and log μ(t−v); -inf encodes a zero factor.
    let log_delta = |v: f64| -> f64 {
        let d = (mu.eval(t + s - v) - mu.eval(t - v)).max(0.0);
        if d > 0.0 {
            d.ln()
        } else {
            f64::NEG_INFINITY
        }
    };
    let log_mu_t = |v: f64| -> f64 {
        let m = mu.eval(t - v);
        if m > 0.0 {
            m.ln()
        } else {
            f64::NEG_INFINITY
        }
    };

    let len = (m_max + 3) as usize;
    let mut c: [Vec<XReal>; 3] =
        [Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len)];
    for (j, cj) in c.iter_mut().enumerate() {
        for l in 0..len {
            let g = |v: f64| -> XReal {
                let ld = log_delta(v);
                let lm = log_mu_t(v);
                if (j > 0 && ld == f64::NEG_INFINITY) || (l > 0 && lm == f64::NEG_INFINITY) {
                    return XReal::ZERO;
                }
                let jl = if j > 0 { j as f64 * ld } else { 0.0 };
                let ll = if l > 0 { l as f64 * lm } else { 0.0 };
                XReal::from_sign_log(1, jl + ll - mu.eval(t - v))
            };
            let (val, _) = integrate_log_scaled(&g, &sc.center, 0.0, 1.0, &breaks, cfg)?;
            cj.push(val);
        }
    }

    let b = build_b_tables(&c, lambda_total, m_max)?;
    Ok(PoissonTables {
        m_max,
        c,
        b,
        degenerate: sc.window_is_degenerate(),
        fingerprint: table_fingerprint(sc),
    })
}

fn build_b_tables(c: &[Vec<XReal>; 3], lambda_total: f64, m_max: u64) -> Result<Vec<[XReal; 3]>> {
    let n = (m_max + 1) as usize;
    let mut b: Vec<[XReal; 3]> = Vec::with_capacity(n);
    let c00 = c[0][0].to_real()?;
    b.push([XReal::from_sign_log(1, c00 - lambda_total), XReal::ZERO, XReal::ZERO]);
    // Fill B[0][1], B[0][2] from the same Leibniz forms with ℓ = 0.
    b[0][1] = b[0][0].mul(c[1][0]);
    b[0][2] = b[0][1].mul(c[1][0]).add(b[0][0].mul(c[2][0]));
    for l in 1..n {
        let mut b0 = XReal::ZERO;
        for k in 0..l {
            let w = log_binomial((l - 1) as u64, k as i64)?;
            b0 = b0.add(b[k][0].mul(c[0][l - k]).scale_log(w));
        }
        let mut b1 = XReal::ZERO;
        let mut b2 = XReal::ZERO;
        for k in 0..=l {
            let w = log_binomial(l as u64, k as i64)?;
            let bk0 = if k == l { b0 } else { b[k][0] };
            b1 = b1.add(bk0.mul(c[1][l - k]).scale_log(w));
        }
        for k in 0..=l {
            let w = log_binomial(l as u64, k as i64)?;
            let (bk0, bk1) = if k == l { (b0, b1) } else { (b[k][0], b[k][1]) };
            b2 = b2.add(bk1.mul(c[1][l - k]).add(bk0.mul(c[2][l - k])).scale_log(w));
        }
        b.push([b0, b1, b2]);
    }
    Ok(b)
}

impl PoissonTables {
    pub fn m_max(&self) -> u64 {
        self.m_max
    }

    /// Quadrature coefficient c[j][ℓ] (diagnostic access).
    pub fn coefficient(&self, j: usize, l: u64) -> Option<XReal> {
        self.c.get(j).and_then(|cj| cj.get(l as usize)).copied()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// True when the tables were built for this scenario's (Λ, μ, t, s).
    pub fn matches(&self, sc: &Scenario) -> bool {
        self.fingerprint == table_fingerprint(sc)
    }

    /// P(M(t) = m) = B[m][0] / m!.
    pub fn pmf(&self, m: u64) -> Result<f64> {
        let lp = self.log_pmf(m)?;
        Ok(lp.map_or(0.0, |l| l.exp().min(1.0)))
    }

    /// ln P(M(t) = m); `None` for an exactly-zero probability.
    pub fn log_pmf(&self, m: u64) -> Result<Option<f64>> {
        if m > self.m_max {
            return Err(Error::TableRange { m, m_max: self.m_max });
        }
        let b0 = self.b[m as usize][0];
        if b0.is_zero() {
            return Ok(None);
        }
        Ok(Some(b0.log_abs() - ln_gamma(m as f64 + 1.0)))
    }

    /// Conditional mean and variance of M(t, t+s] given {M(t) = m}.
    pub fn predict(&self, m: u64) -> Result<PredictionResult> {
        if m > self.m_max {
            return Err(Error::TableRange { m, m_max: self.m_max });
        }
        let [b0, b1, b2] = self.b[m as usize];
        if b0.is_zero() {
            return Err(Error::NullConditioning { m });
        }
        let mut flags = DiagnosticFlags::default();
        let log_pmf = b0.log_abs() - ln_gamma(m as f64 + 1.0);
        if log_pmf < EXTREME_TAIL_LOG {
            flags.extreme_tail = true;
        }
        if self.degenerate {
            return Ok(PredictionResult {
                conditioning: m,
                mean: 0.0,
                variance: 0.0,
                log_pmf: Some(log_pmf),
                flags,
            });
        }
        let mean = b1.ratio(b0)?;
        let second = b2.add(b1).ratio(b0)?;
        let mut variance = second - mean * mean;
        if variance < 0.0 {
            if variance < -1e-9 {
                flags.precision_warning = true;
            }
            flags.variance_clamped = true;
            variance = 0.0;
        }
        Ok(PredictionResult { conditioning: m, mean, variance, log_pmf: Some(log_pmf), flags })
    }
}

/// One table build at `m_hi + 2`, then per-m extraction; rows ordered by m.
pub fn predict_poisson_curve(
    sc: &Scenario,
    m_lo: u64,
    m_hi: u64,
    cfg: &QuadratureConfig,
) -> Result<Vec<PredictionResult>> {
    if m_lo > m_hi {
        return Err(Error::InvalidArgument(format!(
            "m range out of order ({m_lo} > {m_hi})"
        )));
    }
    let tables = build_poisson_tables(sc, m_hi + 2, cfg)?;
    (m_lo..=m_hi).map(|m| tables.predict(m)).collect()
}

/// Signed reference route: derivative tables of the joint transform of
/// (R(t), R(t+s)) rather than (R(t), ΔR).
///
/// The ψ-derivatives alternate in sign, so the predictor appears as a
/// signed difference of large terms. This form exists to cross-check the
/// cancellation-free tables; it is not used in production paths.
#[derive(Debug, Clone)]
pub struct DifferenceFormTables {
    m_max: u64,
    /// φ^{(ℓ,0)}(1,0), φ^{(ℓ,1)}(1,0), φ^{(ℓ,2)}(1,0) for ℓ = 0..=m_max+2.
    phi: Vec<[XReal; 3]>,
}

impl DifferenceFormTables {
    pub fn build(sc: &Scenario, m_max: u64, cfg: &QuadratureConfig) -> Result<Self> {
        if !matches!(sc.cluster, ClusterModel::Poisson { .. }) {
            return Err(Error::InvalidArgument(
                "difference-form tables require a poisson cluster family".into(),
            ));
        }
        if m_max > M_MAX_GUARD {
            return Err(Error::InvalidArgument(format!(
                "m_max = {m_max} exceeds the table size guard {M_MAX_GUARD}"
            )));
        }
        let mu = sc.cluster.mu().clone();
        let (t, s) = (sc.t, sc.s);
        let breaks = window_breakpoints(&mu, &[t, t + s], 0.0, 1.0);
        let lambda_total = sc.center_mass();
        let len = (m_max + 3) as usize;

        // ψ_j^{(ℓ)}(1) = (−1)^{j+ℓ} ∫ μ(t+s−v)^j μ(t−v)^ℓ e^{−μ(t−v)} Λ(dv).
        let mut psi: [Vec<XReal>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (j, pj) in psi.iter_mut().enumerate() {
            for l in 0..len {
                let g = |v: f64| -> XReal {
                    let m2 = mu.eval(t + s - v);
                    let m1 = mu.eval(t - v);
                    if (j > 0 && m2 <= 0.0) || (l > 0 && m1 <= 0.0) {
                        return XReal::ZERO;
                    }
                    let jl = if j > 0 { j as f64 * m2.ln() } else { 0.0 };
                    let ll = if l > 0 { l as f64 * m1.ln() } else { 0.0 };
                    XReal::from_sign_log(1, jl + ll - m1)
                };
                let (mag, _) = integrate_log_scaled(&g, &sc.center, 0.0, 1.0, &breaks, cfg)?;
                let sign = if (j + l) % 2 == 0 { 1 } else { -1 };
                pj.push(if mag.is_zero() {
                    XReal::ZERO
                } else {
                    XReal::from_sign_log(sign, mag.log_abs())
                });
            }
        }

        let psi00 = psi[0][0].to_real()?;
        let mut phi: Vec<[XReal; 3]> = Vec::with_capacity(len);
        phi.push([XReal::from_sign_log(1, psi00 - lambda_total), XReal::ZERO, XReal::ZERO]);
        phi[0][1] = phi[0][0].mul(psi[1][0]);
        phi[0][2] = phi[0][1].mul(psi[1][0]).add(phi[0][0].mul(psi[2][0]));
        for l in 1..len {
            let mut p0 = XReal::ZERO;
            for k in 0..l {
                let w = log_binomial((l - 1) as u64, k as i64)?;
                p0 = p0.add(phi[k][0].mul(psi[0][l - k]).scale_log(w));
            }
            let mut p1 = XReal::ZERO;
            for k in 0..=l {
                let w = log_binomial(l as u64, k as i64)?;
                let pk0 = if k == l { p0 } else { phi[k][0] };
                p1 = p1.add(pk0.mul(psi[1][l - k]).scale_log(w));
            }
            let mut p2 = XReal::ZERO;
            for k in 0..=l {
                let w = log_binomial(l as u64, k as i64)?;
                let (pk0, pk1) = if k == l { (p0, p1) } else { (phi[k][0], phi[k][1]) };
                p2 = p2.add(pk1.mul(psi[1][l - k]).add(pk0.mul(psi[2][l - k])).scale_log(w));
            }
            phi.push([p0, p1, p2]);
        }
        Ok(DifferenceFormTables { m_max, phi })
    }

    /// Predictor mean and conditional variance assembled from the signed
    /// derivative tables.
    pub fn predict(&self, m: u64) -> Result<(f64, f64)> {
        if m > self.m_max {
            return Err(Error::TableRange { m, m_max: self.m_max });
        }
        let i = m as usize;
        let denom = self.phi[i][0];
        if denom.is_zero() {
            return Err(Error::NullConditioning { m });
        }
        let mean = self.phi[i + 1][0].sub(self.phi[i][1]).ratio(denom)?;
        let quad = self.phi[i + 2][0]
            .sub(self.phi[i + 1][1].scale_log(std::f64::consts::LN_2))
            .add(self.phi[i][2])
            .ratio(denom)?;
        Ok((mean, quad + mean - mean * mean))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayDistribution, MeanValueFunction};
    use crate::montecarlo::OracleSamples;
    use crate::quadrature::integrate_against;

    fn qcfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn scenario(center_a: f64, mu: MeanValueFunction, t: f64, s: f64) -> Scenario {
        Scenario {
            center: MeanValueFunction::Linear { a: center_a },
            cluster: ClusterModel::Poisson { mu },
            delay: DelayDistribution::None,
            t,
            s,
        }
    }

    #[test]
    fn c00_and_b00_closed_forms() {
        // c[0][0] = ∫ e^{-5(1-v)} 30 dv = 6(1-e^{-5}); B[0][0] = e^{c00 - 30}.
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 5, &qcfg()).unwrap();
        let c00 = tab.c[0][0].to_real().unwrap();
        let expect = 6.0 * (1.0 - (-5.0f64).exp());
        assert!((c00 - expect).abs() < 1e-11, "{c00} vs {expect}");
        assert!((tab.b[0][0].log_abs() - (expect - 30.0)).abs() < 1e-11);
    }

    #[test]
    fn zero_center_degenerates_cleanly() {
        let sc = scenario(0.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 10, &qcfg()).unwrap();
        assert!((tab.pmf(0).unwrap() - 1.0).abs() < 1e-14);
        for m in 1..=10 {
            assert_eq!(tab.pmf(m).unwrap(), 0.0);
            assert!(matches!(tab.predict(m), Err(Error::NullConditioning { .. })));
        }
        // Conditioning on m = 0 is fine: nothing ever happens.
        let r = tab.predict(0).unwrap();
        assert_eq!((r.mean, r.variance), (0.0, 0.0));
    }

    #[test]
    fn m_max_guard_rejects_huge_tables() {
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        assert!(build_poisson_tables(&sc, 10_001, &qcfg()).is_err());
    }

    #[test]
    fn pmf_normalizes() {
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 600, &qcfg()).unwrap();
        let total: f64 = (0..=600).map(|m| tab.pmf(m).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-8, "sum = {total}");
    }

    #[test]
    fn tower_property_against_closed_form() {
        // Σ_m pmf(m)·mean(m) = ∫ Δμ dΛ = 150 for Λ = 30x, μ = 5x, t = s = 1.
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 400, &qcfg()).unwrap();
        let mut acc = 0.0;
        for m in 0..=400 {
            let p = tab.pmf(m).unwrap();
            if p > 0.0 {
                acc += p * tab.predict(m).unwrap().mean;
            }
        }
        let expect = integrate_against(
            &|v| sc.window_delta(v),
            &sc.center,
            0.0,
            1.0,
            &qcfg(),
        )
        .unwrap();
        assert!((expect - 150.0).abs() < 1e-9);
        assert!((acc - expect).abs() < 1e-6 * expect, "{acc} vs {expect}");
    }

    #[test]
    fn degenerate_capped_window_is_exactly_zero() {
        let sc = scenario(30.0, MeanValueFunction::CappedLinear { a: 5.0, x0: 1.0 }, 2.0, 1.0);
        let tab = build_poisson_tables(&sc, 40, &qcfg()).unwrap();
        for m in 0..=40 {
            if tab.pmf(m).unwrap() > 0.0 {
                let r = tab.predict(m).unwrap();
                assert_eq!((r.mean, r.variance), (0.0, 0.0), "m = {m}");
            }
        }
    }

    #[test]
    fn curve_is_consistent_with_single_prediction() {
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let rows = predict_poisson_curve(&sc, 5, 5, &qcfg()).unwrap();
        assert_eq!(rows.len(), 1);
        let tab = build_poisson_tables(&sc, 7, &qcfg()).unwrap();
        let single = tab.predict(5).unwrap();
        assert!((rows[0].mean - single.mean).abs() < 1e-12);
        assert!((rows[0].variance - single.variance).abs() < 1e-12);
    }

    #[test]
    fn difference_form_agrees_with_increment_form() {
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 42, &qcfg()).unwrap();
        let diff = DifferenceFormTables::build(&sc, 42, &qcfg()).unwrap();
        for m in [0u64, 1, 5, 20, 40] {
            let a = tab.predict(m).unwrap();
            let (dm, dv) = diff.predict(m).unwrap();
            assert!(
                (a.mean - dm).abs() <= 1e-8 * (1.0 + a.mean.abs()),
                "m={m}: mean {} vs {}",
                a.mean,
                dm
            );
            assert!(
                (a.variance - dv).abs() <= 1e-8 * (1.0 + a.variance.abs()),
                "m={m}: var {} vs {}",
                a.variance,
                dv
            );
        }
    }

    #[test]
    fn predictor_matches_semi_analytic_oracle() {
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 90, &qcfg()).unwrap();
        let oracle = OracleSamples::build(&sc, 200_000, 31).unwrap();
        for m in [60u64, 75, 90] {
            let pred = tab.predict(m).unwrap();
            let est = oracle.estimate(m).unwrap();
            let z = (pred.mean - est.mean.value) / est.mean.stderr;
            assert!(z.abs() < 3.0, "m={m}: pred {} oracle {} z {z}", pred.mean, est.mean.value);
            let zv = (pred.variance - est.var.value) / est.var.stderr;
            assert!(zv.abs() < 3.0, "m={m}: var {} oracle {} z {zv}", pred.variance, est.var.value);
        }
    }

    #[test]
    fn extreme_tail_is_flagged_but_finite() {
        // Small center so the 1e-300 tail is reached at a modest m.
        let sc = scenario(3.0, MeanValueFunction::Linear { a: 2.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 1_000, &qcfg()).unwrap();
        let m = (0..=1_000)
            .find(|&m| tab.log_pmf(m).unwrap().is_some_and(|l| l < EXTREME_TAIL_LOG))
            .expect("tail should dip below 1e-300 by m = 1000");
        let r = tab.predict(m).unwrap();
        assert!(r.flags.extreme_tail, "m = {m}");
        assert!(r.mean.is_finite() && r.mean > 0.0);
        assert!(r.variance.is_finite() && r.variance >= 0.0);
        assert!(r.log_pmf.unwrap() < EXTREME_TAIL_LOG);
    }

    #[test]
    fn fingerprint_tracks_scenario() {
        let sc = scenario(30.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        let tab = build_poisson_tables(&sc, 5, &qcfg()).unwrap();
        assert!(tab.matches(&sc));
        let other = scenario(60.0, MeanValueFunction::Linear { a: 5.0 }, 1.0, 1.0);
        assert!(!tab.matches(&other));
        // Delay does not enter the tables.
        let delayed = Scenario { delay: DelayDistribution::Exponential { rate: 2.0 }, ..sc };
        assert!(tab.matches(&delayed));
    }
}
