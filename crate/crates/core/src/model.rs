//! Domain model: mean value functions, cluster families, delay distributions,
//! and the `Scenario` record tying them together.
//!
//! A mean value function μ is a continuous nondecreasing map with μ(x) = 0
//! for x ≤ 0. It plays two roles: the center intensity Λ of claim arrivals
//! on [0, 1], and the cluster intensity μ driving per-claim payment counts.
//! Cluster increments over (a, b] are Poisson(μ(a,b]) or NB(μ(a,b], p),
//! independent across disjoint intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::quadrature::{self, QuadratureConfig};

/// Continuous nondecreasing mean value function with μ(x) = 0 for x ≤ 0.
///
/// The `rational` variant is a·x/(1+x²) on [0, 1] held constant at its peak
/// value a/2 beyond x = 1, which keeps it nondecreasing; it models payment
/// activity that tapers off and stops as a claim ages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanValueFunction {
    /// μ(x) = a·x.
    Linear { a: f64 },
    /// μ(x) = a·x/(1+x²) for x ≤ 1, a/2 for x > 1.
    Rational { a: f64 },
    /// μ(x) = a·x^p, p ≥ 1.
    Power { a: f64, p: f64 },
    /// μ(x) = a·min(x, x0).
    CappedLinear { a: f64, x0: f64 },
    /// Piecewise-linear through strictly increasing knots, first knot (0, 0);
    /// constant beyond the last knot.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl MeanValueFunction {
    /// Evaluate μ(x). Returns exactly 0 for x ≤ 0.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            MeanValueFunction::Linear { a } => a * x,
            MeanValueFunction::Rational { a } => {
                if x >= 1.0 {
                    a / 2.0
                } else {
                    a * x / (1.0 + x * x)
                }
            }
            MeanValueFunction::Power { a, p } => a * x.powf(*p),
            MeanValueFunction::CappedLinear { a, x0 } => a * x.min(*x0),
            MeanValueFunction::Tabulated { knots } => {
                let last = knots.len() - 1;
                if x >= knots[last].0 {
                    return knots[last].1;
                }
                // knots[0].0 == 0, so x is inside some segment.
                let idx = knots.partition_point(|k| k.0 <= x) - 1;
                let (x0, y0) = knots[idx];
                let (x1, y1) = knots[idx + 1];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// μ(b) − μ(a) with both arguments clamped below at 0; requires a ≤ b.
    pub fn increment(&self, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidArgument(format!(
                "mvf_increment: interval endpoints out of order ({a} > {b})"
            )));
        }
        Ok(self.eval(b) - self.eval(a))
    }

    /// Density dμ/dx where μ is differentiable (everywhere except kinks).
    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            MeanValueFunction::Linear { a } => *a,
            MeanValueFunction::Rational { a } => {
                if x >= 1.0 {
                    0.0
                } else {
                    a * (1.0 - x * x) / ((1.0 + x * x) * (1.0 + x * x))
                }
            }
            MeanValueFunction::Power { a, p } => {
                if x == 0.0 && *p > 1.0 {
                    0.0
                } else {
                    a * p * x.powf(p - 1.0)
                }
            }
            MeanValueFunction::CappedLinear { a, x0 } => {
                if x < *x0 {
                    *a
                } else {
                    0.0
                }
            }
            MeanValueFunction::Tabulated { knots } => {
                let last = knots.len() - 1;
                if x >= knots[last].0 {
                    return 0.0;
                }
                let idx = knots.partition_point(|k| k.0 <= x) - 1;
                let (x0, y0) = knots[idx];
                let (x1, y1) = knots[idx + 1];
                (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Abscissas where the density jumps; integration panels split here.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            MeanValueFunction::Linear { .. } => vec![],
            MeanValueFunction::Rational { .. } => vec![1.0],
            MeanValueFunction::Power { .. } => vec![],
            MeanValueFunction::CappedLinear { x0, .. } => vec![*x0],
            MeanValueFunction::Tabulated { knots } => {
                knots.iter().skip(1).map(|k| k.0).collect()
            }
        }
    }

    /// Total mass on the unit interval, Λ(1).
    pub fn total_on_unit(&self) -> f64 {
        self.eval(1.0)
    }

    /// Inverse of the normalized cdf μ(x)/μ(1) on [0, 1], for u ∈ [0, 1].
    ///
    /// Closed forms for `linear` and `power`; bracketed bisection to 1e-12
    /// for the other variants.
    pub fn inverse_cdf_unit(&self, u: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&u));
        match self {
            MeanValueFunction::Linear { .. } => u,
            MeanValueFunction::Power { p, .. } => u.powf(1.0 / p),
            _ => {
                let total = self.total_on_unit();
                if total <= 0.0 {
                    return 0.0;
                }
                let target = u * total;
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                while hi - lo > 1e-12 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    fn validate_into(&self, path: &str, out: &mut Vec<Violation>) {
        let mut push = |msg: String| out.push(Violation { path: path.to_string(), message: msg });
        match self {
            MeanValueFunction::Linear { a }
            | MeanValueFunction::Rational { a }
            | MeanValueFunction::CappedLinear { a, .. } => {
                if !a.is_finite() || *a < 0.0 {
                    push(format!("rate a = {a} must be finite and >= 0"));
                }
            }
            MeanValueFunction::Power { a, p } => {
                if !a.is_finite() || *a < 0.0 {
                    push(format!("rate a = {a} must be finite and >= 0"));
                }
                if !p.is_finite() || *p < 1.0 {
                    push(format!("exponent p = {p} must be finite and >= 1"));
                }
            }
            MeanValueFunction::Tabulated { knots } => {
                if knots.is_empty() {
                    push("tabulated: at least one knot required".into());
                    return;
                }
                if knots[0] != (0.0, 0.0) {
                    push(format!("tabulated: first knot must be (0, 0), got {:?}", knots[0]));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        push(format!(
                            "tabulated: knot abscissas must be strictly increasing ({} then {})",
                            w[0].0, w[1].0
                        ));
                    }
                    if !(w[1].1 >= w[0].1) {
                        push(format!(
                            "tabulated: ordinates must be nondecreasing ({} then {})",
                            w[0].1, w[1].1
                        ));
                    }
                }
                if knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
                    push("tabulated: knots must be finite".into());
                }
            }
        }
        if let MeanValueFunction::CappedLinear { x0, .. } = self {
            if !x0.is_finite() || *x0 <= 0.0 {
                push(format!("cap point x0 = {x0} must be finite and > 0"));
            }
        }
    }
}

/// Evaluate μ(x); free-function form of [`MeanValueFunction::eval`].
pub fn mvf_eval(f: &MeanValueFunction, x: f64) -> f64 {
    f.eval(x)
}

/// μ(a, b] with clamping at 0; free-function form of [`MeanValueFunction::increment`].
pub fn mvf_increment(f: &MeanValueFunction, a: f64, b: f64) -> Result<f64> {
    f.increment(a, b)
}

/// Cluster family: what each claim's payment process looks like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClusterModel {
    /// Increments over (a, b] are Poisson(μ(a,b]).
    Poisson { mu: MeanValueFunction },
    /// Increments over (a, b] are NB(μ(a,b], p); mean μ·q/p, variance μ·q/p².
    NegBinomial { mu: MeanValueFunction, p: f64 },
}

impl ClusterModel {
    pub fn mu(&self) -> &MeanValueFunction {
        match self {
            ClusterModel::Poisson { mu } => mu,
            ClusterModel::NegBinomial { mu, .. } => mu,
        }
    }

    /// First and second raw moments of the increment over (a, b].
    pub fn increment_moments(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let delta = self.mu().increment(a, b)?;
        Ok(self.moments_for_delta(delta))
    }

    /// Raw moments for a given increment mass Δμ = μ(a, b].
    pub fn moments_for_delta(&self, delta: f64) -> (f64, f64) {
        match self {
            ClusterModel::Poisson { .. } => (delta, delta + delta * delta),
            ClusterModel::NegBinomial { p, .. } => {
                let q = 1.0 - p;
                let mean = delta * q / p;
                let var = delta * q / (p * p);
                (mean, var + mean * mean)
            }
        }
    }

    fn validate_into(&self, path: &str, out: &mut Vec<Violation>) {
        self.mu().validate_into(&format!("{path}.mu"), out);
        if let ClusterModel::NegBinomial { p, .. } = self {
            if !p.is_finite() || !(*p > 0.0 && *p < 1.0) {
                out.push(Violation {
                    path: format!("{path}.p"),
                    message: format!("p = {p} must lie strictly in (0, 1)"),
                });
            }
        }
    }
}

/// Free-function form of [`ClusterModel::increment_moments`].
pub fn cluster_increment_moments(c: &ClusterModel, a: f64, b: f64) -> Result<(f64, f64)> {
    c.increment_moments(a, b)
}

/// Reporting-delay distribution of a claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayDistribution {
    None,
    Deterministic { d: f64 },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl DelayDistribution {
    pub fn is_none(&self) -> bool {
        matches!(self, DelayDistribution::None)
    }

    /// F_D(x) = P(D ≤ x), right-continuous.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            DelayDistribution::None => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            DelayDistribution::Deterministic { d } => {
                if x >= *d {
                    1.0
                } else {
                    0.0
                }
            }
            DelayDistribution::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            DelayDistribution::Uniform { lo, hi } => {
                if x <= *lo {
                    0.0
                } else if x >= *hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
        }
    }

    /// Survival P(D > x) = 1 − F_D(x).
    pub fn survival(&self, x: f64) -> f64 {
        match self {
            DelayDistribution::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-rate * x).exp()
                }
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    /// Density for the absolutely continuous variants.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            DelayDistribution::Exponential { rate } => {
                Some(if x < 0.0 { 0.0 } else { rate * (-rate * x).exp() })
            }
            DelayDistribution::Uniform { lo, hi } => {
                Some(if x >= *lo && x <= *hi { 1.0 / (hi - lo) } else { 0.0 })
            }
            _ => None,
        }
    }

    /// Smallest r with P(D > r) ≤ eps; integration upper cutoff for
    /// unbounded supports.
    pub fn upper_cutoff(&self, eps: f64) -> f64 {
        match self {
            DelayDistribution::None => 0.0,
            DelayDistribution::Deterministic { d } => *d,
            DelayDistribution::Exponential { rate } => -eps.ln() / rate,
            DelayDistribution::Uniform { hi, .. } => *hi,
        }
    }

    fn validate_into(&self, path: &str, out: &mut Vec<Violation>) {
        let mut push = |msg: String| out.push(Violation { path: path.to_string(), message: msg });
        match self {
            DelayDistribution::None => {}
            DelayDistribution::Deterministic { d } => {
                if !d.is_finite() || *d < 0.0 {
                    push(format!("d = {d} must be finite and >= 0"));
                }
            }
            DelayDistribution::Exponential { rate } => {
                if !rate.is_finite() || *rate <= 0.0 {
                    push(format!("rate = {rate} must be finite and > 0"));
                }
            }
            DelayDistribution::Uniform { lo, hi } => {
                if !lo.is_finite() || *lo < 0.0 {
                    push(format!("lo = {lo} must be finite and >= 0"));
                }
                if !hi.is_finite() || !(hi > lo) {
                    push(format!("hi = {hi} must be finite and > lo = {lo}"));
                }
            }
        }
    }
}

/// A full problem instance: claim arrivals on [0, 1] with intensity Λ,
/// a cluster family, an optional reporting delay, and the evaluation
/// window (t, t + s].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub center: MeanValueFunction,
    pub cluster: ClusterModel,
    pub delay: DelayDistribution,
    pub t: f64,
    pub s: f64,
}

impl Scenario {
    /// Λ(1): expected number of claims.
    pub fn center_mass(&self) -> f64 {
        self.center.total_on_unit()
    }

    /// Cluster increment mass over the prediction window for a claim
    /// arriving at v: Δμ(v) = μ(t + s − v) − μ(t − v).
    pub fn window_delta(&self, v: f64) -> f64 {
        let mu = self.cluster.mu();
        mu.eval(self.t + self.s - v) - mu.eval(self.t - v)
    }

    /// True when Δμ ≡ 0 on [0, 1]: the cluster intensity is already flat
    /// over the whole prediction window, so no future payments can occur.
    /// Monotonicity reduces the check to a single increment.
    pub fn window_is_degenerate(&self) -> bool {
        self.cluster.mu().increment(self.t - 1.0, self.t + self.s).unwrap_or(1.0) == 0.0
    }
}

/// Check every type invariant; returns the scenario unchanged or the full
/// list of violations with field paths.
pub fn validate_scenario(sc: Scenario) -> std::result::Result<Scenario, Vec<Violation>> {
    let mut out = Vec::new();
    sc.center.validate_into("center", &mut out);
    sc.cluster.validate_into("cluster", &mut out);
    sc.delay.validate_into("delay", &mut out);
    if !sc.t.is_finite() || sc.t < 1.0 {
        out.push(Violation { path: "t".into(), message: format!("t = {} but t >= 1 required", sc.t) });
    }
    if !sc.s.is_finite() || sc.s <= 0.0 {
        out.push(Violation { path: "s".into(), message: format!("s = {} but s > 0 required", sc.s) });
    }
    if out.iter().all(|v| !v.path.starts_with("center")) && !(sc.center_mass() > 0.0) {
        out.push(Violation {
            path: "center".into(),
            message: format!("Λ(1) = {} but Λ(1) > 0 required", sc.center_mass()),
        });
    }
    if out.is_empty() {
        Ok(sc)
    } else {
        Err(out)
    }
}

/// Unconditional mean of M(t0) and Cov(M(s0), M(t0)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnconditionalMoments {
    pub mean_at_t0: f64,
    pub cov: f64,
}

/// Mean E[M(t0)] = ∫ E[L(t0−u)] Λ(du) and covariance
/// Cov(M(s0), M(t0)) = ∫ (E[L²(s0−u)] + E[L(s0−u)]·E[L(s0−u, t0−u]]) Λ(du),
/// both over u ∈ [0, 1]. Requires 1 ≤ s0 ≤ t0.
pub fn unconditional_moments(
    sc: &Scenario,
    s0: f64,
    t0: f64,
    cfg: &QuadratureConfig,
) -> Result<UnconditionalMoments> {
    if !(1.0 <= s0 && s0 <= t0) {
        return Err(Error::InvalidArgument(format!(
            "unconditional_moments: need 1 <= s0 <= t0, got s0 = {s0}, t0 = {t0}"
        )));
    }
    let cluster = &sc.cluster;
    let breaks = window_breakpoints(cluster.mu(), &[s0, t0], 0.0, 1.0);

    let mean_at_t0 = quadrature::integrate_against_with_breaks(
        &|u| {
            let (m1, _) = cluster.moments_for_delta(mu_from_zero(cluster.mu(), t0 - u));
            m1
        },
        &sc.center,
        0.0,
        1.0,
        &breaks,
        cfg,
    )?;

    let cov = quadrature::integrate_against_with_breaks(
        &|u| {
            let (m1_s, m2_s) = cluster.moments_for_delta(mu_from_zero(cluster.mu(), s0 - u));
            let delta =
                cluster.mu().eval(t0 - u) - cluster.mu().eval(s0 - u);
            let (m1_incr, _) = cluster.moments_for_delta(delta);
            m2_s + m1_s * m1_incr
        },
        &sc.center,
        0.0,
        1.0,
        &breaks,
        cfg,
    )?;

    Ok(UnconditionalMoments { mean_at_t0, cov })
}

fn mu_from_zero(mu: &MeanValueFunction, x: f64) -> f64 {
    mu.eval(x)
}

/// Fingerprint of the scenario fields the recursion tables depend on:
/// (Λ, cluster, t, s). The delay plays no role in the tables.
pub fn table_fingerprint(sc: &Scenario) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    hash_mvf(&sc.center, &mut h);
    match &sc.cluster {
        ClusterModel::Poisson { mu } => {
            1u8.hash(&mut h);
            hash_mvf(mu, &mut h);
        }
        ClusterModel::NegBinomial { mu, p } => {
            2u8.hash(&mut h);
            hash_mvf(mu, &mut h);
            p.to_bits().hash(&mut h);
        }
    }
    sc.t.to_bits().hash(&mut h);
    sc.s.to_bits().hash(&mut h);
    h.finish()
}

fn hash_mvf<H: std::hash::Hasher>(f: &MeanValueFunction, h: &mut H) {
    use std::hash::Hash;
    match f {
        MeanValueFunction::Linear { a } => {
            0u8.hash(h);
            a.to_bits().hash(h);
        }
        MeanValueFunction::Rational { a } => {
            1u8.hash(h);
            a.to_bits().hash(h);
        }
        MeanValueFunction::Power { a, p } => {
            2u8.hash(h);
            a.to_bits().hash(h);
            p.to_bits().hash(h);
        }
        MeanValueFunction::CappedLinear { a, x0 } => {
            3u8.hash(h);
            a.to_bits().hash(h);
            x0.to_bits().hash(h);
        }
        MeanValueFunction::Tabulated { knots } => {
            4u8.hash(h);
            for (x, y) in knots {
                x.to_bits().hash(h);
                y.to_bits().hash(h);
            }
        }
    }
}

/// Breakpoints in v ∈ [lo, hi] where any of the integrand factors
/// μ(tᵢ − v) has a kink: v = tᵢ − k for each kink k of μ.
pub(crate) fn window_breakpoints(
    mu: &MeanValueFunction,
    times: &[f64],
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    for &ti in times {
        for k in mu.kinks() {
            let v = ti - k;
            if v > lo && v < hi {
                out.push(v);
            }
        }
        // μ vanishes below 0: the factor μ(tᵢ − v) hits zero at v = tᵢ.
        if ti > lo && ti < hi {
            out.push(ti);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qcfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn eval_examples() {
        let lin = MeanValueFunction::Linear { a: 5.0 };
        assert_eq!(lin.eval(2.0), 10.0);
        let rat = MeanValueFunction::Rational { a: 5.0 };
        assert_eq!(rat.eval(0.0), 0.0);
        let pow = MeanValueFunction::Power { a: 5.0, p: 2.0 };
        assert!((pow.eval(1.5) - 11.25).abs() < 1e-12);
    }

    #[test]
    fn eval_is_zero_at_and_below_zero() {
        for f in all_variants() {
            assert_eq!(f.eval(0.0), 0.0);
            assert_eq!(f.eval(-0.5), 0.0);
        }
    }

    #[test]
    fn rational_is_flat_past_peak() {
        let rat = MeanValueFunction::Rational { a: 5.0 };
        assert!((rat.eval(1.0) - 2.5).abs() < 1e-15);
        assert_eq!(rat.eval(1.5), 2.5);
        assert_eq!(rat.eval(30.0), 2.5);
        assert_eq!(rat.density(1.5), 0.0);
    }

    #[test]
    fn increment_examples() {
        let lin = MeanValueFunction::Linear { a: 5.0 };
        assert_eq!(lin.increment(1.0, 2.0).unwrap(), 5.0);
        assert_eq!(lin.increment(-1.0, 0.0).unwrap(), 0.0);
        assert_eq!(lin.increment(-0.5, 0.5).unwrap(), 2.5);
        assert!(lin.increment(2.0, 1.0).is_err());
    }

    #[test]
    fn tabulated_interpolates_and_extends() {
        let tab = MeanValueFunction::Tabulated {
            knots: vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0), (2.0, 4.0)],
        };
        assert!((tab.eval(0.25) - 0.5).abs() < 1e-15);
        assert_eq!(tab.eval(0.75), 1.0); // flat segment
        assert!((tab.eval(1.5) - 2.5).abs() < 1e-15);
        assert_eq!(tab.eval(3.0), 4.0); // constant beyond last knot
        assert_eq!(tab.density(0.25), 2.0);
        assert_eq!(tab.density(0.75), 0.0);
        assert_eq!(tab.kinks(), vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn validate_scenario_cases() {
        let ok = Scenario {
            center: MeanValueFunction::Linear { a: 30.0 },
            cluster: ClusterModel::Poisson { mu: MeanValueFunction::Linear { a: 5.0 } },
            delay: DelayDistribution::None,
            t: 1.0,
            s: 1.0,
        };
        assert!(validate_scenario(ok.clone()).is_ok());

        let bad_t = Scenario { t: 0.5, ..ok.clone() };
        let errs = validate_scenario(bad_t).unwrap_err();
        assert!(errs.iter().any(|v| v.path == "t" && v.message.contains("t >= 1")));

        let bad_p = Scenario {
            cluster: ClusterModel::NegBinomial {
                mu: MeanValueFunction::Linear { a: 5.0 },
                p: 1.0,
            },
            ..ok.clone()
        };
        let errs = validate_scenario(bad_p).unwrap_err();
        assert!(errs.iter().any(|v| v.path == "cluster.p" && v.message.contains("(0, 1)")));

        let zero_center = Scenario { center: MeanValueFunction::Linear { a: 0.0 }, ..ok };
        let errs = validate_scenario(zero_center).unwrap_err();
        assert!(errs.iter().any(|v| v.message.contains("Λ(1) > 0")));
    }

    #[test]
    fn cluster_moment_examples() {
        let poisson = ClusterModel::Poisson { mu: MeanValueFunction::Linear { a: 5.0 } };
        let (m1, m2) = poisson.increment_moments(0.0, 1.0).unwrap();
        assert!((m1 - 5.0).abs() < 1e-12);
        assert!((m2 - 30.0).abs() < 1e-12);

        let nb = ClusterModel::NegBinomial { mu: MeanValueFunction::Linear { a: 5.0 }, p: 0.5 };
        let (m1, m2) = nb.increment_moments(0.0, 1.0).unwrap();
        assert!((m1 - 5.0).abs() < 1e-12);
        assert!((m2 - 35.0).abs() < 1e-12);

        let (m1, m2) = nb.increment_moments(0.7, 0.7).unwrap();
        assert_eq!((m1, m2), (0.0, 0.0));
    }

    #[test]
    fn unconditional_moment_closed_forms() {
        // Λ = 30x, Poisson μ = 5x: E[M(1)] = 30·∫ 5(1-u) du = 75,
        // Var(M(1)) = 30·∫ (5(1-u) + 25(1-u)²) du = 325.
        let sc = Scenario {
            center: MeanValueFunction::Linear { a: 30.0 },
            cluster: ClusterModel::Poisson { mu: MeanValueFunction::Linear { a: 5.0 } },
            delay: DelayDistribution::None,
            t: 1.0,
            s: 1.0,
        };
        let m = unconditional_moments(&sc, 1.0, 1.0, &qcfg()).unwrap();
        assert!((m.mean_at_t0 - 75.0).abs() < 1e-8, "mean {}", m.mean_at_t0);
        assert!((m.cov - 325.0).abs() < 1e-7, "cov {}", m.cov);

        let zero = Scenario { center: MeanValueFunction::Linear { a: 0.0 }, ..sc };
        let m0 = unconditional_moments(&zero, 1.0, 1.0, &qcfg()).unwrap();
        assert_eq!((m0.mean_at_t0, m0.cov), (0.0, 0.0));
    }

    #[test]
    fn delay_distribution_shapes() {
        let det = DelayDistribution::Deterministic { d: 0.5 };
        assert_eq!(det.cdf(0.49), 0.0);
        assert_eq!(det.cdf(0.5), 1.0);
        assert_eq!(det.survival(0.49), 1.0);

        let exp = DelayDistribution::Exponential { rate: 2.0 };
        assert!((exp.cdf(1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((exp.survival(1.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((exp.density(0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(exp.upper_cutoff(1e-16) > 18.0);

        let unif = DelayDistribution::Uniform { lo: 0.0, hi: 2.0 };
        assert_eq!(unif.cdf(1.0), 0.5);
        assert_eq!(unif.density(1.0).unwrap(), 0.5);
        assert_eq!(unif.density(3.0).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_window_detection() {
        let sc = Scenario {
            center: MeanValueFunction::Linear { a: 30.0 },
            cluster: ClusterModel::Poisson {
                mu: MeanValueFunction::CappedLinear { a: 5.0, x0: 1.0 },
            },
            delay: DelayDistribution::None,
            t: 2.0,
            s: 1.0,
        };
        assert!(sc.window_is_degenerate());
        let active = Scenario { t: 1.5, ..sc };
        assert!(!active.window_is_degenerate());
    }

    fn all_variants() -> Vec<MeanValueFunction> {
        vec![
            MeanValueFunction::Linear { a: 5.0 },
            MeanValueFunction::Rational { a: 5.0 },
            MeanValueFunction::Power { a: 5.0, p: 2.0 },
            MeanValueFunction::CappedLinear { a: 5.0, x0: 0.7 },
            MeanValueFunction::Tabulated {
                knots: vec![(0.0, 0.0), (0.3, 1.0), (1.0, 1.5), (2.5, 4.0)],
            },
        ]
    }

    proptest! {
        #[test]
        fn eval_is_nondecreasing(idx in 0usize..5, x in -1.0..4.0f64, y in -1.0..4.0f64) {
            let f = &all_variants()[idx];
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(f.eval(hi) >= f.eval(lo));
        }

        #[test]
        fn increment_is_additive(idx in 0usize..5, pts in prop::collection::vec(-0.5..3.5f64, 3)) {
            let f = &all_variants()[idx];
            let mut p = pts.clone();
            p.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (a, b, c) = (p[0], p[1], p[2]);
            let lhs = f.increment(a, b).unwrap() + f.increment(b, c).unwrap();
            let rhs = f.increment(a, c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()),
                "{lhs} vs {rhs}");
        }

        #[test]
        fn variance_is_nonnegative(delta in 0.0..40.0f64, p in 0.01..0.99f64, nb in any::<bool>()) {
            let mu = MeanValueFunction::Linear { a: 1.0 };
            let c = if nb {
                ClusterModel::NegBinomial { mu, p }
            } else {
                ClusterModel::Poisson { mu }
            };
            let (m1, m2) = c.moments_for_delta(delta);
            prop_assert!(m2 - m1 * m1 >= -1e-9 * m2.max(1.0));
        }

        #[test]
        fn inverse_cdf_inverts(idx in 0usize..5, u in 0.0..1.0f64) {
            let f = &all_variants()[idx];
            let x = f.inverse_cdf_unit(u);
            prop_assert!((0.0..=1.0).contains(&x));
            let total = f.total_on_unit();
            if total > 0.0 {
                prop_assert!((f.eval(x) / total - u).abs() < 1e-9);
            }
        }
    }
}
