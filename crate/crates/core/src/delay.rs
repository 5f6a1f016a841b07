//! Closed-form predictors given the reported-claims count N̂(t).
//!
//! When claims report with delay D, N̂(t) counts the claims arrived in
//! [0, 1] whose report time T + D is ≤ t. Reported and unreported claims
//! live on disjoint regions of the arrival × delay plane, so the predictor
//! splits into an affine term in ℓ (reported clusters) and a tail term
//! (claims not yet reported whose clusters start inside the window):
//!
//! ```text
//! E[M(t,t+s] | N̂(t) = ℓ]   = ℓ·J₁ + H₁
//! Var(M(t,t+s] | N̂(t) = ℓ) = ℓ·(J₂ − J₁²) + H₂
//! E[(M − E[M | N̂])²]       = E[N̂(t)]·(J₂ − J₁²) + H₂
//! ```
//!
//! J_i are increment moments under the normalized convolution Λ∗F_D on
//! [0, t]; H_i integrate the unreported tail. The convolution is never
//! materialized: all integrals run in iterated form, which keeps
//! deterministic delays exact. Both cluster families flow through
//! the shared increment-moment code path.

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::prediction::{DiagnosticFlags, PredictionResult};
use crate::quadrature::{integrate_delay_region, QuadratureConfig};

/// Integrals shared by all conditioning values ℓ of one scenario.
#[derive(Debug, Clone, Copy)]
pub struct DelayComponents {
    /// Λ̂(t) = ∫ F̄_D(t−v) Λ(dv): expected number of unreported claims.
    pub lambda_hat: f64,
    /// E[N̂(t)] = Λ(1) − Λ̂(t).
    pub n_hat_mean: f64,
    /// First moment of a reported cluster's window increment.
    pub j1: f64,
    /// Second raw moment of a reported cluster's window increment.
    pub j2: f64,
    /// First-moment tail contribution of unreported claims.
    pub h1: f64,
    /// Second-moment tail contribution of unreported claims.
    pub h2: f64,
}

/// Compute all delay components by quadrature.
pub fn delay_components(sc: &Scenario, cfg: &QuadratureConfig) -> Result<DelayComponents> {
    if sc.delay.is_none() {
        return Err(Error::InvalidArgument(
            "delay_components requires a scenario with a delay distribution".into(),
        ));
    }
    cfg.validate()?;
    let (t, s) = (sc.t, sc.s);
    let cluster = sc.cluster.clone();
    let lambda_total = sc.center_mass();

    // Λ̂(t): mass of the unreported region r ∈ (t−v, ∞).
    let lambda_hat = integrate_delay_region(
        &|_, _| 1.0,
        &sc.center,
        &sc.delay,
        &|v| t - v,
        &|_| f64::INFINITY,
        cfg,
    )?;
    let n_hat_mean = lambda_total - lambda_hat;
    if !(n_hat_mean > 1e-12 * lambda_total.max(1.0)) {
        return Err(Error::NoReportedClaims);
    }

    // J_i: reported region r ∈ [0, t−v]; cluster age window
    // (t−(v+r), t+s−(v+r)].
    let moment = |v: f64, r: f64, second: bool| -> f64 {
        let mu = cluster.mu();
        let age = t - v - r;
        let delta = (mu.eval(age + s) - mu.eval(age)).max(0.0);
        let (m1, m2) = cluster.moments_for_delta(delta);
        if second {
            m2
        } else {
            m1
        }
    };
    let j1 = integrate_delay_region(
        &|v, r| moment(v, r, false),
        &sc.center,
        &sc.delay,
        &|_| -1.0,
        &|v| t - v,
        cfg,
    )? / n_hat_mean;
    let j2 = integrate_delay_region(
        &|v, r| moment(v, r, true),
        &sc.center,
        &sc.delay,
        &|_| -1.0,
        &|v| t - v,
        cfg,
    )? / n_hat_mean;

    // H_i: unreported region r ∈ (t−v, t+s−v]; cluster runs from 0 to
    // t+s−(v+r).
    let tail_moment = |v: f64, r: f64, second: bool| -> f64 {
        let delta = cluster.mu().eval(t + s - v - r);
        let (m1, m2) = cluster.moments_for_delta(delta);
        if second {
            m2
        } else {
            m1
        }
    };
    let h1 = integrate_delay_region(
        &|v, r| tail_moment(v, r, false),
        &sc.center,
        &sc.delay,
        &|v| t - v,
        &|v| t + s - v,
        cfg,
    )?;
    let h2 = integrate_delay_region(
        &|v, r| tail_moment(v, r, true),
        &sc.center,
        &sc.delay,
        &|v| t - v,
        &|v| t + s - v,
        cfg,
    )?;

    Ok(DelayComponents { lambda_hat, n_hat_mean, j1, j2, h1, h2 })
}

/// Predictor given {N̂(t) = ℓ}: mean ℓ·J₁ + H₁, variance ℓ·(J₂−J₁²) + H₂.
pub fn predict_delay(comp: &DelayComponents, ell: u64) -> PredictionResult {
    let lf = ell as f64;
    PredictionResult {
        conditioning: ell,
        mean: lf * comp.j1 + comp.h1,
        variance: lf * (comp.j2 - comp.j1 * comp.j1).max(0.0) + comp.h2,
        log_pmf: None,
        flags: DiagnosticFlags::default(),
    }
}

/// Unconditional mean squared prediction error
/// E[(M(t,t+s] − E[M(t,t+s] | N̂(t)])²] = E[N̂(t)]·(J₂ − J₁²) + H₂.
pub fn unconditional_mse(comp: &DelayComponents) -> f64 {
    comp.n_hat_mean * (comp.j2 - comp.j1 * comp.j1).max(0.0) + comp.h2
}
