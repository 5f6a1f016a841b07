//! Simulation of the full cluster model and the two independent oracles
//! (binned conditioning and semi-analytic ratio estimator) used to validate
//! every analytic predictor.
//!
//! Reproducibility is a hard contract: each replicate draws from its own
//! counter-based substream keyed by (seed, replicate index), and results
//! are aggregated in replicate order, so output is bit-identical for any
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ClusterModel, DelayDistribution, MeanValueFunction, Scenario};
use crate::xnum::ln_gamma;

/// Minimum replicates in a bin for the binned oracle.
const MIN_BIN: usize = 200;
/// Minimum effective sample size for the ratio estimator.
const MIN_ESS: f64 = 100.0;

/// One simulated replicate of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepRecord {
    /// Payments counted by time t: M(t).
    pub m_t: u64,
    /// Future increment M(t, t+s].
    pub m_incr: u64,
    /// Number of claims N(1).
    pub n1: u32,
    /// Reported claims N̂(t), present when the scenario has a delay.
    pub n_hat: Option<u32>,
}

/// Full simulation output.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<RepRecord>,
    pub seed: u64,
    pub replicates: usize,
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct OracleEstimate {
    pub value: f64,
    pub stderr: f64,
    pub effective_sample_size: f64,
}

/// Conditional mean and variance estimates from one oracle.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalEstimates {
    pub mean: OracleEstimate,
    pub var: OracleEstimate,
}

/// Conditioning event for the binned oracle.
#[derive(Debug, Clone, Copy)]
pub enum Condition {
    /// {M(t) = m}
    PaidCount(u64),
    /// {N̂(t) = ℓ}
    ReportedCount(u32),
}

/// Counter-based substream for one replicate.
fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Draw the claim arrival times on [0, 1]: a Poisson(Λ(1)) count, then that
/// many iid points with cdf Λ(x)/Λ(1) by inverse transform.
pub fn sample_center(lambda: &MeanValueFunction, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total = lambda.total_on_unit();
    if total <= 0.0 {
        return Vec::new();
    }
    let n = Poisson::new(total).expect("positive mean").sample(rng) as usize;
    (0..n).map(|_| lambda.inverse_cdf_unit(rng.random::<f64>())).collect()
}

/// Draw one cluster increment over (a, b].
///
/// Poisson clusters draw Poisson(μ(a,b]); NB clusters draw a gamma–Poisson
/// mixture (gamma shape μ(a,b], scale q/p), which supports non-integer
/// shape. Zero mass gives exactly 0.
pub fn sample_cluster_increment(
    cluster: &ClusterModel,
    a: f64,
    b: f64,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    let delta = cluster.mu().increment(a, b)?;
    Ok(sample_increment_for_delta(cluster, delta, rng))
}

fn sample_increment_for_delta(cluster: &ClusterModel, delta: f64, rng: &mut ChaCha8Rng) -> u64 {
    if delta <= 0.0 {
        return 0;
    }
    let mean = match cluster {
        ClusterModel::Poisson { .. } => delta,
        ClusterModel::NegBinomial { p, .. } => {
            let q = 1.0 - p;
            Gamma::new(delta, q / p).expect("valid gamma parameters").sample(rng)
        }
    };
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng).round() as u64
}

fn sample_delay(delay: &DelayDistribution, rng: &mut ChaCha8Rng) -> f64 {
    match delay {
        DelayDistribution::None => 0.0,
        DelayDistribution::Deterministic { d } => *d,
        DelayDistribution::Exponential { rate } => {
            let u: f64 = rng.random();
            -(-u).ln_1p() / rate
        }
        DelayDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
    }
}

/// Simulate `n_reps` replicates of the scenario. Deterministic given
/// (seed, n_reps) regardless of execution parallelism.
pub fn simulate(sc: &Scenario, n_reps: usize, seed: u64) -> SimOutput {
    let has_delay = !sc.delay.is_none();
    let records: Vec<RepRecord> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let arrivals = sample_center(&sc.center, &mut rng);
            let n1 = arrivals.len() as u32;
            let mut m_t = 0u64;
            let mut m_incr = 0u64;
            let mut n_hat = 0u32;
            for &arrival in &arrivals {
                let start = if has_delay {
                    let d = sample_delay(&sc.delay, &mut rng);
                    arrival + d
                } else {
                    arrival
                };
                if start <= sc.t {
                    n_hat += 1;
                }
                let age_t = sc.t - start;
                let age_ts = sc.t + sc.s - start;
                let mu = sc.cluster.mu();
                let d1 = mu.eval(age_t); // μ(0, age_t]
                let d2 = mu.eval(age_ts) - mu.eval(age_t);
                m_t += sample_increment_for_delta(&sc.cluster, d1, &mut rng);
                m_incr += sample_increment_for_delta(&sc.cluster, d2, &mut rng);
            }
            RepRecord { m_t, m_incr, n1, n_hat: has_delay.then_some(n_hat) }
        })
        .collect();
    SimOutput { records, seed, replicates: n_reps }
}

/// Empirical conditional mean and variance of M(t, t+s] over the replicates
/// satisfying the condition.
pub fn binned_conditional_oracle(
    out: &SimOutput,
    condition: Condition,
) -> Result<ConditionalEstimates> {
    let matches: Vec<f64> = out
        .records
        .iter()
        .filter(|r| match condition {
            Condition::PaidCount(m) => r.m_t == m,
            Condition::ReportedCount(l) => r.n_hat == Some(l),
        })
        .map(|r| r.m_incr as f64)
        .collect();
    let n = matches.len();
    if n < MIN_BIN {
        return Err(Error::InsufficientData { got: n, need: MIN_BIN });
    }
    let nf = n as f64;
    let mean = matches.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &x in &matches {
        let d = x - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    let var = m2 / (nf - 1.0);
    let se_mean = (var / nf).sqrt();
    // Moment-based standard error of the sample variance.
    let m4 = m4 / nf;
    let se_var = ((m4 - (nf - 3.0) / (nf - 1.0) * var * var).max(0.0) / nf).sqrt();
    Ok(ConditionalEstimates {
        mean: OracleEstimate { value: mean, stderr: se_mean, effective_sample_size: nf },
        var: OracleEstimate { value: var, stderr: se_var, effective_sample_size: nf },
    })
}

/// Pre-simulated center configurations for the semi-analytic oracle.
///
/// Only (N(1), V₁..V_N) are random; conditional on these the paid count and
/// the future increment are independent with known laws. Reused across many
/// conditioning values m on the same scenario.
#[derive(Debug, Clone)]
pub struct OracleSamples {
    /// R(t) = Σⱼ μ(t − Vⱼ) per replicate.
    r_t: Vec<f64>,
    /// ΔR = Σⱼ (μ(t+s−Vⱼ) − μ(t−Vⱼ)) per replicate.
    delta_r: Vec<f64>,
    cluster: ClusterModel,
}

impl OracleSamples {
    pub fn build(sc: &Scenario, n_reps: usize, seed: u64) -> Result<OracleSamples> {
        if n_reps < 10_000 {
            return Err(Error::InsufficientData { got: n_reps, need: 10_000 });
        }
        let pairs: Vec<(f64, f64)> = (0..n_reps as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(seed, rep);
                let arrivals = sample_center(&sc.center, &mut rng);
                let mu = sc.cluster.mu();
                let mut r = 0.0;
                let mut dr = 0.0;
                for &v in &arrivals {
                    let at = mu.eval(sc.t - v);
                    r += at;
                    dr += mu.eval(sc.t + sc.s - v) - at;
                }
                (r, dr)
            })
            .collect();
        Ok(OracleSamples {
            r_t: pairs.iter().map(|p| p.0).collect(),
            delta_r: pairs.iter().map(|p| p.1).collect(),
            cluster: sc.cluster.clone(),
        })
    }

    /// Ratio-estimator mean and variance of M(t, t+s] given {M(t) = m}.
    ///
    /// Weight w(V) = P(M(t) = m | V); payoffs are the conditional first and
    /// second moments of the increment given V. Standard errors by the
    /// delta method.
    pub fn estimate(&self, m: u64) -> Result<ConditionalEstimates> {
        let n = self.r_t.len();
        let mf = m as f64;
        let mut log_w = vec![f64::NEG_INFINITY; n];
        let mut p1 = vec![0.0; n];
        let mut p2 = vec![0.0; n];
        match &self.cluster {
            ClusterModel::Poisson { .. } => {
                for i in 0..n {
                    let r = self.r_t[i];
                    let dr = self.delta_r[i];
                    log_w[i] = if r > 0.0 {
                        mf * r.ln() - r
                    } else if m == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    };
                    p1[i] = dr;
                    p2[i] = dr + dr * dr;
                }
            }
            ClusterModel::NegBinomial { p, .. } => {
                let q = 1.0 - p;
                let lnp = p.ln();
                let lnq = q.ln();
                for i in 0..n {
                    let r = self.r_t[i];
                    let dr = self.delta_r[i];
                    log_w[i] = if r > 0.0 {
                        ln_gamma(r + mf) - ln_gamma(r) + r * lnp + mf * lnq
                    } else if m == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    };
                    let mean = dr * q / p;
                    p1[i] = mean;
                    p2[i] = dr * q / (p * p) + mean * mean;
                }
            }
        }

        let peak = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if peak == f64::NEG_INFINITY {
            return Err(Error::TailUnreliable { ess: 0.0, min: MIN_ESS });
        }
        let mut w_sum = 0.0;
        let mut w2_sum = 0.0;
        let mut a_sum = 0.0;
        let mut s_sum = 0.0;
        let w: Vec<f64> = log_w.iter().map(|&lw| (lw - peak).exp()).collect();
        for i in 0..n {
            w_sum += w[i];
            w2_sum += w[i] * w[i];
            a_sum += w[i] * p1[i];
            s_sum += w[i] * p2[i];
        }
        let ess = w_sum * w_sum / w2_sum;
        if ess < MIN_ESS {
            return Err(Error::TailUnreliable { ess, min: MIN_ESS });
        }
        let mean = a_sum / w_sum;
        let secmom = s_sum / w_sum;
        let var = secmom - mean * mean;

        let mut se_mean2 = 0.0;
        let mut se_var2 = 0.0;
        for i in 0..n {
            let rm = w[i] * (p1[i] - mean);
            se_mean2 += rm * rm;
            let uv = w[i] * (p2[i] - secmom) - 2.0 * mean * rm;
            se_var2 += uv * uv;
        }
        let se_mean = se_mean2.sqrt() / w_sum;
        let se_var = se_var2.sqrt() / w_sum;
        Ok(ConditionalEstimates {
            mean: OracleEstimate { value: mean, stderr: se_mean, effective_sample_size: ess },
            var: OracleEstimate { value: var, stderr: se_var, effective_sample_size: ess },
        })
    }

    /// Sample mean of ΔR: the unconditional E[M(t, t+s]] with its
    /// standard error (used by tower-property checks).
    pub fn unconditional_increment_mean(&self) -> OracleEstimate {
        let n = self.delta_r.len() as f64;
        let factor = match &self.cluster {
            ClusterModel::Poisson { .. } => 1.0,
            ClusterModel::NegBinomial { p, .. } => (1.0 - p) / p,
        };
        let mean = self.delta_r.iter().sum::<f64>() / n * factor;
        let var = self
            .delta_r
            .iter()
            .map(|&d| {
                let e = d * factor - mean;
                e * e
            })
            .sum::<f64>()
            / (n - 1.0);
        OracleEstimate {
            value: mean,
            stderr: (var / n).sqrt(),
            effective_sample_size: n,
        }
    }
}

/// One-shot semi-analytic oracle for a single conditioning value.
pub fn semi_analytic_oracle(
    sc: &Scenario,
    m: u64,
    n_reps: usize,
    seed: u64,
) -> Result<ConditionalEstimates> {
    OracleSamples::build(sc, n_reps, seed)?.estimate(m)
}
