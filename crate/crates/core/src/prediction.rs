//! Shared prediction result type.

use serde::Serialize;

/// Conditional mean and variance of the future increment M(t, t+s] for one
/// conditioning value, with diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PredictionResult {
    /// The conditioning value: m for {M(t) = m}, ℓ for {N̂(t) = ℓ}.
    pub conditioning: u64,
    pub mean: f64,
    pub variance: f64,
    /// ln P(M(t) = m) when conditioning on the observed count (lets callers
    /// see when they condition on an extreme tail event).
    pub log_pmf: Option<f64>,
    pub flags: DiagnosticFlags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DiagnosticFlags {
    /// Mean was slightly negative and clamped to 0.
    pub mean_clamped: bool,
    /// Variance was slightly negative and clamped to 0.
    pub variance_clamped: bool,
    /// A contributing table entry lost more than 12 decimal digits to
    /// cancellation, or the conditioning value lies outside the validated
    /// envelope; treat the numbers as indicative only.
    pub precision_warning: bool,
    /// Conditioning event has probability below 1e-300.
    pub extreme_tail: bool,
}

impl DiagnosticFlags {
    pub fn any(&self) -> bool {
        self.mean_clamped || self.variance_clamped || self.precision_warning || self.extreme_tail
    }

    /// Compact semicolon-joined rendering for CSV output.
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if self.mean_clamped {
            parts.push("mean_clamped");
        }
        if self.variance_clamped {
            parts.push("variance_clamped");
        }
        if self.precision_warning {
            parts.push("precision_warning");
        }
        if self.extreme_tail {
            parts.push("extreme_tail");
        }
        parts.join(";")
    }
}
