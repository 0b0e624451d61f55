//! Structured verdicts emitted by the checkers and detectors.
//!
//! Reports serialize to JSON with a `schema_version` field; per-sample
//! margins go to flat CSV for plotting. Serialization is deterministic
//! (no maps with unstable iteration order), so identical configs and seeds
//! produce byte-identical files.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "PASS"),
            Verdict::Fail => write!(f, "FAIL"),
            Verdict::Inconclusive => write!(f, "INCONCLUSIVE"),
        }
    }
}

/// The sample achieving the worst margin of a check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

/// Outcome of a pointwise or trajectory-level check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub verdict: Verdict,
    /// Minimum margin observed over all samples; FAIL iff below -tolerance.
    pub worst_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub samples_evaluated: usize,
    /// Sampler starvation events; nonzero without a FAIL witness means INCONCLUSIVE.
    pub warnings: usize,
    /// Tolerances and densities the verdict was produced with.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
}

impl CheckReport {
    pub fn new(
        verdict: Verdict,
        worst_margin: f64,
        witness: Option<Witness>,
        samples_evaluated: usize,
        warnings: usize,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            verdict,
            worst_margin,
            witness,
            samples_evaluated,
            warnings,
            config_echo: None,
        }
    }

    pub fn with_config_echo(mut self, echo: serde_json::Value) -> Self {
        self.config_echo = Some(echo);
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// One margin sample for CSV export.
#[derive(Debug, Clone, Serialize)]
pub struct MarginSample {
    pub index: usize,
    pub constraint: usize,
    pub margin: f64,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Write margin samples as flat CSV (header + constant column count).
pub fn margins_to_csv(samples: &[MarginSample], dim: usize) -> String {
    let mut s = String::new();
    s.push_str("index,constraint,margin");
    for i in 0..dim {
        s.push_str(&format!(",x_{i}"));
    }
    for i in 0..dim {
        s.push_str(&format!(",theta_{i}"));
    }
    s.push('\n');
    for m in samples {
        s.push_str(&format!("{},{},{:.17e}", m.index, m.constraint, m.margin));
        for v in &m.x {
            s.push_str(&format!(",{v:.17e}"));
        }
        for v in &m.theta {
            s.push_str(&format!(",{v:.17e}"));
        }
        s.push('\n');
    }
    s
}

/// Fitted Hilbert-metric contraction rate over propagated tangent pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub schema_version: u32,
    /// λ̂: decay rate of log d(t) (positive = contraction), worst case over pairs.
    pub fitted_rate: f64,
    /// k̂ ≥ 1 such that d(t) ≲ k̂ · exp(-λ̂ (t - T)) · Δ on the fitted window.
    pub fitted_offset: f64,
    /// Goodness of the log-linear fit on the worst pair.
    pub r_squared: f64,
    /// Start of the fitted tail window.
    pub horizon_t: f64,
    /// Maximum initial Hilbert distance over the retained pairs (finite proxy for Δ).
    pub delta_bound: f64,
    pub pairs_used: usize,
    /// Pairs discarded because the distance reached +∞ (boundary contact).
    pub pairs_discarded: usize,
    /// True only when fitted_rate > 0 and r_squared ≥ 0.9.
    pub contraction_asserted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
}

/// Distance time series for CSV export: one row per (pair, time).
pub fn distances_to_csv(series: &[(usize, Vec<(f64, f64)>)]) -> String {
    let mut s = String::from("pair,t,distance\n");
    for (pair, pts) in series {
        for (t, d) in pts {
            s.push_str(&format!("{pair},{t:.9e},{d:.17e}\n"));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorKind {
    FixedPoints,
    Curve1d,
    LimitCycle,
    Synchronization,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HypothesisVerdict {
    Pass,
    Fail,
    /// Stated but not numerically checkable (metric-space completeness).
    Assumed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub name: String,
    pub verdict: HypothesisVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub x: Vec<f64>,
    /// Jacobian eigenvalues as (re, im) pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub stability: Stability,
    /// Fraction of sampled initial conditions converging here.
    pub basin_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleReport {
    pub period: f64,
    /// Orbit samples, row-major (flattened states).
    pub points: Vec<Vec<f64>>,
    /// Distance between the orbit start and its image after one period.
    pub closure_residual: f64,
    /// Successive section-crossing distances (resolvable ones).
    pub return_distances: Vec<f64>,
    /// Geometric-fit quality of the return distances (1.0 when fewer than 3 points).
    pub return_fit_r_squared: f64,
}

/// Verdict of the asymptotic-behavior detectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractorReport {
    pub schema_version: u32,
    pub kind: AttractorKind,
    pub fixed_points: Vec<EquilibriumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<CycleReport>,
    /// Fraction of sampled initial conditions converging to the reported attractor.
    pub basin_fraction: f64,
    pub hypotheses_checked: Vec<HypothesisRecord>,
    /// Free-form numeric diagnostics (deterministic order).
    pub diagnostics: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
}

impl AttractorReport {
    pub fn undetermined(hypotheses: Vec<HypothesisRecord>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: AttractorKind::Undetermined,
            fixed_points: Vec::new(),
            cycle: None,
            basin_fraction: 0.0,
            hypotheses_checked: hypotheses,
            diagnostics: Vec::new(),
            config_echo: None,
        }
    }

    pub fn hypotheses_all_pass(&self) -> bool {
        self.hypotheses_checked
            .iter()
            .all(|h| h.verdict != HypothesisVerdict::Fail)
    }
}

/// Trajectory CSV: `t, x_0..x_{n-1}[, theta_0..theta_{n-1}, log_mag]`.
pub fn trajectory_to_csv(
    times: &[f64],
    states: &[crate::dynamics::State],
    tangent: Option<(&[crate::dynamics::State], &[f64])>,
) -> String {
    let dim = states.first().map_or(0, |s| s.len());
    let mut s = String::from("t");
    for i in 0..dim {
        s.push_str(&format!(",x_{i}"));
    }
    if tangent.is_some() {
        for i in 0..dim {
            s.push_str(&format!(",theta_{i}"));
        }
        s.push_str(",log_mag");
    }
    s.push('\n');
    for (k, t) in times.iter().enumerate() {
        s.push_str(&format!("{t:.9e}"));
        for v in states[k].iter() {
            s.push_str(&format!(",{v:.17e}"));
        }
        if let Some((dirs, logs)) = tangent {
            for v in dirs[k].iter() {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push_str(&format!(",{:.17e}", logs[k]));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_roundtrip() {
        let r = CheckReport::new(
            Verdict::Fail,
            -0.25,
            Some(Witness {
                x: vec![1.0, 2.0],
                theta: Some(vec![0.0, 1.0]),
                constraint: Some(1),
                time: None,
            }),
            42,
            0,
        );
        let s = serde_json::to_string(&r).unwrap();
        let back: CheckReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.verdict, Verdict::Fail);
        assert_eq!(back.witness.unwrap().constraint, Some(1));
        assert_eq!(back.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn csv_has_header_and_constant_columns() {
        let samples = vec![
            MarginSample {
                index: 0,
                constraint: 1,
                margin: 0.5,
                x: vec![0.0, 0.0],
                theta: vec![1.0, 0.0],
            },
            MarginSample {
                index: 1,
                constraint: 0,
                margin: -0.1,
                x: vec![1.0, 1.0],
                theta: vec![0.0, 1.0],
            },
        ];
        let csv = margins_to_csv(&samples, 2);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
    }
}
