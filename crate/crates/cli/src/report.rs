//! JSON result reports. Every report carries `"schema": 1`; wall-clock
//! numbers live under `timing` and nowhere else, so two runs with the same
//! seed agree once that key is dropped.

use lrqp::oracle::KktReport;
use lrqp::Radii;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionVectors {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
}

impl SolutionVectors {
    pub fn new(x: &DVector<f64>, y: &DVector<f64>, s: &DVector<f64>) -> Self {
        let v = |d: &DVector<f64>| d.iter().copied().collect();
        SolutionVectors { x: v(x), y: v(y), s: v(s) }
    }

    pub fn vectors(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let v = |d: &[f64]| DVector::from_column_slice(d);
        (v(&self.x), v(&self.y), v(&self.s))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub seed: u64,
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Radii>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionVectors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svm: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<Value>,
    pub timing: Timing,
}

impl Report {
    pub fn new(command: &str, seed: u64, params: Value) -> Self {
        Report {
            schema: SCHEMA,
            command: command.into(),
            seed,
            params,
            objective: None,
            iterations: None,
            kkt: None,
            radii: None,
            solver: None,
            solution: None,
            svm: None,
            kernel: None,
            oracle: None,
            predict: None,
            verify: None,
            timing: Timing::default(),
        }
    }

    /// Stores a solver summary with its wall-clock field moved to `timing`.
    pub fn set_solver(&mut self, summary: &impl Serialize) -> serde_json::Result<()> {
        let mut v = serde_json::to_value(summary)?;
        if let Some(obj) = v.as_object_mut() {
            self.timing.solver_seconds = obj.remove("seconds").and_then(|s| s.as_f64());
        }
        self.solver = Some(v);
        Ok(())
    }
}

/// Largest deviation between two KKT reports, relative to `max(1, |stored|)`.
pub fn kkt_deviation(stored: &KktReport, fresh: &KktReport) -> f64 {
    let pairs = [
        (stored.stationarity, fresh.stationarity),
        (stored.primal_residual, fresh.primal_residual),
        (stored.dual_domain, fresh.dual_domain),
        (stored.gap_estimate, fresh.gap_estimate),
        (stored.objective, fresh.objective),
    ];
    pairs.iter().map(|(a, b)| (a - b).abs() / a.abs().max(1.0)).fold(0.0, f64::max)
}
