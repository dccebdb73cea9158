//! Checkpoint-interval policy: the two-term smoothing recurrence over
//! previous intervals, seeded either with fixed values or from a node's
//! failure history via the square-root overhead/MTBF tradeoff.

use serde::{Deserialize, Serialize};

fn default_min_interval() -> f64 {
    1.0
}
fn default_max_interval() -> f64 {
    1e6
}
fn default_export_bytes() -> u64 {
    1_000_000
}
fn default_prior_mtbf() -> f64 {
    1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    /// Smoothing weight on the most recent interval.
    pub w: f64,
    /// Seed intervals in seconds.
    pub i0: f64,
    pub i1: f64,
    /// Export to the parent node on every E-th checkpoint.
    pub export_every: u32,
    /// Seconds of pure overhead per checkpoint.
    pub checkpoint_cost: f64,
    #[serde(default = "default_min_interval")]
    pub min_interval: f64,
    #[serde(default = "default_max_interval")]
    pub max_interval: f64,
    /// Bytes shipped to the parent per export; charged to the network model.
    #[serde(default = "default_export_bytes")]
    pub export_bytes: u64,
    /// Seed (i0, i1) from per-node failure history instead of the fixed
    /// values above.
    #[serde(default)]
    pub young_seed: bool,
}

impl CheckpointPolicy {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.w <= 0.0 || self.w >= 2.0 {
            v.push(format!("W = {} outside (0,2) convergence domain", self.w));
        }
        if self.i0 <= 0.0 || self.i1 <= 0.0 {
            v.push("seed intervals i0, i1 must be > 0".to_string());
        }
        if self.export_every == 0 {
            v.push("export_every must be >= 1".to_string());
        }
        if self.checkpoint_cost <= 0.0 {
            v.push("checkpoint_cost must be > 0".to_string());
        }
        if self.min_interval <= 0.0 || self.min_interval > self.max_interval {
            v.push("need 0 < min_interval <= max_interval".to_string());
        }
        v
    }

    /// One step of the recurrence, clamped into [min_interval, max_interval]
    /// (W > 1 can drive the raw value non-positive).
    pub fn next_interval(&self, i_prev: f64, i_prev2: f64) -> f64 {
        next_interval(self.w, i_prev, i_prev2).clamp(self.min_interval, self.max_interval)
    }

    /// Fixed point the recurrence converges to for 0 < W < 2.
    pub fn limit(&self) -> f64 {
        ((1.0 - self.w) * self.i0 + self.i1) / (2.0 - self.w)
    }

    /// Seed intervals for one node. With `young_seed` the target is
    /// sqrt(2 * cost * mtbf), so unstable nodes checkpoint more often;
    /// otherwise the configured (i0, i1).
    pub fn seed_intervals(&self, history: &FailureHistory) -> (f64, f64) {
        if self.young_seed {
            let t = (2.0 * self.checkpoint_cost * history.mtbf_estimate())
                .sqrt()
                .clamp(self.min_interval, self.max_interval);
            (t, t)
        } else {
            (self.i0, self.i1)
        }
    }
}

/// The raw interval recurrence, unclamped.
pub fn next_interval(w: f64, i_prev: f64, i_prev2: f64) -> f64 {
    w * i_prev + (1.0 - w) * i_prev2
}

/// Per-node failure timestamps with an exponentially weighted mean
/// inter-failure interval. MTBF falls back to a configured prior until two
/// failures have been observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureHistory {
    pub failure_times: Vec<f64>,
    pub ew_interval: Option<f64>,
    #[serde(default = "default_prior_mtbf")]
    pub prior_mtbf: f64,
}

impl Default for FailureHistory {
    fn default() -> Self {
        Self {
            failure_times: Vec::new(),
            ew_interval: None,
            prior_mtbf: default_prior_mtbf(),
        }
    }
}

const EW_ALPHA: f64 = 0.5;

impl FailureHistory {
    pub fn record_failure(&mut self, time: f64) {
        if let Some(&last) = self.failure_times.last() {
            let interval = (time - last).max(f64::EPSILON);
            self.ew_interval = Some(match self.ew_interval {
                Some(ew) => EW_ALPHA * interval + (1.0 - EW_ALPHA) * ew,
                None => interval,
            });
        }
        self.failure_times.push(time);
    }

    pub fn mtbf_estimate(&self) -> f64 {
        self.ew_interval.unwrap_or(self.prior_mtbf)
    }

    pub fn ew_failure_rate(&self) -> f64 {
        1.0 / self.mtbf_estimate()
    }
}
