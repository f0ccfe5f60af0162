use serde::{Deserialize, Serialize};

/// Per-phase wall time, flop estimates and memory high-water marks for one run
/// (one rank, for distributed runs).
///
/// Phase times are disjoint: time spent inside collectives is booked to
/// `allreduce_s` and time spent loading batches to `io_s`, never to the
/// enclosing update phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCounters {
    pub h_update_s: f64,
    pub w_update_s: f64,
    pub allreduce_s: f64,
    pub error_check_s: f64,
    pub io_s: f64,
    pub total_s: f64,
    pub h_update_flops: f64,
    pub w_update_flops: f64,
    pub error_check_flops: f64,
    /// Largest number of A-batch bytes resident in the store at once.
    pub peak_resident_batch_bytes: u64,
    /// Largest tracked footprint: factors, accumulators, temporaries and resident batches.
    pub peak_tracked_bytes: u64,
    pub batch_loads: u64,
    pub batch_evictions: u64,
    pub bytes_read: u64,
}

impl PhaseCounters {
    pub fn phase_sum_s(&self) -> f64 {
        self.h_update_s + self.w_update_s + self.allreduce_s + self.error_check_s + self.io_s
    }

    /// `(name, seconds)` for each disjoint phase, in a fixed order.
    pub fn phases(&self) -> [(&'static str, f64); 5] {
        [
            ("h_update", self.h_update_s),
            ("w_update", self.w_update_s),
            ("allreduce", self.allreduce_s),
            ("error_check", self.error_check_s),
            ("io", self.io_s),
        ]
    }

    pub fn track_peak(&mut self, bytes: u64) {
        self.peak_tracked_bytes = self.peak_tracked_bytes.max(bytes);
    }
}
