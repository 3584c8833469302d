//! Derived performance metrics.

use crate::error::{Error, Result};
use crate::harness::profile::{MachineProfile, GIB};

/// Median of `values`; the mean of the two middle values for even counts.
/// Sorts in place. Empty input gives NaN.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// GiB/s of one read plus one write of `problem_bytes` in `time_s`.
pub fn effective_bandwidth(problem_bytes: u64, time_s: f64) -> Result<f64> {
    if !(time_s > 0.0) {
        return Err(Error::Argument(format!(
            "time must be positive, got {time_s}"
        )));
    }
    Ok(2.0 * problem_bytes as f64 / time_s / GIB)
}

/// Million element updates per second per watt.
pub fn energy_efficiency(updates: u64, time_s: f64, tdp_w: f64) -> Result<f64> {
    if !(time_s > 0.0) || !(tdp_w > 0.0) {
        return Err(Error::Argument(format!(
            "time and power must be positive, got {time_s} s and {tdp_w} W"
        )));
    }
    Ok(updates as f64 / time_s / tdp_w / 1e6)
}

/// Fraction of the profile's peak bandwidth.
pub fn utilization(eff_bw_gib_s: f64, profile: &MachineProfile) -> f64 {
    eff_bw_gib_s / profile.peak_bw_gib_s
}
