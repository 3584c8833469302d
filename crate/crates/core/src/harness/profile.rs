use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::DType;

/// Peak-rate description of a device, used for roofline-style metrics and
/// for the tiling rules of the autotuner.
///
/// TOML keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineProfile {
    pub name: String,
    pub peak_bw_gib_s: f64,
    pub peak_fp64_tflops: f64,
    pub peak_fp32_tflops: f64,
    pub tdp_w: f64,
    pub simd_width: usize,
    pub cache_line_bytes: usize,
    /// Capacity of the explicitly managed tile buffer.
    pub shared_kib: f64,
    pub l1_kib: f64,
    pub l2_mib: f64,
}

pub const GIB: f64 = (1u64 << 30) as f64;

impl MachineProfile {
    pub fn a100() -> Self {
        Self {
            name: "A100".into(),
            peak_bw_gib_s: 1448.0,
            peak_fp64_tflops: 9.7,
            peak_fp32_tflops: 19.5,
            tdp_w: 400.0,
            simd_width: 32,
            cache_line_bytes: 64,
            shared_kib: 164.0,
            l1_kib: 192.0,
            l2_mib: 40.0,
        }
    }

    pub fn v100() -> Self {
        Self {
            name: "V100".into(),
            peak_bw_gib_s: 835.0,
            peak_fp64_tflops: 7.8,
            peak_fp32_tflops: 15.7,
            tdp_w: 300.0,
            simd_width: 32,
            cache_line_bytes: 64,
            shared_kib: 96.0,
            l1_kib: 128.0,
            l2_mib: 6.0,
        }
    }

    /// One graphics compute die of an MI250X; TDP is half the card's.
    pub fn mi250x_gcd() -> Self {
        Self {
            name: "MI250X-GCD".into(),
            peak_bw_gib_s: 1526.0,
            peak_fp64_tflops: 23.9,
            peak_fp32_tflops: 23.9,
            tdp_w: 280.0,
            simd_width: 64,
            cache_line_bytes: 128,
            shared_kib: 64.0,
            l1_kib: 16.0,
            l2_mib: 8.0,
        }
    }

    pub fn mi100() -> Self {
        Self {
            name: "MI100".into(),
            peak_bw_gib_s: 1144.0,
            peak_fp64_tflops: 11.5,
            peak_fp32_tflops: 23.1,
            tdp_w: 300.0,
            simd_width: 64,
            cache_line_bytes: 128,
            shared_kib: 64.0,
            l1_kib: 16.0,
            l2_mib: 8.0,
        }
    }

    /// Nominal desktop CPU core; override with a profile file for real numbers.
    pub fn host() -> Self {
        Self {
            name: "host".into(),
            peak_bw_gib_s: 50.0,
            peak_fp64_tflops: 1.0,
            peak_fp32_tflops: 2.0,
            tdp_w: 125.0,
            simd_width: 8,
            cache_line_bytes: 64,
            shared_kib: 1024.0,
            l1_kib: 48.0,
            l2_mib: 2.0,
        }
    }

    /// The four accelerator profiles shipped with the crate.
    pub fn builtin() -> Vec<Self> {
        vec![
            Self::a100(),
            Self::v100(),
            Self::mi250x_gcd(),
            Self::mi100(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("peak_bw_gib_s", self.peak_bw_gib_s),
            ("peak_fp64_tflops", self.peak_fp64_tflops),
            ("peak_fp32_tflops", self.peak_fp32_tflops),
            ("tdp_w", self.tdp_w),
            ("shared_kib", self.shared_kib),
            ("l1_kib", self.l1_kib),
            ("l2_mib", self.l2_mib),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "profile field {name} must be positive, got {v}"
                )));
            }
        }
        if self.simd_width == 0 || self.cache_line_bytes == 0 {
            return Err(Error::Config(
                "profile simd_width and cache_line_bytes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: Self =
            toml::from_str(text).map_err(|e| crate::harness::spec::toml_error(text, &e))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::error::read_config(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn peak_flops(&self, dtype: DType) -> f64 {
        match dtype {
            DType::Fp32 => self.peak_fp32_tflops * 1e12,
            DType::Fp64 => self.peak_fp64_tflops * 1e12,
        }
    }

    pub fn peak_bw_bytes_s(&self) -> f64 {
        self.peak_bw_gib_s * GIB
    }

    /// Tile-buffer capacity in bytes.
    pub fn buffer_bytes(&self) -> usize {
        (self.shared_kib * 1024.0) as usize
    }
}

/// Peak FLOP/s divided by peak words/s: the operational intensity (per word)
/// at which a kernel stops being bandwidth bound.
pub fn machine_balance(p: &MachineProfile, dtype: DType) -> f64 {
    p.peak_flops(dtype) / (p.peak_bw_bytes_s() / dtype.bytes() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profiles_are_valid() {
        for p in MachineProfile::builtin() {
            p.validate().unwrap();
            assert_eq!(MachineProfile::from_toml(&p.to_toml()).unwrap(), p);
        }
    }

    #[test]
    fn balance_halves_with_double_bandwidth() {
        let mut p = MachineProfile::a100();
        let b = machine_balance(&p, DType::Fp64);
        p.peak_bw_gib_s *= 2.0;
        assert!((machine_balance(&p, DType::Fp64) - b / 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_profile_rejected() {
        let mut p = MachineProfile::v100();
        p.tdp_w = 0.0;
        assert!(p.validate().is_err());
        let text = MachineProfile::v100().to_toml() + "bogus = 1\n";
        assert!(matches!(
            MachineProfile::from_toml(&text),
            Err(Error::Parse { .. })
        ));
    }
}
