//! Benchmark protocol and result records.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autotune::{Timer, Trial};
use crate::error::{Error, Result};
use crate::exec::{Strategy, TilePlan};
use crate::harness::metrics::{effective_bandwidth, energy_efficiency, median};
use crate::harness::profile::MachineProfile;
use crate::real::DType;
use crate::tensor::halo_refresh_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub iters: usize,
    pub warmups: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            warmups: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTiming {
    pub median_s: f64,
    pub samples_s: Vec<f64>,
    /// Halo refreshes that happened inside timed regions.
    pub refreshes_in_timed: u64,
    /// Halo refreshes performed between timed regions.
    pub refreshes_outside: u64,
}

/// Warm up, then time `iters` calls of `step`, calling `refresh` untimed before each.
pub fn run_benchmark(
    step: &mut dyn FnMut() -> Result<()>,
    refresh: &mut dyn FnMut(),
    cfg: &BenchConfig,
    timer: &mut dyn Timer,
) -> Result<BenchTiming> {
    if cfg.iters == 0 {
        return Err(Error::Argument("iters must be at least 1".into()));
    }
    for i in 0..cfg.warmups {
        refresh();
        step().map_err(|e| Error::Step {
            iteration: i,
            source: Box::new(e),
        })?;
    }
    let mut samples = Vec::with_capacity(cfg.iters);
    let (mut inside, mut outside) = (0, 0);
    for i in 0..cfg.iters {
        let before = halo_refresh_count();
        refresh();
        outside += halo_refresh_count() - before;
        let before = halo_refresh_count();
        let t = timer.measure(step).map_err(|e| Error::Step {
            iteration: cfg.warmups + i,
            source: Box::new(e),
        })?;
        inside += halo_refresh_count() - before;
        samples.push(t.as_secs_f64());
    }
    let median_s = median(&mut samples.clone());
    Ok(BenchTiming {
        median_s,
        samples_s: samples,
        refreshes_in_timed: inside,
        refreshes_outside: outside,
    })
}

/// One benchmark result with derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub case: String,
    pub dtype: DType,
    pub radius: usize,
    pub shape: [usize; 3],
    pub plan: TilePlan,
    pub median_s: f64,
    pub eff_bw_gib_s: f64,
    pub mupdates_s: f64,
    pub mupd_s_w: f64,
}

impl BenchRecord {
    /// Derive the metrics for `n_fields` fields of `shape` updated once in `median_s`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        case: &str,
        dtype: DType,
        radius: usize,
        shape: [usize; 3],
        n_fields: usize,
        plan: TilePlan,
        median_s: f64,
        profile: &MachineProfile,
    ) -> Result<Self> {
        let points: u64 = shape.iter().map(|&n| n as u64).product();
        let bytes = points * n_fields as u64 * dtype.bytes() as u64;
        Ok(Self {
            case: case.to_string(),
            dtype,
            radius,
            shape,
            plan,
            median_s,
            eff_bw_gib_s: effective_bandwidth(bytes, median_s)?,
            mupdates_s: points as f64 / median_s / 1e6,
            mupd_s_w: energy_efficiency(points, median_s, profile.tdp_w)?,
        })
    }
}

/// CSV row layout of a [`BenchRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub case: String,
    pub dtype: DType,
    pub radius: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub strategy: Strategy,
    pub tau_x: usize,
    pub tau_y: usize,
    pub tau_z: usize,
    pub cols_per_pass: usize,
    pub median_ms: f64,
    pub eff_bw_gib_s: f64,
    pub mupdates_s: f64,
    pub mupd_s_w: f64,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "case",
    "dtype",
    "radius",
    "nx",
    "ny",
    "nz",
    "strategy",
    "tau_x",
    "tau_y",
    "tau_z",
    "cols_per_pass",
    "median_ms",
    "eff_bw_gib_s",
    "mupdates_s",
    "mupd_s_w",
];

impl From<&BenchRecord> for CsvRow {
    fn from(r: &BenchRecord) -> Self {
        Self {
            case: r.case.clone(),
            dtype: r.dtype,
            radius: r.radius,
            nx: r.shape[0],
            ny: r.shape[1],
            nz: r.shape[2],
            strategy: r.plan.strategy,
            tau_x: r.plan.tau[0],
            tau_y: r.plan.tau[1],
            tau_z: r.plan.tau[2],
            cols_per_pass: r.plan.columns_per_pass,
            median_ms: r.median_s * 1e3,
            eff_bw_gib_s: r.eff_bw_gib_s,
            mupdates_s: r.mupdates_s,
            mupd_s_w: r.mupd_s_w,
        }
    }
}

pub fn write_csv<W: Write>(w: W, records: &[BenchRecord]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in records {
        out.serialize(CsvRow::from(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Io(format!("unexpected CSV header: {headers:?}")));
    }
    rdr.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Trial log as CSV: plan, status, median and reason.
pub fn write_trials_csv<W: Write>(w: W, trials: &[Trial]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "strategy",
        "tau_x",
        "tau_y",
        "tau_z",
        "outputs_per_item",
        "mac_unroll",
        "cols_per_pass",
        "status",
        "median_ms",
        "reason",
    ])?;
    for t in trials {
        let p = &t.plan;
        let reason = match &t.status {
            crate::autotune::TrialStatus::Ok => String::new(),
            crate::autotune::TrialStatus::Rejected(r) | crate::autotune::TrialStatus::Failed(r) => {
                r.clone()
            }
        };
        out.write_record([
            p.strategy.name().to_string(),
            p.tau[0].to_string(),
            p.tau[1].to_string(),
            p.tau[2].to_string(),
            p.outputs_per_item.to_string(),
            format!("{:?}", p.mac_unroll).to_lowercase(),
            p.columns_per_pass.to_string(),
            t.status.label().to_string(),
            t.median
                .map(|m| (m.as_secs_f64() * 1e3).to_string())
                .unwrap_or_default(),
            reason,
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autotune::ScriptedClock;

    #[test]
    fn fake_clock_median() {
        let mut clock = ScriptedClock::from_millis(1..=100);
        let mut calls = 0;
        let t = run_benchmark(
            &mut || {
                calls += 1;
                Ok(())
            },
            &mut || {},
            &BenchConfig {
                iters: 100,
                warmups: 3,
            },
            &mut clock,
        )
        .unwrap();
        assert!((t.median_s - 0.0505).abs() < 1e-15);
        assert_eq!(calls, 103);
    }

    #[test]
    fn single_iteration() {
        let mut clock = ScriptedClock::from_millis([7]);
        let t = run_benchmark(
            &mut || Ok(()),
            &mut || {},
            &BenchConfig {
                iters: 1,
                warmups: 0,
            },
            &mut clock,
        )
        .unwrap();
        assert_eq!(t.median_s, 0.007);
    }

    #[test]
    fn failure_reports_iteration() {
        let mut n = 0;
        let err = run_benchmark(
            &mut || {
                n += 1;
                if n == 5 {
                    Err(Error::Argument("bad".into()))
                } else {
                    Ok(())
                }
            },
            &mut || {},
            &BenchConfig {
                iters: 10,
                warmups: 2,
            },
            &mut crate::autotune::WallClock,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Step { iteration: 4, .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trip() {
        let p = MachineProfile::a100();
        let rec = BenchRecord::new(
            "mhd",
            DType::Fp64,
            3,
            [128, 128, 128],
            8,
            TilePlan::streaming([8, 8, 8], 4),
            0.874e-3,
            &p,
        )
        .unwrap();
        assert!((rec.mupd_s_w - 6.0).abs() < 0.1);
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("case,dtype,radius,nx,ny,nz,strategy,tau_x,tau_y,tau_z,cols_per_pass,median_ms,eff_bw_gib_s,mupdates_s,mupd_s_w\n"));
        let rows = read_csv(&buf[..]).unwrap();
        assert_eq!(rows, [CsvRow::from(&rec)]);
        // metrics recomputed from the row agree with the record
        let again = BenchRecord::new(
            &rows[0].case,
            rows[0].dtype,
            rows[0].radius,
            [rows[0].nx, rows[0].ny, rows[0].nz],
            8,
            rec.plan,
            rows[0].median_ms / 1e3,
            &p,
        )
        .unwrap();
        assert!((again.eff_bw_gib_s - rec.eff_bw_gib_s).abs() <= 1e-12 * rec.eff_bw_gib_s);
        assert!((again.mupd_s_w - rec.mupd_s_w).abs() <= 1e-12 * rec.mupd_s_w);
    }
}
