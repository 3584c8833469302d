//! Exhaustive search over pruned tile plans with an injectable clock.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{
    tau_x_multiple, validate_plan, BufferBudget, Executor, MacUnroll, Rejection, Strategy, TilePlan,
};
use crate::fusion::FusedKernel;
use crate::harness::metrics::median;
use crate::harness::profile::MachineProfile;
use crate::real::{DType, Real};
use crate::tensor::FieldSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub tau_x: Vec<usize>,
    pub tau_y: Vec<usize>,
    pub tau_z: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub outputs_per_item: Vec<usize>,
    pub mac_unroll: Vec<MacUnroll>,
    pub columns_per_pass: Vec<usize>,
    pub max_candidates: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            tau_x: vec![4, 8, 16, 32, 64],
            tau_y: vec![1, 2, 4, 8],
            tau_z: vec![1, 2, 4, 8],
            strategies: vec![Strategy::Direct, Strategy::Streaming],
            outputs_per_item: vec![1],
            mac_unroll: vec![MacUnroll::Full],
            columns_per_pass: vec![1, 4, 8],
            max_candidates: 64,
        }
    }
}

impl SearchSpace {
    /// Drop extents larger than the domain (they would only duplicate the
    /// clipped plan) and column groups wider than the field count.
    pub fn fit(&self, dims: [usize; 3], n_fields: usize) -> Self {
        let clip = |v: &[usize], n: usize| -> Vec<usize> {
            let mut out: Vec<usize> = v.iter().copied().filter(|&t| t <= n).collect();
            if out.is_empty() {
                out.push(v.iter().copied().min().unwrap_or(1));
            }
            out
        };
        let mut cpp: Vec<usize> = self
            .columns_per_pass
            .iter()
            .map(|&c| c.min(n_fields))
            .collect();
        cpp.sort_unstable();
        cpp.dedup();
        Self {
            tau_x: clip(&self.tau_x, dims[0].next_power_of_two()),
            tau_y: clip(&self.tau_y, dims[1].next_power_of_two()),
            tau_z: clip(&self.tau_z, dims[2].next_power_of_two()),
            columns_per_pass: cpp,
            ..self.clone()
        }
    }
}

/// Every plan in `space` that satisfies the cache-line and SIMD rules, capped at
/// `max_candidates` by keeping every `ceil(n / max)`-th plan.
pub fn enumerate_candidates(
    space: &SearchSpace,
    profile: &MachineProfile,
    dtype: DType,
) -> Result<Vec<TilePlan>> {
    let line = tau_x_multiple(profile, dtype);
    let simd = profile.simd_width.max(1);
    let mut plans = Vec::new();
    for &tx in &space.tau_x {
        if tx == 0 || tx % line != 0 {
            continue;
        }
        for &ty in &space.tau_y {
            for &tz in &space.tau_z {
                if ty == 0 || tz == 0 || (tx * ty * tz) % simd != 0 {
                    continue;
                }
                for &strategy in &space.strategies {
                    for &outputs_per_item in &space.outputs_per_item {
                        for &mac_unroll in &space.mac_unroll {
                            for &columns_per_pass in &space.columns_per_pass {
                                plans.push(TilePlan {
                                    tau: [tx, ty, tz],
                                    strategy,
                                    outputs_per_item,
                                    mac_unroll,
                                    columns_per_pass,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    plans.sort();
    plans.dedup();
    if plans.is_empty() {
        return Err(Error::EmptySearchSpace(format!(
            "no plan has tau_x a multiple of {line} and a tile volume divisible by {simd}"
        )));
    }
    let cap = space.max_candidates.max(1);
    if plans.len() > cap {
        let stride = plans.len().div_ceil(cap);
        plans = plans.into_iter().step_by(stride).collect();
    }
    Ok(plans)
}

/// A clock around one step.
pub trait Timer {
    fn measure(&mut self, f: &mut dyn FnMut() -> Result<()>) -> Result<Duration>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WallClock;

impl Timer for WallClock {
    fn measure(&mut self, f: &mut dyn FnMut() -> Result<()>) -> Result<Duration> {
        let start = Instant::now();
        f()?;
        Ok(start.elapsed())
    }
}

/// Runs the step, then reports the next duration from a fixed script.
#[derive(Debug, Clone)]
pub struct ScriptedClock {
    script: Vec<Duration>,
    next: usize,
}

impl ScriptedClock {
    pub fn new(script: impl IntoIterator<Item = Duration>) -> Self {
        Self {
            script: script.into_iter().collect(),
            next: 0,
        }
    }

    pub fn from_millis(ms: impl IntoIterator<Item = u64>) -> Self {
        Self::new(ms.into_iter().map(Duration::from_millis))
    }

    pub fn consumed(&self) -> usize {
        self.next
    }
}

impl Timer for ScriptedClock {
    fn measure(&mut self, f: &mut dyn FnMut() -> Result<()>) -> Result<Duration> {
        f()?;
        let d = self.script.get(self.next).copied().ok_or_else(|| {
            Error::Argument(format!(
                "clock script exhausted after {} readings",
                self.next
            ))
        })?;
        self.next += 1;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub warmups: usize,
    pub timed: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            warmups: 1,
            timed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrialStatus {
    Ok,
    Rejected(String),
    Failed(String),
}

impl TrialStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Rejected(_) => "rejected",
            TrialStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub plan: TilePlan,
    /// Median of the timed runs; `None` unless the status is `Ok`.
    pub median: Option<Duration>,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: TilePlan,
    pub best_median: Duration,
    pub trials: Vec<Trial>,
}

/// Validate, warm up and time each candidate in turn; return the plan with the
/// smallest median. Equal medians go to the smaller plan in `TilePlan` order
/// (tile extents first, then Direct before Streaming).
pub fn tune(
    candidates: &[TilePlan],
    mut validate: impl FnMut(&TilePlan) -> std::result::Result<(), Rejection>,
    mut step: impl FnMut(&TilePlan) -> Result<()>,
    timer: &mut dyn Timer,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::EmptySearchSpace("no candidates to tune".into()));
    }
    let mut trials = Vec::with_capacity(candidates.len());
    for plan in candidates {
        if let Err(r) = validate(plan) {
            trials.push(Trial {
                plan: *plan,
                median: None,
                status: TrialStatus::Rejected(r.0),
            });
            continue;
        }
        let outcome = (|| -> Result<Duration> {
            for _ in 0..cfg.warmups {
                step(plan)?;
            }
            let mut times = Vec::with_capacity(cfg.timed);
            for _ in 0..cfg.timed.max(1) {
                times.push(timer.measure(&mut || step(plan))?.as_secs_f64());
            }
            Ok(Duration::from_secs_f64(median(&mut times)))
        })();
        trials.push(match outcome {
            Ok(m) => Trial {
                plan: *plan,
                median: Some(m),
                status: TrialStatus::Ok,
            },
            Err(e) => Trial {
                plan: *plan,
                median: None,
                status: TrialStatus::Failed(e.to_string()),
            },
        });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.median.map(|m| (m, t.plan)))
        .min();
    match best {
        Some((best_median, best)) => Ok(TuneResult {
            best,
            best_median,
            trials,
        }),
        None => Err(Error::NoValidPlan(
            trials
                .iter()
                .map(|t| match &t.status {
                    TrialStatus::Rejected(r) | TrialStatus::Failed(r) => {
                        format!("{:?} {}: {r}", t.plan.tau, t.plan.strategy.name())
                    }
                    TrialStatus::Ok => unreachable!(),
                })
                .collect(),
        )),
    }
}

/// Tune `kernel` on `fields` with the executor, timing one fused step per run.
#[allow(clippy::too_many_arguments)]
pub fn tune_kernel<T: Real>(
    exec: &Executor,
    fields: &FieldSet<T>,
    kernel: &FusedKernel<T>,
    candidates: &[TilePlan],
    budget: &BufferBudget,
    profile: &MachineProfile,
    strict: bool,
    timer: &mut dyn Timer,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    let mut out = fields.zeros_like();
    tune(
        candidates,
        |p| validate_plan(p, kernel, budget, profile, strict),
        |p| {
            exec.fused_step_into(fields, kernel, p, &mut out)
                .map(|_| ())
        },
        timer,
        cfg,
    )
}
