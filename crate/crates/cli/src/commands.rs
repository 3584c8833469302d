use std::cell::RefCell;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use fusedstencil::autotune::{
    enumerate_candidates, tune_kernel, TuneConfig, TuneResult, WallClock,
};
use fusedstencil::error::EXIT_VERIFY;
use fusedstencil::exec::tau_x_multiple;
use fusedstencil::harness::bench::{
    run_benchmark, write_csv, write_trials_csv, BenchConfig, BenchRecord,
};
use fusedstencil::harness::oracle::naive_oracle_step;
use fusedstencil::harness::problem::{Problem, Stepper};
use fusedstencil::harness::spec::builtin_profile;
use fusedstencil::harness::verify::{diffusion_c, mhd_c, verify_sets_allclose, verify_sets_ulp};
use fusedstencil::{
    machine_balance, BufferBudget, DType, Error, Executor, MachineProfile, ProblemKind,
    ProblemSpec, Real, Result, Strategy, TilePlan,
};

type Code = i32;

fn executor(spec: &ProblemSpec, workers: Option<usize>) -> Result<Executor> {
    Ok(Executor::new(workers.unwrap_or(spec.tune.workers))?.strict(spec.tune.strict))
}

fn profile_for(spec: &ProblemSpec, path: Option<&Path>) -> Result<MachineProfile> {
    match path {
        Some(p) => MachineProfile::load(p),
        None => spec.profile(),
    }
}

fn budget_for(spec: &ProblemSpec, profile: &MachineProfile) -> Result<BufferBudget> {
    match spec.tune.budget_kib {
        Some(kib) => BufferBudget::new((kib * 1024.0) as usize),
        None => Ok(BufferBudget::from_profile(profile)),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run(path: &Path, steps: Option<usize>, workers: Option<usize>) -> Result<Code> {
    let spec = ProblemSpec::load(path)?;
    match spec.dtype() {
        DType::Fp32 => run_as::<f32>(&spec, steps, workers),
        DType::Fp64 => run_as::<f64>(&spec, steps, workers),
    }
}

fn run_as<T: Real>(
    spec: &ProblemSpec,
    steps: Option<usize>,
    workers: Option<usize>,
) -> Result<Code> {
    let exec = executor(spec, workers)?;
    let mut p = spec.build::<T>()?;
    let plan = spec.plan();
    let steps = steps.unwrap_or(spec.run.steps);
    let mut stepper = Stepper::new(&p);
    let start = Instant::now();
    for i in 0..steps {
        stepper
            .step(&exec, &mut p, &plan)
            .map_err(|e| Error::Step {
                iteration: i,
                source: Box::new(e),
            })?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "{} {} {:?}: {steps} steps in {elapsed:.3} s",
        spec.case(),
        T::DTYPE.name(),
        p.fields.shape().dims()
    );
    println!("{:<10} {:>14} {:>14} {:>14}", "field", "min", "max", "mean");
    for (j, (f, name)) in p.fields.fields().iter().zip(p.fields.names()).enumerate() {
        let v = f.interior();
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                let x = x.to_f64_lossy();
                (lo.min(x), hi.max(x))
            });
        let mean = v.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / v.len() as f64;
        if let Some(at) = v.iter().position(|x| !x.is_finite()) {
            let [i, jj, k] = p.fields.shape().coords(at);
            return Err(Error::Numeric {
                field: j,
                i,
                j: jj,
                k,
            });
        }
        println!("{:<10} {lo:>14.6e} {hi:>14.6e} {mean:>14.6e}", name);
    }
    Ok(0)
}

fn tuned<T: Real>(
    spec: &ProblemSpec,
    p: &Problem<T>,
    exec: &Executor,
    profile: &MachineProfile,
) -> Result<TuneResult> {
    let space = spec
        .tune
        .space
        .fit(p.fields.shape().dims(), p.kernel.n_fields());
    let candidates = enumerate_candidates(&space, profile, T::DTYPE)?;
    let cfg = TuneConfig {
        warmups: spec.tune.warmups,
        timed: spec.tune.timed,
    };
    tune_kernel(
        exec,
        &p.fields,
        &p.kernel,
        &candidates,
        &budget_for(spec, profile)?,
        profile,
        spec.tune.strict,
        &mut WallClock,
        &cfg,
    )
}

pub fn tune(
    path: &Path,
    profile: Option<&Path>,
    trials: Option<&Path>,
    workers: Option<usize>,
    out: Option<&Path>,
) -> Result<Code> {
    let mut spec = ProblemSpec::load(path)?;
    let prof = profile_for(&spec, profile)?;
    let exec = executor(&spec, workers)?;
    let r = match spec.dtype() {
        DType::Fp32 => tuned(&spec, &spec.build::<f32>()?, &exec, &prof)?,
        DType::Fp64 => tuned(&spec, &spec.build::<f64>()?, &exec, &prof)?,
    };
    if let Some(t) = trials {
        write_trials_csv(output(Some(t))?, &r.trials)?;
    }
    let ok = r.trials.iter().filter(|t| t.median.is_some()).count();
    eprintln!(
        "{} candidates, {ok} timed; best {} tau {:?} cols/pass {} at {:.3} ms",
        r.trials.len(),
        r.best.strategy.name(),
        r.best.tau,
        r.best.columns_per_pass,
        r.best_median.as_secs_f64() * 1e3
    );
    spec.plan = Some(r.best);
    output(out)?.write_all(spec.to_toml().as_bytes())?;
    Ok(0)
}

pub fn bench(
    path: &Path,
    profile: Option<&Path>,
    iters: Option<usize>,
    workers: Option<usize>,
    out: Option<&Path>,
) -> Result<Code> {
    let spec = ProblemSpec::load(path)?;
    let prof = profile_for(&spec, profile)?;
    let records = match spec.dtype() {
        DType::Fp32 => bench_as::<f32>(&spec, &prof, iters, workers)?,
        DType::Fp64 => bench_as::<f64>(&spec, &prof, iters, workers)?,
    };
    write_csv(output(out)?, &records)?;
    Ok(0)
}

fn bench_as<T: Real>(
    spec: &ProblemSpec,
    profile: &MachineProfile,
    iters: Option<usize>,
    workers: Option<usize>,
) -> Result<Vec<BenchRecord>> {
    let exec = executor(spec, workers)?;
    let shape = spec.shape()?;
    let radii: Vec<Option<usize>> =
        if spec.kind() == ProblemKind::CrossCorr && !spec.bench.radii.is_empty() {
            spec.bench.radii.iter().map(|&r| Some(r)).collect()
        } else {
            vec![None]
        };
    let cfg = BenchConfig {
        iters: iters.unwrap_or(spec.bench.iters),
        warmups: spec.bench.warmups,
    };
    let mut records = Vec::new();
    for radius in radii {
        let p = spec.build_at::<T>(shape, radius)?;
        let plan = if spec.bench.tune {
            tuned(spec, &p, &exec, profile)?.best
        } else {
            spec.plan()
        };
        let (case, r, n_f) = (p.case.clone(), p.radius, p.kernel.n_fields());
        let mut stepper = Stepper::new(&p);
        let cell = RefCell::new(p);
        let timing = run_benchmark(
            &mut || stepper.timed_unit(&exec, &mut cell.borrow_mut(), &plan),
            &mut || cell.borrow_mut().fields.refresh_halo(),
            &cfg,
            &mut WallClock,
        )?;
        let rec = BenchRecord::new(
            &case,
            T::DTYPE,
            r,
            shape.dims(),
            n_f,
            plan,
            timing.median_s,
            profile,
        )?;
        eprintln!("{case} r={r}: {:.3} ms", timing.median_s * 1e3);
        records.push(rec);
    }
    Ok(records)
}

pub fn verify(path: &Path, against: crate::Reference, workers: Option<usize>) -> Result<Code> {
    let spec = ProblemSpec::load(path)?;
    match spec.dtype() {
        DType::Fp32 => verify_as::<f32>(&spec, against, workers),
        DType::Fp64 => verify_as::<f64>(&spec, against, workers),
    }
}

fn verify_as<T: Real>(
    spec: &ProblemSpec,
    against: crate::Reference,
    workers: Option<usize>,
) -> Result<Code> {
    let exec = executor(spec, workers)?;
    let p = spec.build::<T>()?;
    let plan = spec.plan();
    let fused = exec.fused_step(&p.fields, &p.kernel, &plan)?;
    let reference = match against {
        crate::Reference::Oracle => naive_oracle_step(&p.fields, &p.kernel)?,
        crate::Reference::Direct => {
            let direct = TilePlan {
                strategy: Strategy::Direct,
                columns_per_pass: 1,
                ..TilePlan::direct(p.fields.shape().dims())
            };
            exec.fused_step(&p.fields, &p.kernel, &direct)?
        }
    };
    let c = spec.verify.c.unwrap_or_else(|| match spec.kind() {
        ProblemKind::Mhd => mhd_c::<T>(),
        _ => diffusion_c::<T>(),
    });
    let ulp = verify_sets_ulp(&fused, &reference, spec.verify.max_ulp)?;
    let close = verify_sets_allclose(&fused, &reference, c)?;
    println!(
        "{} {} {} tau {:?}",
        spec.case(),
        T::DTYPE.name(),
        plan.strategy.name(),
        plan.tau
    );
    println!("ulp (max {}): {ulp}", spec.verify.max_ulp);
    println!("allclose (c = {c:e}): {close}");
    Ok(if ulp.passed() && close.passed() {
        0
    } else {
        EXIT_VERIFY
    })
}

pub fn info(profile: &str) -> Result<Code> {
    let path = Path::new(profile);
    let p = if path.exists() || profile.ends_with(".toml") {
        MachineProfile::load(path)?
    } else {
        builtin_profile(profile)?
    };
    println!("profile            {}", p.name);
    println!("peak bandwidth     {} GiB/s", p.peak_bw_gib_s);
    println!(
        "peak fp64 / fp32   {} / {} TFLOP/s",
        p.peak_fp64_tflops, p.peak_fp32_tflops
    );
    println!("tdp                {} W", p.tdp_w);
    for dt in [DType::Fp64, DType::Fp32] {
        println!(
            "{:<18} {:.1} flop/B; tau_x multiple {}",
            format!("balance {}", dt.name()),
            machine_balance(&p, dt),
            tau_x_multiple(&p, dt)
        );
    }
    println!(
        "tile buffer budget {} B ({} KiB)",
        p.buffer_bytes(),
        p.shared_kib
    );
    println!("l1 / l2            {} KiB / {} MiB", p.l1_kib, p.l2_mib);
    println!("simd width         {}", p.simd_width);
    Ok(0)
}
