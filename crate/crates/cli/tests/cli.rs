use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusedstencil"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_MHD: &str = "[problem]\nkind = \"mhd\"\ndomain = [12, 12, 12]\ninit_range = [-1e-5, 1e-5]\n\n[plan]\ntau = [8, 4, 8]\nstrategy = \"streaming\"\ncolumns_per_pass = 4\n";

// log of a negative value: NaN everywhere the field is below zero
const NAN_CUSTOM: &str = "[problem]\nkind = \"custom\"\ndomain = [8, 8]\n\n[custom]\nphi = [\"log(q(0,0))\"]\n\n[[custom.stencils]]\nkind = \"identity\"\nlabel = \"v\"\n";

#[test]
fn info_reports_balance_and_budget() {
    let p = root().join("profiles/a100.toml");
    let o = cli(&["info", "--profile", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(
        out.contains("balance fp64") && out.contains("49.9"),
        "{out}"
    );
    assert!(out.contains("167936 B"), "{out}");
}

#[test]
fn info_on_missing_profile_is_a_config_error() {
    let o = cli(&["info", "--profile", "/nonexistent/p.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_shipped_specs_pass() {
    for name in ["diffusion_verify.toml", "mhd_verify.toml"] {
        let p = root().join("specs").join(name);
        let o = cli(&["verify", p.to_str().unwrap(), "--against", "oracle"]);
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stdout)
        );
    }
}

#[test]
fn verify_mismatch_exits_one_and_numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let lax = write(dir.path(), "nan.toml", NAN_CUSTOM);
    let o = cli(&["verify", &lax]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));

    let strict = write(
        dir.path(),
        "strict.toml",
        &format!("{NAN_CUSTOM}\n[tune]\nstrict = true\n"),
    );
    let o = cli(&["verify", &strict]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = cli(&["run", &lax]);
    assert_eq!(code(&o), 3);
}

#[test]
fn malformed_spec_reports_line_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.toml",
        "[problem]\nkind = \"diffusion\"\ndomain = [8, 8\n",
    );
    let o = cli(&["run", &p]);
    assert_eq!(code(&o), 2);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("line 3"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let p = write(
        dir.path(),
        "unknown.toml",
        "[problem]\nkind = \"diffusion\"\ncolour = 1\n",
    );
    assert_eq!(code(&cli(&["verify", &p])), 2);
    assert_eq!(code(&cli(&["frobnicate"])), 2);
}

#[test]
fn run_prints_field_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "mhd.toml", SMALL_MHD);
    let o = cli(&["run", &p, "--steps", "2", "--workers", "2"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    for f in ["lnrho", "ux", "ss", "az"] {
        assert!(out.contains(f), "{out}");
    }
}

#[test]
fn tune_emits_a_spec_with_the_chosen_plan() {
    let dir = tempfile::tempdir().unwrap();
    let spec = format!("{SMALL_MHD}\n[tune]\nwarmups = 0\ntimed = 1\n\n[tune.space]\ntau_x = [4, 8]\ntau_y = [4]\ntau_z = [4, 8]\ncolumns_per_pass = [4, 8]\n");
    let p = write(dir.path(), "mhd.toml", &spec);
    let trials = dir.path().join("trials.csv");
    let tuned = dir.path().join("tuned.toml");
    let o = cli(&[
        "tune",
        &p,
        "--trials",
        trials.to_str().unwrap(),
        "--out",
        tuned.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(&trials).unwrap();
    assert!(log.starts_with("strategy,tau_x"), "{log}");
    assert!(log.lines().count() > 2);
    let text = std::fs::read_to_string(&tuned).unwrap();
    assert!(text.contains("[plan]"), "{text}");
    // the tuned spec is itself a valid input
    assert_eq!(code(&cli(&["verify", tuned.to_str().unwrap()])), 0);
}

#[test]
fn bench_writes_the_documented_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "cc.toml",
        "[problem]\nkind = \"crosscorr\"\ndomain = [4096]\n\n[crosscorr]\nradius = 1\nfields = 1\n\n[plan]\ntau = [256, 1, 1]\ncolumns_per_pass = 1\n\n[bench]\nwarmups = 1\nradii = [1, 4, 16]\n",
    );
    let csv = dir.path().join("out.csv");
    let prof = root().join("profiles/v100.toml");
    let o = cli(&[
        "bench",
        &p,
        "--iters",
        "3",
        "--profile",
        prof.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "case,dtype,radius,nx,ny,nz,strategy,tau_x,tau_y,tau_z,cols_per_pass,median_ms,eff_bw_gib_s,mupdates_s,mupd_s_w"
    );
    let radii: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(radii, ["1", "4", "16"]);
}

#[test]
fn zero_iterations_is_a_config_error() {
    let p = root().join("specs/diffusion_verify.toml");
    assert_eq!(
        code(&cli(&["bench", p.to_str().unwrap(), "--iters", "0"])),
        2
    );
}
