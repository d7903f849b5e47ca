use std::path::Path;

use ohflux::cli::{exit_code, main_with_args, run_checks, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE};
use ohflux::config::{parse_config, Command, Overrides};
use ohflux::io::parse_snapshot_csv;
use ohflux::mesh::State;
use ohflux::source::{compute_source_into, SourceTerm};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["ohflux"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

struct FlippedSource;

impl SourceTerm<f64> for FlippedSource {
    fn compute_into(&self, s: &State<f64>, out: &mut [f64]) {
        compute_source_into(&s.u, s.grid().dx(), out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

#[test]
fn default_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["check", "--out", &out_arg(dir.path())]), EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("check.csv")).unwrap();
    assert!(csv.starts_with("check,worst_residual,n,j,k,pass\n"));
    for name in [
        "entropy",
        "linf_bound",
        "bv_step",
        "l1_stability",
        "source_identities",
        "flux_monotonicity",
    ] {
        assert!(csv.contains(&format!("\n{name},")), "{name} missing from\n{csv}");
    }
    assert!(!csv.contains(",false"));
}

#[test]
fn check_on_two_cells_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["check", "--N", "2", "--out", &out_arg(dir.path())]), EXIT_OK);
    assert_eq!(
        run(&[
            "check",
            "--N",
            "2",
            "--profile",
            "corner_wave",
            "--out",
            &out_arg(dir.path())
        ]),
        EXIT_OK
    );
}

#[test]
fn check_with_lax_friedrichs_and_other_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = out_arg(dir.path());
    assert_eq!(run(&["check", "--flux", "lf", "--out", &o]), EXIT_OK);
    assert_eq!(
        run(&[
            "check",
            "--profile",
            "corner_wave",
            "--T",
            "3",
            "--check-every",
            "2",
            "--seed",
            "5",
            "--out",
            &o
        ]),
        EXIT_OK
    );
}

#[test]
fn flipped_source_is_an_invariant_violation() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        out: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let cfg = parse_config(None, &overrides, Command::Check).unwrap();
    let report = run_checks(&cfg, &FlippedSource).unwrap();
    let entropy = report.get("entropy").unwrap();
    assert!(!entropy.pass, "{entropy:?}");
    assert_eq!(exit_code(Ok(report)), EXIT_INVARIANT);
}

#[test]
fn run_writes_snapshots_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "profile = corner_wave\nN = 64\nT = 1\nsnapshot_times = 0.5\nverbosity = 0\n",
    )
    .unwrap();
    let out = dir.path().join("nested/out");
    assert_eq!(
        run(&["run", "--config", config.to_str().unwrap(), "--out", &out_arg(&out)]),
        EXIT_OK
    );
    for t in ["0", "0.5", "1"] {
        let text = std::fs::read_to_string(out.join(format!("corner_wave_N64_t{t}.csv"))).unwrap();
        let (x, u) = parse_snapshot_csv(&text).unwrap();
        assert_eq!((x.len(), u.len()), (64, 64));
        assert_eq!(x[0], 0.5 / 64.0);
        assert!(u.iter().sum::<f64>().abs() / 64.0 < 1e-15);
    }
    let diag = std::fs::read_to_string(out.join("diagnostics_corner_wave_N64.csv")).unwrap();
    assert!(diag.contains("\nbv_bound,") && !diag.contains(",false"));
}

#[test]
fn zero_end_time_records_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&[
            "run",
            "--profile",
            "cosine",
            "--N",
            "32",
            "--T",
            "0",
            "--out",
            &out_arg(dir.path())
        ]),
        EXIT_OK
    );
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("cosine_"))
        .collect();
    assert_eq!(names, ["cosine_N32_t0.csv"]);
}

#[test]
fn convergence_writes_table_and_figure_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.cfg");
    std::fs::write(
        &config,
        "profile = cosine\nN_list = 32, 64, 128\nN_ref = 256\nT = 1\nverbosity = 0\n",
    )
    .unwrap();
    assert_eq!(
        run(&[
            "convergence",
            "--config",
            config.to_str().unwrap(),
            "--out",
            &out_arg(dir.path())
        ]),
        EXIT_OK
    );
    let table = std::fs::read_to_string(dir.path().join("convergence_cosine.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "N,E_percent,rate");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("32,") && lines[1].ends_with(','));
    for f in [
        "cosine_initial.csv",
        "cosine_N128_T1.csv",
        "cosine_ref_N256_T1.csv",
        "diagnostics_convergence_cosine.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn usage_and_io_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["run", "--bogus"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["run", "--T", "1", "--out", &out_arg(dir.path())]), EXIT_USAGE);
    assert_eq!(
        run(&["run", "--profile", "square", "--T", "1", "--out", &out_arg(dir.path())]),
        EXIT_USAGE
    );
    assert_eq!(
        run(&["check", "--config", dir.path().join("missing.cfg").to_str().unwrap()]),
        EXIT_USAGE
    );

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "profile = cosine\nT = 1\ncolour = blue\n").unwrap();
    assert_eq!(run(&["run", "--config", bad.to_str().unwrap()]), EXIT_USAGE);

    let file = dir.path().join("plain_file");
    std::fs::write(&file, "x").unwrap();
    let unwritable = file.join("sub");
    assert_eq!(
        run(&[
            "run",
            "--profile",
            "cosine",
            "--N",
            "16",
            "--T",
            "0.1",
            "--out",
            &out_arg(&unwritable)
        ]),
        EXIT_USAGE
    );
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(&["--help"]), EXIT_OK);
    assert_eq!(run(&["check", "--help"]), EXIT_OK);
}
