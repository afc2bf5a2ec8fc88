use std::path::Path;
use std::process::{Command, Output};

use cvtp_cli::csvio;

fn cvtp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvtp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cvtp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_sweep(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["sweep", "--set", "grid.g=[1.2, 1.6]", "--set", "grid.m_c=[1.8, 3.0]"];
    args.extend_from_slice(extra);
    cvtp(dir, &args)
}

#[test]
fn accept_all_profile_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvtp(dir.path(), &["profile", "--set", "filter.kind=accept_all", "--out", "p.csv"]);
    assert!(out.status.success(), "{out:?}");
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,f_succ,p_succ,log_p_succ,tail_bound,flag"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 121);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[1], "0.781250000000", "{row}");
        assert_eq!(cells[2], "1.00000000000");
        assert_eq!(cells[4], "");
        assert_eq!(cells[5], "ok");
    }
}

#[test]
fn profile_reports_tail_bound_beyond_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvtp(dir.path(), &["profile", "--set", "profile.radii=[0, 2.9, 3, 4, 5]"]);
    assert!(out.status.success());
    let rows = csvio::read_profile(&out.stdout[..]).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].tail_bound.is_none() && rows[1].tail_bound.is_none());
    for r in &rows[2..] {
        let bound = r.tail_bound.expect("bound at r >= m_c");
        assert!(r.f_succ <= bound + 1e-8, "{r:?}");
    }
    assert!((rows[0].p_succ - 0.0754558182020).abs() < 1e-12);
}

#[test]
fn empty_radius_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvtp(dir.path(), &["profile", "--set", "profile.radii=[]", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("p.csv").exists());
}

#[test]
fn unknown_keys_and_bad_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvtp(dir.path(), &["moments", "--set", "params.Vn=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.Vn"));
    std::fs::write(dir.path().join("c.toml"), "[filter]\ng = 0.9\n").unwrap();
    let out = cvtp(dir.path(), &["--config", "c.toml", "moments"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cvtp(dir.path(), &["nonsense"]).status.code(), Some(2));
}

#[test]
fn moments_key_value_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "lambda = 2.0\n[filter]\ng = 1.4\nm_c = 2.2\n").unwrap();
    let out = cvtp(dir.path(), &["--config", "c.toml", "--lambda", "3", "--quiet", "moments", "--out", "m.csv"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(text.starts_with("key,value\n"));
    assert!(text.contains("\ncantelli_guarantee,0.9\n"), "{text}");
    assert!(text.contains("\nF,0.785504087556\n"), "{text}");
    assert!(text.contains("\nlambda,3\n"));
}

#[test]
fn sweep_with_control_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_sweep(dir.path(), &["--set", "grid.include_control=true", "--out", "s.csv"]);
    assert!(out.status.success(), "{out:?}");
    let bytes = std::fs::read(dir.path().join("s.csv")).unwrap();
    let rows = csvio::read_sweep(&bytes[..]).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].is_control());
    assert_eq!(rows[0].p_succ, 1.0);
    assert_eq!((rows[1].g, rows[1].m_c), (1.2, 1.8));
    assert_eq!((rows[4].g, rows[4].m_c), (1.6, 3.0));
    let mut again = Vec::new();
    csvio::write_sweep(&mut again, &rows).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn frontier_reports_constraints() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_sweep(dir.path(), &["--set", "grid.include_control=true", "--out", "s.csv"]).status.success());
    let out = cvtp(dir.path(), &["frontier", "s.csv", "--d-max", "0.031", "--p-min", "0.2"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("constrained_best (D <= 0.031, P_succ >= 0.2): g=1.2 m_c=1.8"), "{text}");
    assert!(text.contains("objective_best (lambda = 3): g=1 m_c=inf"), "{text}");

    let out = cvtp(dir.path(), &["frontier", "s.csv", "--d-max", "1e-20", "--p-min", "0.5"]);
    assert!(stdout(&out).contains("infeasible"));

    let out = cvtp(dir.path(), &["frontier", "s.csv", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn frontier_of_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = "g,m_c,F,D,P_succ,S1,S2,I_sel,I_alpha_S,J_lambda,flag\n1.4,2.2,0.78,0.03,0.2,0,0,0,0,0.69,ok\n";
    std::fs::write(dir.path().join("one.csv"), text).unwrap();
    let out = cvtp(dir.path(), &["frontier", "one.csv", "--out", "f.csv"]);
    assert!(out.status.success());
    let rows = csvio::read_sweep(std::fs::File::open(dir.path().join("f.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].g, 1.4);

    std::fs::write(dir.path().join("bad.csv"), format!("{text}1.6,x,0.78,0.03,0.2,0,0,0,0,0.69,ok\n")).unwrap();
    let out = cvtp(dir.path(), &["frontier", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn plots_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_sweep(dir.path(), &["--out", "s.csv"]).status.success());
    for mode in ["fd_curves", "fd_density"] {
        let a = cvtp(dir.path(), &["plot", "s.csv", "--mode", mode]);
        let b = cvtp(dir.path(), &["plot", "s.csv", "--mode", mode]);
        assert!(a.status.success());
        assert!(stdout(&a).starts_with("<?xml") && stdout(&a).contains("<svg"));
        assert_eq!(a.stdout, b.stdout);
    }
    let out = cvtp(dir.path(), &["plot", "s.csv", "--mode", "profile"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let skip = "check.skip=[\"jensen\", \"oracle_point\", \"oracle_ensemble\", \"concentration\", \"slope_linearity\"]";
    let out = cvtp(dir.path(), &["check", "--set", skip]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS flatness"));
    assert!(!text.contains("jensen"));

    let out = cvtp(dir.path(), &["check", "--set", skip, "--set", "check.inject_f0_offset=0.01"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("FAIL flatness"));
}

#[test]
fn oracle_point_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvtp(dir.path(), &["oracle", "--point", "0", "--seed", "7", "--set", "oracle.n_inner=200000", "--out", "o.csv"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("o.csv")).unwrap();
    let get = |k: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{k},")))
            .and_then(csvio::parse_number)
            .unwrap()
    };
    assert!((get("p_succ") - 0.0754558182020394).abs() < 4.0 * get("p_err"));
    assert!((get("f_succ") - 0.7619287255604367).abs() < 4.0 * get("f_err"));
    assert_eq!(cvtp(dir.path(), &["oracle", "--point", "-1"]).status.code(), Some(2));
}
