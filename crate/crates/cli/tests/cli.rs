use std::process::{Command, Output};

fn homlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Value of `key=` on the first line that starts with `prefix`.
fn field(text: &str, prefix: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no `{prefix}` line in {text}"));
    let tok = line
        .split_whitespace()
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"));
    tok.parse().unwrap()
}

#[test]
fn slope_point_reports_estimate_and_cross_check() {
    let o = homlab(&[
        "slope",
        "--problem",
        "example1",
        "--u",
        "2",
        "--horizon",
        "10000",
        "--method",
        "trajectory",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let exact = -(3.0f64).sqrt();
    let lambda = field(&text, "lambda=", "lambda");
    let radius = field(&text, "lambda=", "radius");
    // xi = 1 + 2 beta = 11 with beta = 5 on the default box.
    assert!((radius - 1.1e-3).abs() < 1e-4, "{text}");
    assert!((lambda - exact).abs() <= radius);
    assert!(text.contains("method=trajectory"));
    let check = field(&text, "check ", "lambda");
    assert!((check - exact).abs() < 1e-10, "{text}");
    assert!(text.contains("agree=true"));
}

#[test]
fn sharpness_prints_ratio_table() {
    let o = homlab(&["sharpness", "--delta", "1", "--eps", "1e-3,1e-4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epsilon,t,gap,predicted,ratio"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let (eps, ratio) = (row[0], row[4]);
        assert!(ratio <= 1.0 && ratio >= 1.0 - 2.0 * eps, "{row:?}");
    }
}

#[test]
fn rate_precondition_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rate.csv");
    let o = homlab(&[
        "rate",
        "--problem",
        "example3",
        "--T",
        "1",
        "--eps",
        "1e-2,1e-3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fitted = field(&stdout(&o), "fitted_c=", "fitted_c");
    // eps/2 deviation times |log eps| at eps = 1e-2.
    assert!((fitted - 0.005 * (100f64).ln()).abs() < 1e-6, "{fitted}");
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("epsilon,T,sup_error,product,dt_used,scheme_error,slack\n"));
    assert_eq!(csv.lines().count(), 3);

    let o = homlab(&[
        "rate",
        "--problem",
        "example3",
        "--T",
        "0.01",
        "--eps",
        "1e-2,1e-3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[0.01]"), "{}", stderr(&o));
}

#[test]
fn violated_declared_bound_exits_two() {
    let o = homlab(&[
        "validate",
        "--expr",
        "-u + cos(2*pi*v)",
        "--alpha",
        "7",
        "--beta",
        "5",
        "--lipschitz",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = homlab(&[
        "validate",
        "--expr",
        "-u + cos(2*pi*v)",
        "--alpha",
        "7",
        "--beta",
        "2",
        "--lipschitz",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("beta,5,2"), "{}", stdout(&o));
}

#[test]
fn usage_and_module_errors_exit_one() {
    assert_eq!(homlab(&["nonsense"]).status.code(), Some(1));
    let o = homlab(&["slope", "--problem", "example9", "--u", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown built-in field `example9`"));
    let o = homlab(&["stability", "--problem", "example2", "--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"problem": {"name": "example1"}, "slope": {"u": 3, "method": "quadrature"}}"#,
    )
    .unwrap();
    let from_file = homlab(&["--config", cfg.to_str().unwrap(), "slope"]);
    assert_eq!(from_file.status.code(), Some(0), "{}", stderr(&from_file));
    let lambda = field(&stdout(&from_file), "lambda=", "lambda");
    assert!((lambda + 8f64.sqrt()).abs() < 1e-10);
    let flagged = homlab(&["--config", cfg.to_str().unwrap(), "slope", "--u", "1.5"]);
    let lambda = field(&stdout(&flagged), "lambda=", "lambda");
    assert!((lambda + 1.25f64.sqrt()).abs() < 1e-10);
}

#[test]
fn config_errors_name_the_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        "{\n  \"problem\": {\"name\": \"example1\"},\n  \"slope\": {\"u\": }\n}",
    )
    .unwrap();
    let o = homlab(&["--config", cfg.to_str().unwrap(), "slope"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");

    std::fs::write(&cfg, r#"{"slope": {"horizon": 10}}"#).unwrap();
    let o = homlab(&[
        "--config",
        cfg.to_str().unwrap(),
        "slope",
        "--problem",
        "example1",
        "--u",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field `horizon`"));
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 2] = [
        &["validate", "--problem", "example2", "--rng-seed", "7"],
        &[
            "transport",
            "--problem",
            "shifted_cosine",
            "--params",
            "2",
            "--eps",
            "1e-2",
            "--x1",
            "0,1,5",
            "--x2",
            "0,1,3",
        ],
    ];
    for args in runs {
        let paths: Vec<_> = [("a", "1"), ("b", "3")]
            .iter()
            .map(|(tag, jobs)| {
                let p = dir.path().join(format!("{}-{tag}.csv", args[0]));
                let mut full = args.to_vec();
                full.extend(["--jobs", jobs, "--out", p.to_str().unwrap()]);
                let o = homlab(&full);
                assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
                p
            })
            .collect();
        let a = std::fs::read(&paths[0]).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(&paths[1]).unwrap(), "{}", args[0]);
    }
}

#[test]
fn transport_checks_the_order_eps_bound() {
    let o = homlab(&[
        "transport",
        "--problem",
        "shifted_cosine",
        "--params",
        "2",
        "--eps",
        "1e-2",
        "--x1",
        "0,1,6",
        "--x2",
        "0,1,2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err = stderr(&o);
    let sup = field(&err, "sup_error=", "sup_error");
    assert!(sup > 0.0 && sup <= 7.0 * 1e-2, "{err}");
    assert!(err.contains("holds=true"));
    let header = stdout(&o).lines().next().unwrap().to_string();
    assert_eq!(header, "t,x1,x2,V_eps,V_hom,abs_err");
}
