use lensforge_cli::{non_dominated, ParetoRow, PARETO_HEADER, TRACE_HEADER};
use lensforge_core::io::parse_prescription;
use lensforge_core::restore::{Assessment, LOG_HEADER};
use proptest::prelude::*;
use std::path::Path;
use std::process::{Command, Output};

fn lensforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lensforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("LENSFORGE_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn no_arguments_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = lensforge(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage:"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = lensforge(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("optimize"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["optimize", "--lens", "normal50", "--bogus"][..],
        &["optimize"],
        &["toy", "--variant", "3d"],
        &["project", "--lens", "normal50", "--mutation", "twist"],
        &["optimize", "--lens", "normal50", "--iters", "many"],
    ] {
        let o = lensforge(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "target_z: -100\n0.01 8 3 1.6\n-0.02 -8 20 1\n").unwrap();
    std::fs::write(dir.path().join("cfg.json"), "{\"iterations\": 5, \"colour\": 1}").unwrap();
    let o = lensforge(dir.path(), &["trace", "--lens", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lensforge(dir.path(), &["trace", "--lens", "bad.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3, surface row 2, extent"), "{}", stderr(&o));
    let o = lensforge(dir.path(), &["optimize", "--lens", "normal50", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    // Removing the only element of a one-element lens is not applicable.
    std::fs::write(dir.path().join("one.txt"), "target_z: -500\n0.02 10 4 1.5168\n-0.02 10 45 1\n").unwrap();
    let o = lensforge(dir.path(), &["project", "--lens", "one.txt", "--mutation", "remove"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_lensforge"))
            .args(["trace", "--lens", "normal50", "--rays", "4"])
            .current_dir(dir.path())
            .env("LENSFORGE_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(run("0").status.code(), Some(1));
    assert_eq!(run("two").status.code(), Some(1));
    let one = run("1");
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, run("3").stdout);
}

#[test]
fn projected_mutation_has_tiny_residual() {
    let dir = tempfile::tempdir().unwrap();
    for lens in ["wide28", "normal50", "macro105", "tele135"] {
        let o = lensforge(
            dir.path(),
            &["project", "--lens", lens, "--mutation", "add", "--site", "0", "--out", "p.json"],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        let residual: f64 = text.trim().rsplit(' ').next().unwrap().parse().unwrap();
        assert!(residual <= 1e-9, "{lens}: {text}");
        let json = std::fs::read_to_string(dir.path().join("p.json")).unwrap();
        parse_prescription(&json).unwrap();
    }
}

#[test]
fn trace_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = lensforge(dir.path(), &["trace", "--lens", "macro105", "--rays", "16"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 16);
    for r in &rows {
        assert_eq!(r.len(), 5);
        match r[4] {
            "1" => {
                r[2].parse::<f64>().unwrap();
                r[3].parse::<f64>().unwrap();
            }
            "0" => assert!(r[2].is_empty() && r[3].is_empty()),
            v => panic!("valid column {v}"),
        }
    }
    assert!(rows.iter().filter(|r| r[0] == "0").all(|r| r[4] == "1"));
}

#[test]
fn optimize_with_config_and_table_prescription() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("singlet.txt"),
        "name: singlet\nfocal_length: 50\ntarget_z: -1000\n0.0195 10 4 1.5168\n-0.0195 10 48 1\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("cfg.json"), "{\"iterations\": 25, \"seed\": 4, \"rays_per_point\": 16}").unwrap();
    let o = lensforge(
        dir.path(),
        &["optimize", "--lens", "singlet.txt", "--config", "cfg.json", "--best", "best.json", "--svg", "best.svg"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = stdout(&o);
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    assert_eq!(lines.count(), 25);
    let best = std::fs::read_to_string(dir.path().join("best.json")).unwrap();
    let (p, _) = parse_prescription(&best).unwrap();
    assert_eq!((p.name.as_str(), p.focal_length), ("singlet", Some(50.0)));
    let svg = std::fs::read_to_string(dir.path().join("best.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    assert!(stderr(&o).contains("best_loss"));
}

#[test]
fn baselines_write_logs() {
    let dir = tempfile::tempdir().unwrap();
    let o = lensforge(dir.path(), &["baseline-mh", "--lens", "tele135", "--iters", "30", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 31);
    assert!(stderr(&o).contains("mutation_acceptance"));
    let o = lensforge(dir.path(), &["baseline-brute", "--lens", "tele135", "--iters", "30", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().next(), Some(LOG_HEADER));
    assert!(stderr(&o).contains("branch add@0"));
}

#[test]
fn toy_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["toy", "--variant", "1d", "--iters", "100000", "--seed", "7", "--out", "h.csv"];
    let a = lensforge(dir.path(), &args);
    let csv = std::fs::read(dir.path().join("h.csv")).unwrap();
    let b = lensforge(dir.path(), &args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(csv, std::fs::read(dir.path().join("h.csv")).unwrap());
    let tv: f64 = stdout(&a).trim().strip_prefix("tv_distance ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&tv));
    let text = String::from_utf8(csv).unwrap();
    let (mut visited, mut target) = (0.0, 0.0);
    for l in text.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        visited += f[6].parse::<f64>().unwrap();
        target += f[7].parse::<f64>().unwrap();
    }
    assert!((visited - 1.0f64).abs() < 1e-9 && (target - 1.0f64).abs() < 1e-9);
}

#[test]
fn pareto_csv_is_non_dominated() {
    let dir = tempfile::tempdir().unwrap();
    let o = lensforge(
        dir.path(),
        &["pareto", "--lens", "tele135", "--iters", "60", "--seed", "1", "--throughput-weights", "0.5,1"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(PARETO_HEADER));
    let pts: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(f.len(), 8);
            (f[2], f[3])
        })
        .collect();
    assert!(!pts.is_empty() && pts.len() <= 10);
    for a in &pts {
        for b in &pts {
            assert!(!(b.0 <= a.0 && b.1 <= a.1 && (b.0 < a.0 || b.1 < a.1)));
        }
    }
}

#[test]
fn render_draws_rays() {
    let dir = tempfile::tempdir().unwrap();
    let o = lensforge(dir.path(), &["render", "--lens", "macro105", "--rays", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let svg = stdout(&o);
    assert_eq!(svg.matches("class=\"ray\"").count(), 4 * 5);
    let o = lensforge(dir.path(), &["render", "--lens", "macro105", "--rays", "0"]);
    assert_eq!(stdout(&o).matches("class=\"ray\"").count(), 0);
}

fn row(spot: f64, throughput: f64) -> ParetoRow {
    ParetoRow {
        w_spot: 1.0,
        w_throughput: 1.0,
        loss: Assessment {
            spot,
            throughput,
            focal: 0.0,
            thickness: 0.0,
            total: spot + throughput,
        },
        k: 4,
    }
}

proptest! {
    #[test]
    fn filtered_rows_are_mutually_non_dominated(
        pts in prop::collection::vec((0u8..6, 0u8..6), 1..20)
    ) {
        let rows: Vec<ParetoRow> = pts.iter().map(|&(a, b)| row(a as f64, b as f64)).collect();
        let kept = non_dominated(&rows);
        prop_assert!(!kept.is_empty());
        let dominated = |a: &ParetoRow, b: &ParetoRow| {
            a.loss.spot <= b.loss.spot && a.loss.throughput <= b.loss.throughput
                && (a.loss.spot < b.loss.spot || a.loss.throughput < b.loss.throughput)
        };
        for a in &kept {
            prop_assert!(!kept.iter().any(|b| dominated(b, a)));
        }
        for r in &rows {
            prop_assert!(kept.contains(r) || kept.iter().any(|k| dominated(k, r)));
        }
    }
}
