use std::path::Path;
use std::process::{Command, Output};

use deltapmp::dynamics::integrate_piece;
use deltapmp::{ControlSchedule, ControlVector, LinearPiece, StateVector};
use nalgebra::DMatrix;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deltapmp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn fit_example_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--source", "example1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = dir.path().join("model.csv");
    assert_eq!(header(&model), ["k", "t_start", "t_end", "a_0_0", "b_0_0", "anchor_0"]);
    let rows = rows(&model);
    assert_eq!(rows.len(), 2);
    for (row, (a, b)) in rows.iter().zip([(0.5, 0.5), (1.5, -0.5)]) {
        assert!((num(&row[3]) - a).abs() < 1e-9 && (num(&row[4]) - b).abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn fit_rejects_missing_file() {
    let out = run(&["fit", "--source", "/no/such/data.csv"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn fit_single_linear_piece_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("lin.csv");
    // dx/dt = 2 x + 3 u
    let mut text = String::from("traj_id,label,t,x0,u0,dx0\n");
    for (t, x, u) in [(0.0, 1.0, 0.5), (1.0, 2.0, 0.5)] {
        text.push_str(&format!("a,positive,{t},{x},{u},{}\n", 2.0 * x + 3.0 * u));
    }
    std::fs::write(&data, text).unwrap();
    let out = run(&["fit", "--source", data.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&dir.path().join("model.csv"));
    assert_eq!(rows.len(), 1);
    assert!((num(&rows[0][3]) - 2.0).abs() < 1e-12);
    assert!((num(&rows[0][4]) - 3.0).abs() < 1e-12);
}

#[test]
fn delta_converges_on_optimal_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "delta", "--source", "example1", "--control", "1", "--samples", "161", "--delta", "0.05", "--out", d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = dir.path().join("trace.csv");
    assert_eq!(header(&trace), ["m", "N_m", "total_time", "eq7_score", "eq8_score", "gap"]);
    let rows = rows(&trace);
    assert!(rows.len() >= 2);
    assert_eq!(rows[0][1], "2");
    assert_eq!(rows[0][5], "");
    let last = rows.last().unwrap();
    let prev = &rows[rows.len() - 2];
    assert!((num(&last[2]) - num(&prev[2])).abs() <= 0.05);
    assert!((num(&last[2]) - std::f64::consts::FRAC_PI_4).abs() < 0.05);
    assert_eq!(
        header(&dir.path().join("schedule.csv")),
        ["piece", "t_start", "t_end", "u0", "switch_times"]
    );
}

#[test]
fn delta_without_enough_refinements_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "delta", "--source", "example1", "--max-refinements", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(rows(&dir.path().join("trace.csv")).len(), 1);
}

#[test]
fn unreachable_goal_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("down.csv");
    std::fs::write(&data, "traj_id,label,t,x0,u0,dx0\nd,positive,0,1,1,-1\nd,positive,1,0.5,1,-0.25\n").unwrap();
    let d = dir.path().to_str().unwrap();
    let src = data.to_str().unwrap();
    let out = run(&["delta", "--source", src, "--lower", "1.6", "--upper", "2", "--out", d]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("piece 1: infeasible"));
    let out = run(&["solve", "--source", src, "--lower", "0.5", "--upper", "2", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn emitted_schedule_replays_to_reported_total() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["delta", "--source", "example2-case2", "--initial-n", "4", "--delta", "10", "--max-refinements", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = rows(&dir.path().join("trace.csv"));
    let total = num(&trace.last().unwrap()[2]);
    let pieces: Vec<LinearPiece> = rows(&dir.path().join("model.csv"))
        .iter()
        .map(|r| {
            LinearPiece::new(
                DMatrix::from_element(1, 1, num(&r[3])),
                DMatrix::from_element(1, 1, num(&r[4])),
                num(&r[1]),
                num(&r[2]),
                StateVector::scalar(num(&r[5])),
            )
            .unwrap()
        })
        .collect();
    let schedule = rows(&dir.path().join("schedule.csv"));
    let mut x = StateVector::scalar(0.0);
    for row in &schedule {
        let k: usize = row[0].parse().unwrap();
        let (t0, t1) = (num(&row[1]), num(&row[2]));
        let sched = ControlSchedule::constant(ControlVector::scalar(num(&row[3])), t0, t1).unwrap();
        x = integrate_piece(&pieces[k], &x, &sched, (t1 - t0) / 4000.0).unwrap().final_state().clone();
        assert!((x[0] - pieces[k].anchor()[0]).abs() < 1e-6);
    }
    let span = num(&schedule.last().unwrap()[2]) - num(&schedule[0][1]);
    assert!((span - total).abs() < 1e-6, "{span} vs {total}");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "source = example1\nmax-refinements = 1\n").unwrap();
    let d = dir.path().to_str().unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["delta", "--config", c, "--out", d])), 2);
    assert_eq!(code(&run(&["delta", "--config", c, "--max-refinements", "6", "--delta", "0.5", "--out", d])), 0);
    std::fs::write(&cfg, "source = example1\ncolour = blue\n").unwrap();
    assert_eq!(code(&run(&["delta", "--config", c, "--out", d])), 1);
}

#[test]
fn demo_table() {
    let out = run(&["demo", "example1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("example1")).unwrap();
    assert!(line.contains("1.124") && line.contains("1.13") && line.contains(" ok "), "{line}");

    let out = run(&["demo", "example2-case3"]);
    let text = stdout(&out);
    assert!(text.contains("0.736") && text.contains("0.74"));

    let out = run(&["demo", "example2-case1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("example2-case1")).unwrap();
    assert!(line.contains("0.838") && line.contains("1.1") && line.contains("MISMATCH"), "{line}");

    assert_eq!(code(&run(&["demo", "unknown"])), 1);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["fit", "--delta"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}
