use std::path::Path;
use std::process::{Command, Output};

use saddlekit::format::Document;
use saddlekit::instances::{self, random_qcqp, strictly_complementary_lp};
use saddlekit::solvers::read_csv;

fn saddlekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saddlekit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn report(path: &Path) -> Document {
    Document::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_intro_qp_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = saddlekit(dir.path(), &["solve", "--instance", "builtin:intro-qp", "--algo", "pdhg", "--out", "t.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&std::fs::read_to_string(dir.path().join("t.csv")).unwrap()).unwrap();
    assert!(rows.last().unwrap().kkt <= 1e-10);
    assert!(rows.windows(2).all(|w| w[0].iter < w[1].iter));
    let s = report(&dir.path().join("t.summary"));
    assert_eq!(s.require("status").unwrap().text(), "converged");
    assert!(s.get("wall_time_s").is_none());
}

#[test]
fn solve_iteration_limit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = saddlekit(dir.path(), &["solve", "--instance", "builtin:intro-qp", "--algo", "pdhg", "--max-iters", "0"]);
    assert_eq!(code(&o), 2);
    let s = Document::parse(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(s.require("iterations").unwrap().u64().unwrap(), 0);
}

#[test]
fn solve_usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = saddlekit(dir.path(), &["solve", "--algo", "pdhg"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = saddlekit(dir.path(), &["solve", "--instance", "builtin:nope", "--algo", "pdhg"]);
    assert_eq!(code(&o), 1);
    let o = saddlekit(dir.path(), &["solve", "--instance", "builtin:intro-qp", "--algo", "pdhg", "--out", "missing/t.csv"]);
    assert_eq!(code(&o), 1);
    let o = saddlekit(dir.path(), &["solve", "--instance", "builtin:intro-qp", "--algo", "pdhg", "--stepsize", "5"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("PDHG"));
}

#[test]
fn pdhg_on_qcqp_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = random_qcqp(1, 3, 3).unwrap();
    instances::save(&d.spec, &dir.path().join("q.txt")).unwrap();
    for alg in ["pdhg", "admm"] {
        let o = saddlekit(dir.path(), &["solve", "--instance", "q.txt", "--algo", alg]);
        assert_eq!(code(&o), 1, "{alg}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("QCQP") || String::from_utf8_lossy(&o.stderr).contains("qcqp"));
    }
    let o = saddlekit(dir.path(), &["solve", "--instance", "q.txt", "--algo", "egm", "--max-iters", "50"]);
    assert!(code(&o) == 0 || code(&o) == 2);
}

#[test]
fn analyze_intro_qp_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    for alg in ["pdhg", "admm", "egm"] {
        let trace = format!("{alg}.csv");
        let rep = format!("{alg}.report");
        assert_eq!(code(&saddlekit(dir.path(), &["solve", "--instance", "builtin:intro-qp", "--algo", alg, "--out", &trace])), 0);
        let o = saddlekit(
            dir.path(),
            &["analyze", "--trace", &trace, "--instance", "builtin:intro-qp", "--eps", "1e-8", "--out", &rep],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(dir.path().join(&rep)).unwrap();
        assert!(text.contains("degenerate: true"));
        assert!(text.contains("B_d: [2]"));
        let r = Document::parse(&text).unwrap();
        assert_eq!(r.require("N").unwrap().indices().unwrap(), vec![1]);
        assert_eq!(r.require("B_a").unwrap().indices().unwrap(), vec![3, 4]);
        assert!(r.require("k_star").unwrap().u64().is_ok());
        assert!(r.require("post_rate").unwrap().real().unwrap() < 0.0);
    }
}

#[test]
fn analyze_strictly_complementary_lp_is_nondegenerate() {
    let dir = tempfile::tempdir().unwrap();
    let d = strictly_complementary_lp(3, 4, 9).unwrap();
    instances::save(&d.spec, &dir.path().join("lp.txt")).unwrap();
    let o = saddlekit(dir.path(), &["solve", "--instance", "lp.txt", "--algo", "admm", "--out", "t.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = saddlekit(dir.path(), &["analyze", "--trace", "t.csv", "--instance", "lp.txt", "--eps", "1e-6", "--out", "r.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&dir.path().join("r.txt"));
    assert!(!r.require("degenerate").unwrap().bool().unwrap());
    assert!(r.require("B_d").unwrap().indices().unwrap().is_empty());
    assert_eq!(r.require("B_a").unwrap().indices().unwrap().len(), 4);
}

#[test]
fn analyze_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = saddlekit(dir.path(), &["analyze", "--trace", "missing.csv", "--instance", "builtin:intro-qp"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&saddlekit(dir.path(), &["solve", "--instance", "builtin:trivial-lp", "--algo", "egm", "--out", "t.csv"])), 0);
    let o = saddlekit(dir.path(), &["analyze", "--trace", "t.csv", "--instance", "builtin:intro-qp"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
    // same dimensions, different data
    let lp = strictly_complementary_lp(1, 1, 1).unwrap();
    instances::save(&lp.spec, &dir.path().join("other.txt")).unwrap();
    let o = saddlekit(dir.path(), &["analyze", "--trace", "t.csv", "--instance", "other.txt"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn moduli_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = saddlekit(
        dir.path(),
        &["moduli", "--instance", "builtin:rotated-house", "--c1", "0.6", "--tau", "2", "--samples", "20000", "--seed", "3", "--out", "m.txt"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&dir.path().join("m.txt"));
    let am = r.require("alpha_M").unwrap().real().unwrap();
    let ag = r.require("alpha_G").unwrap().real().unwrap();
    assert!((am - 1.0).abs() <= 1e-6);
    assert!(ag <= 0.6 + 1e-9);
    assert!(r.require("ordering_consistent").unwrap().bool().unwrap());

    let o = saddlekit(dir.path(), &["moduli", "--instance", "builtin:rotated-house", "--samples", "0"]);
    assert_eq!(code(&o), 1);
    let o = saddlekit(dir.path(), &["moduli", "--instance", "builtin:rotated-house", "--c1", "1.5"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn moduli_without_known_solution() {
    let dir = tempfile::tempdir().unwrap();
    let lp = strictly_complementary_lp(2, 2, 4).unwrap();
    instances::save(&lp.spec, &dir.path().join("lp.txt")).unwrap();
    let o = saddlekit(dir.path(), &["moduli", "--instance", "lp.txt", "--samples", "500"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha_L is refused"));
    let o = saddlekit(dir.path(), &["moduli", "--instance", "lp.txt", "--samples", "500", "--tau", "0.5", "--aux-solve", "--out", "m.txt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&dir.path().join("m.txt"));
    assert_eq!(r.require("alpha_L").unwrap().text(), "refused");
    assert!(r.require("alpha_G").unwrap().real().unwrap() > 0.0);
}

#[test]
fn builtin_list_and_batch() {
    let dir = tempfile::tempdir().unwrap();
    let o = saddlekit(dir.path(), &["builtin-list"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    for name in ["intro-qp", "rotated-house", "trivial-lp"] {
        assert!(out.contains(&format!("builtin:{name}")));
    }
    let o = saddlekit(
        dir.path(),
        &["batch", "--instance", "builtin:trivial-lp", "--algos", "pdhg,egm", "--seeds", "1,2", "--init", "sphere:2", "--jobs", "3", "--out-dir", "."],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    for f in ["trivial-lp-pdhg-s1.csv", "trivial-lp-pdhg-s2.summary", "trivial-lp-egm-s2.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    // sequential and parallel batches agree byte for byte
    let seq = tempfile::tempdir().unwrap();
    let o = saddlekit(
        seq.path(),
        &["batch", "--instance", "builtin:trivial-lp", "--algos", "pdhg,egm", "--seeds", "1,2", "--init", "sphere:2", "--jobs", "1", "--out-dir", "."],
    );
    assert_eq!(code(&o), 0);
    for f in ["trivial-lp-pdhg-s1.csv", "trivial-lp-egm-s2.summary"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(seq.path().join(f)).unwrap());
    }
    let o = saddlekit(dir.path(), &["batch", "--instance", "builtin:trivial-lp", "--max-iters", "1", "--out-dir", "."]);
    assert_eq!(code(&o), 2);
}

#[test]
fn file_init_and_record_time() {
    let dir = tempfile::tempdir().unwrap();
    let z = saddlekit::problem::PrimalDualPoint::new(vec![3.0], vec![0.5]);
    instances::save_point(&z, &dir.path().join("z0.txt")).unwrap();
    let o = saddlekit(
        dir.path(),
        &["solve", "--instance", "builtin:trivial-lp", "--algo", "admm", "--init", "file:z0.txt", "--record-time", "--out", "t.csv"],
    );
    assert_eq!(code(&o), 0);
    let s = report(&dir.path().join("t.summary"));
    assert!(s.require("wall_time_s").unwrap().real().unwrap() >= 0.0);
    assert_eq!(s.require("init").unwrap().text(), "file:z0.txt");
    let o = saddlekit(dir.path(), &["analyze", "--trace", "t.csv", "--instance", "builtin:trivial-lp"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = saddlekit(dir.path(), &["solve", "--instance", "builtin:trivial-lp", "--algo", "admm", "--init", "file:none.txt"]);
    assert_eq!(code(&o), 1);
}
