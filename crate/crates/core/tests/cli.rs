use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bitserial(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitserial"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_example(dir: &Path) {
    std::fs::write(dir.join("l.txt"), "2 0\n1 3\n").unwrap();
    std::fs::write(dir.join("r.txt"), "0 1\n1 2\n").unwrap();
}

#[test]
fn gemm_example_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    write_example(dir.path());
    let out = bitserial(&["gemm", "l.txt", "r.txt", "--out", "p.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"], serde_json::json!([[0, 2], [3, 7]]));
    assert_eq!(v["oracle_match"], true);
    assert_eq!(std::fs::read_to_string(dir.path().join("p.txt")).unwrap(), "0 2\n3 7\n");
}

#[test]
fn gemm_identity_from_matrix_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("i.txt"), "1 0 0\n0 1 0\n0 0 1\n").unwrap();
    let out = bitserial(&["gemm", "i.txt", "i.txt", "--lbits", "1", "--rbits", "1"], dir.path());
    assert_eq!(json(&out)["result"], serde_json::json!([[1, 0, 0], [0, 1, 0], [0, 0, 1]]));

    let gen = bitserial(&["gen", "--rows", "3", "--cols", "5", "--bits", "4", "--signed", "--seed", "2", "--out", "a.bin"], dir.path());
    assert_eq!(gen.status.code(), Some(0));
    let out = bitserial(&["gemm", "i.txt", "a.bin", "--lbits", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["cols"], 5);
}

#[test]
fn gemm_dimension_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "1 2\n").unwrap();
    let out = bitserial(&["gemm", "a.txt", "a.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inner dimensions differ"));
}

#[test]
fn gemm_rejects_out_of_range_text() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "4\n").unwrap();
    let out = bitserial(&["gemm", "a.txt", "a.txt", "--lbits", "2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compile_and_simulate_example_schedule() {
    let dir = tempfile::tempdir().unwrap();
    write_example(dir.path());
    let cfg = configs().join("example.cfg");
    let cfg = cfg.to_str().unwrap();
    let out = bitserial(&["compile", "--cfg", cfg, "--lhs", "l.txt", "--rhs", "r.txt", "--overlap", "--out", "ex"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let prog = std::fs::read_to_string(dir.path().join("ex.prog")).unwrap();
    let ops: Vec<&str> = prog
        .lines()
        .filter(|l| l.starts_with("fetch "))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(ops, ["RUNFETCH", "RUNFETCH", "SIGNAL", "RUNFETCH", "SIGNAL", "WAIT", "RUNFETCH", "SIGNAL"]);

    let out = bitserial(&["simulate", "ex.prog", "--manifest", "ex.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["oracle_match"], true);
    assert!(v["stats"]["total_cycles"].as_u64().unwrap() > 0);
    assert_eq!(v["stats"]["tokens_produced"], v["stats"]["tokens_consumed"]);
}

#[test]
fn compile_generated_workload_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    for (mode, extra) in [("seq", None), ("ovl", Some("--overlap"))] {
        let mut args = vec![
            "compile", "--instance", "1", "--m", "20", "--k", "300", "--n", "11", "--lbits", "3", "--rbits", "2", "--rsigned",
            "--seed", "5", "--out", mode,
        ];
        args.extend(extra);
        assert_eq!(bitserial(&args, dir.path()).status.code(), Some(0));
        let prog = format!("{mode}.prog");
        let man = format!("{mode}.json");
        let out = bitserial(&["simulate", &prog, "--manifest", &man], dir.path());
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(json(&out)["oracle_match"], true);
    }
}

#[test]
fn compile_with_plane_filter() {
    let dir = tempfile::tempdir().unwrap();
    write_example(dir.path());
    let out = bitserial(&["compile", "--instance", "1", "--lhs", "l.txt", "--rhs", "r.txt", "--planes", "1:1", "--out", "msb"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = bitserial(&["simulate", "msb.prog", "--manifest", "msb.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["oracle_match"], true);
}

#[test]
fn compile_infeasible_reports_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("zero.cfg"), "Dm = 2\nDk = 64\nDn = 2\nBm = 0\n").unwrap();
    let out = bitserial(&["compile", "--cfg", "zero.cfg", "--m", "2", "--k", "2", "--n", "2", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Bm"));
}

#[test]
fn simulate_empty_program() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("e.prog"), "").unwrap();
    let out = bitserial(&["simulate", "e.prog"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["stats"]["total_cycles"], 0);
    assert_eq!(v["oracle_match"], Value::Null);
}

#[test]
fn simulate_deadlock_reports_pcs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("d.prog"),
        "fetch WAIT queue=execute_to_fetch\nfetch SIGNAL queue=fetch_to_execute\n\
         execute WAIT queue=fetch_to_execute\nexecute SIGNAL queue=execute_to_fetch\n",
    )
    .unwrap();
    let out = bitserial(&["simulate", "d.prog"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("deadlock at cycle 0"), "{err}");
    assert!(err.contains("fetch pc=0/2") && err.contains("execute pc=0/2"), "{err}");
}

#[test]
fn simulate_parse_error_names_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.prog"), "[fetch]\nfetch BOGUS\n").unwrap();
    let out = bitserial(&["simulate", "b.prog"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn estimate_reports_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("instance3.cfg");
    let consts = configs().join("cost_constants.cfg");
    let out = bitserial(&["estimate", "--cfg", cfg.to_str().unwrap(), "--constants", consts.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!((v["lut"]["lut_total"].as_f64().unwrap() - 48830.0).abs() < 1e-6);
    assert_eq!(v["bram"]["bram_array"], 128);
    assert!((v["peak_gops"].as_f64().unwrap() - 6553.6).abs() < 1e-9);
}

#[test]
fn dse_and_sweeps_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bitserial(&["dse", "--lut", "0", "--bram", "0"], dir.path());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "Dm,Dk,Dn,LUT,BRAM,GOPS,LUT/op\n");

    let out = bitserial(&["sweep", "dse", "--dm", "2,4,8", "--dk", "64,256,1024", "--dn", "2,4,8", "--lut", "1e9", "--bram", "1e9"], dir.path());
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    for row in ["2,1024,2,", "4,256,4,", "8,64,8,"] {
        let line = csv.lines().find(|l| l.starts_with(row)).unwrap();
        assert!(line.contains(",1638.4,"), "{line}");
    }

    let out = bitserial(&["sweep", "efficiency", "--instances", "1", "--k", "128,8192"], dir.path());
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().last().unwrap().ends_with(",0.888889"));

    let out = bitserial(&["sweep", "multibit", "--k", "2048", "--max-bits", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(csv.lines().next().unwrap(), "k,w,a,bit_product,cycles,projected,oracle_match");
    assert_eq!(csv.lines().count(), 5);
}
