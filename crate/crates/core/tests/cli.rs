use std::path::Path;
use std::process::{Command, Output};

use halo_gnn::graph::io::read_graph_file;

fn halo_gnn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halo-gnn"))
        .args(args)
        .current_dir(dir)
        .env_remove("HALO_GNN_RANKS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn mesh_partition_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = halo_gnn(&["mesh", "--elements", "2", "--order", "5", "--out", "mesh.json", "--embed-positions"], d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("1331 unique nodes"));

    let o = halo_gnn(&["partition", "--mesh", "mesh.json", "--ranks", "2", "--strategy", "slab", "--out", "graphs"], d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("2 | 726, 726, 726 | 121, 121, 121 | 1, 1, 1"));
    let g0 = read_graph_file(d.join("graphs/rank_00000.json")).unwrap();
    assert_eq!((g0.graph.num_local, g0.graph.num_halo), (726, 121));

    let o = halo_gnn(
        &["partition", "--mesh", "mesh.json", "--ranks", "8", "--format", "binary", "--out", "bin"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let g7 = read_graph_file(d.join("bin/rank_00007.bin")).unwrap();
    assert_eq!(g7.graph.rank, 7);
    assert_eq!(g7.halo.neighbors.len(), 7);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["mesh", "--elements", "0", "--order", "2", "--out", "m.json"][..],
        &["mesh", "--elements", "2", "--order", "0", "--out", "m.json"],
        &["mesh", "--elements", "2", "--order", "2"],
        &["mesh", "--frobnicate"],
        &["train", "--mode", "broadcast"],
        &["verify", "--ranks", "0,2"],
        &["bench", "--model", "huge"],
        &["launch"],
    ] {
        let o = halo_gnn(args, d);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {o:?}");
    }
    assert!(!d.join("m.json").exists());
}

#[test]
fn train_outputs_echo_seed_and_config_composes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("train.json"), r#"{"elements": 2, "order": 2, "ranks": 2, "iterations": 2, "seed": 7}"#).unwrap();
    let o = halo_gnn(
        &["train", "--config", "train.json", "--ranks", "4", "--loss-trace", "out/trace.csv", "--comm-report", "comm.csv"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("R=4"));
    assert!(stdout(&o).contains("seed=7"));
    let trace = std::fs::read_to_string(d.join("out/trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,loss,wall_ms,bytes_halo,bytes_allreduce,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",7"));
    let comm = std::fs::read_to_string(d.join("comm.csv")).unwrap();
    assert_eq!(comm.lines().next(), Some("rank,collective,calls,bytes"));
    // 2 steps x 8 halo exchanges on every rank
    assert!(comm.lines().any(|l| l.starts_with("3,all_to_all,16,")));
}

#[test]
fn env_overrides_rank_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_halo-gnn"))
        .args(["train", "--elements", "2", "--order", "1", "--ranks", "1", "--iterations", "1"])
        .env("HALO_GNN_RANKS", "8")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("R=8"));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.csv", "b.csv"] {
        let o = halo_gnn(
            &["train", "--elements", "2", "--order", "2", "--ranks", "8", "--iterations", "3", "--loss-trace", name],
            d,
        );
        assert_eq!(o.status.code(), Some(0));
    }
    let losses = |f: &str| -> Vec<String> {
        std::fs::read_to_string(d.join(f))
            .unwrap()
            .lines()
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect()
    };
    assert_eq!(losses("a.csv"), losses("b.csv"));
}

#[test]
fn checkpoint_resume_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = ["train", "--elements", "2", "--order", "1", "--iterations", "2"];
    let o = halo_gnn(&[&base[..], &["--checkpoint", "ck.bin"]].concat(), d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = halo_gnn(&[&base[..], &["--resume", "ck.bin"]].concat(), d);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = halo_gnn(&[&base[..], &["--resume", "ck.bin", "--model", "large"]].concat(), d);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
}

#[test]
fn verify_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = halo_gnn(
        &["verify", "--elements", "2", "--order", "2", "--ranks", "1,2,4,8", "--fd-samples", "3", "--seed", "5", "--out", "v.csv"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("0 failed (seed 5)"));

    let o = halo_gnn(&["report", "v.csv"], d);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("gradient_rel_dev"));
    assert!(text.contains("20 rows, 0 failed"));

    // a failing row propagates to the exit code
    let csv = std::fs::read_to_string(d.join("v.csv")).unwrap();
    let bad = csv.replacen(",true\n", ",false\n", 1);
    std::fs::write(d.join("bad.csv"), bad).unwrap();
    assert_eq!(halo_gnn(&["report", "bad.csv"], d).status.code(), Some(1));
}

#[test]
fn bench_writes_one_row_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = halo_gnn(
        &["bench", "--loading", "128", "--ranks", "1,2,8", "--model", "small", "--mode", "none,a2a,na2a", "--order", "2", "--seed", "3", "--out", "b.csv"],
        d,
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("simulated"));
    let csv = std::fs::read_to_string(d.join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("3,")));
    let o = halo_gnn(&["report", "b.csv"], d);
    assert!(stdout(&o).contains("9 rows"));
}
