//! Train against targets read from a CSV keyed by global node id.
//!
//! cargo run --example custom_targets

use std::fmt::Write;

use halo_gnn::gnn::{GnnConfig, TrainConfig, Trainer};
use halo_gnn::harness::{build_problem, read_targets_csv};
use halo_gnn::meshgen::{MeshConfig, PartitionStrategy};

fn main() -> halo_gnn::Result<()> {
    let problem = build_problem(&MeshConfig::unit_cube(2, 2), 4, PartitionStrategy::block())?;

    // target: the node position itself
    let mut csv = String::from("gid,y0,y1,y2\n");
    for (gid, p) in problem.mesh.global_ids.iter().zip(&problem.mesh.node_positions) {
        writeln!(csv, "{gid},{},{},{}", p[0], p[1], p[2]).unwrap();
    }
    let targets = read_targets_csv(csv.as_bytes(), &problem.ranks, 3)?;

    let train = TrainConfig {
        iterations: 30,
        lr: 5e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(GnnConfig::small(), train, problem.ranks, Some(targets))?;
    for rec in trainer.run()?.iter().step_by(5) {
        println!("iter {:>3}  loss {:.6e}", rec.iteration, rec.loss);
    }
    Ok(())
}
