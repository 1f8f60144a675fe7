//! Loss traces of single-rank training, consistent 4-rank training and
//! 4-rank training without halo exchange.
//!
//! cargo run --example train_consistency

use halo_gnn::gnn::{GnnConfig, TrainConfig};
use halo_gnn::harness::compare_training;
use halo_gnn::meshgen::{MeshConfig, PartitionStrategy};

fn main() -> halo_gnn::Result<()> {
    let train = TrainConfig {
        iterations: 20,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let cmp = compare_training(
        &MeshConfig::unit_cube(2, 3),
        4,
        &GnnConfig::small(),
        &train,
        PartitionStrategy::block(),
    )?;
    println!("{:>4} {:>22} {:>22} {:>22}", "iter", "R=1", "R=4 na2a", "R=4 none");
    for ((a, b), c) in cmp.reference.iter().zip(&cmp.consistent).zip(&cmp.inconsistent) {
        println!("{:>4} {:>22.15e} {:>22.15e} {:>22.15e}", a.iteration, a.loss, b.loss, c.loss);
    }
    println!("max rel dev (consistent): {:.2e}", cmp.max_rel_dev());
    Ok(())
}
