//! Averaged gradients on 8 ranks against the single-rank gradients, plus
//! central-difference spot checks.
//!
//! cargo run --example gradient_check

use halo_gnn::gnn::GnnConfig;
use halo_gnn::harness::verify_gradients;
use halo_gnn::meshgen::{MeshConfig, PartitionStrategy};

fn main() -> halo_gnn::Result<()> {
    let report = verify_gradients(
        &MeshConfig::unit_cube(2, 2),
        8,
        &GnnConfig::small(),
        0,
        PartitionStrategy::block(),
        5,
    )?;
    print!("{report}");
    println!("passed: {}", report.passed());
    Ok(())
}
