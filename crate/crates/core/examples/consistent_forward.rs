//! The same model evaluated on 1, 2, 4 and 8 ranks. With halo exchange the
//! loss matches the single-rank value to round-off; without it the error
//! grows with the number of ranks.
//!
//! cargo run --example consistent_forward

use halo_gnn::comm::{ExchangeMode, RankRuntime};
use halo_gnn::gnn::{default_targets, evaluate_loss, GnnConfig};
use halo_gnn::harness::build_problem;
use halo_gnn::meshgen::{MeshConfig, PartitionStrategy};

fn main() -> halo_gnn::Result<()> {
    let mesh = MeshConfig::unit_cube(4, 2);
    let params = GnnConfig::small().init_params(0)?;

    let loss_at = |r: usize, mode: ExchangeMode| -> halo_gnn::Result<f64> {
        let ranks = build_problem(&mesh, r, PartitionStrategy::block())?.ranks;
        let targets = default_targets(&ranks)?;
        evaluate_loss(&params, &ranks, &targets, &mut RankRuntime::new(r)?, mode)
    };

    let reference = loss_at(1, ExchangeMode::NeighborA2A)?;
    println!("R=1 loss {reference:.17e}");
    for r in [2, 4, 8] {
        let na2a = loss_at(r, ExchangeMode::NeighborA2A)?;
        let none = loss_at(r, ExchangeMode::None)?;
        println!(
            "R={r}  na2a rel dev {:.2e}   none rel dev {:.2e}",
            ((na2a - reference) / reference).abs(),
            ((none - reference) / reference).abs()
        );
    }
    Ok(())
}
