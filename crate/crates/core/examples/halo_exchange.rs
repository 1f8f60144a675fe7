//! Fill halo rows from their owning ranks and compare the traffic of the two
//! all-to-all variants.
//!
//! cargo run --example halo_exchange

use halo_gnn::comm::{halo_exchange, CollectiveKind, ExchangeMode, RankRuntime};
use halo_gnn::harness::build_problem;
use halo_gnn::meshgen::{MeshConfig, PartitionStrategy};
use halo_gnn::nn::Tensor2D;

fn main() -> halo_gnn::Result<()> {
    let ranks = build_problem(&MeshConfig::unit_cube(8, 1), 8, PartitionStrategy::slab())?.ranks;

    for mode in [ExchangeMode::A2A, ExchangeMode::NeighborA2A] {
        let mut rt = RankRuntime::new(ranks.len())?;
        // local rows carry their global id, halo rows start out as NaN
        let mut values: Vec<Tensor2D> = ranks
            .iter()
            .map(|rg| {
                let g = &rg.graph;
                let mut t = Tensor2D::zeros(g.num_rows(), 1);
                for i in 0..g.num_rows() {
                    t.set(i, 0, if i < g.num_local { g.global_ids[i] as f64 } else { f64::NAN });
                }
                t
            })
            .collect();
        halo_exchange(&mut rt, mode, &ranks, &mut values)?;

        let filled = ranks.iter().zip(&values).all(|(rg, t)| {
            (rg.graph.num_local..rg.graph.num_rows()).all(|i| t.get(i, 0) == rg.graph.global_ids[i] as f64)
        });
        let report = rt.comm_report();
        println!(
            "{:>4}: halo rows correct {filled}, {} bytes in {} calls",
            mode.as_str(),
            report.total_bytes(CollectiveKind::AllToAll),
            report.total_calls(CollectiveKind::AllToAll),
        );
    }
    Ok(())
}
