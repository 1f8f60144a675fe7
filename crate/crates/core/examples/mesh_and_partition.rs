//! Build a spectral-element box mesh, split it across ranks, and inspect the
//! halo structure of each rank's reduced graph.
//!
//! cargo run --example mesh_and_partition

use std::collections::HashMap;

use halo_gnn::graph::{build_distributed_graph, halo_stats, HaloStats};
use halo_gnn::meshgen::{build_box_mesh, partition_mesh, MeshConfig, PartitionStrategy};

fn main() -> halo_gnn::Result<()> {
    let cfg = MeshConfig::unit_cube(2, 5);
    let mesh = build_box_mesh(cfg)?;
    println!(
        "E={} p={}: {} elements, {} unique nodes",
        cfg.elements_per_axis,
        cfg.poly_order,
        mesh.num_elements(),
        cfg.num_unique_nodes()
    );

    for strategy in [PartitionStrategy::slab(), PartitionStrategy::block()] {
        let part = partition_mesh(&mesh, 2, strategy)?;
        let ranks = build_distributed_graph(&mesh, &part)?;
        println!("\n{} partition", strategy.name());
        println!("{}", HaloStats::header());
        println!("{}", halo_stats(&ranks));

        // every global node's inverse degrees sum to one
        let mut unity: HashMap<usize, f64> = HashMap::new();
        for rg in &ranks {
            let g = &rg.graph;
            for i in 0..g.num_local {
                *unity.entry(g.global_ids[i]).or_default() += 1.0 / g.node_degree[i] as f64;
            }
        }
        let worst = unity.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        println!("nodes covered {}, max |sum 1/d - 1| = {worst:e}", unity.len());
    }
    Ok(())
}
