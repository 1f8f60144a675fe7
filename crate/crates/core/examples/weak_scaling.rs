//! A small weak-scaling sweep. Times come from the simulated rank clock;
//! byte counts are exact.
//!
//! cargo run --release --example weak_scaling

use halo_gnn::comm::ExchangeMode;
use halo_gnn::harness::{weak_scaling, ScalingOptions};

fn main() -> halo_gnn::Result<()> {
    let opts = ScalingOptions {
        loading: 512,
        ranks: vec![1, 2, 4, 8],
        modes: ExchangeMode::ALL.to_vec(),
        order: Some(3),
        warmup: 1,
        iterations: 2,
        ..ScalingOptions::default()
    };
    let report = weak_scaling(&opts)?;
    print!("{}", report.summary());
    println!("n-a2a never sends more than a2a: {}", report.bytes_ordering_holds());

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    println!("\n{}", String::from_utf8_lossy(&csv).lines().next().unwrap_or_default());
    Ok(())
}
