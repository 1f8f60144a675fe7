//! Parameter counts of the model presets and of a custom configuration.
//!
//! cargo run --example parameter_counts

use halo_gnn::gnn::GnnConfig;
use halo_gnn::harness::param_count_report;

fn main() {
    print!("{}", param_count_report());
    let custom = GnnConfig::custom(16, 2, 1);
    println!("custom N_H=16 M=2 k=1: {} parameters", custom.param_count());
    for (name, t) in GnnConfig::small().init_params(0).unwrap().named_tensors().iter().take(4) {
        println!("  {name:<28} {:?}", t.shape());
    }
}
