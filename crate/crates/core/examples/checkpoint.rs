//! Train briefly, save a checkpoint, restore it into a fresh model, and
//! continue training from there.
//!
//! cargo run --example checkpoint

use halo_gnn::gnn::{GnnConfig, TrainConfig, Trainer};
use halo_gnn::harness::build_problem;
use halo_gnn::meshgen::{MeshConfig, PartitionStrategy};
use halo_gnn::nn::{load_checkpoint, save_checkpoint};

fn main() -> halo_gnn::Result<()> {
    let model = GnnConfig::small();
    let train = TrainConfig {
        iterations: 5,
        ..TrainConfig::default()
    };
    let ranks = || build_problem(&MeshConfig::unit_cube(2, 2), 2, PartitionStrategy::block()).map(|p| p.ranks);

    let mut trainer = Trainer::new(model, train, ranks()?, None)?;
    let trace = trainer.run()?;
    println!("loss after {} steps: {:.6e}", trace.len(), trace.last().unwrap().loss);

    let path = std::env::temp_dir().join("halo_gnn_example.ckpt");
    save_checkpoint(&path, trainer.params(), model.config_hash())?;

    let mut restored = model.init_params(99)?;
    load_checkpoint(&path, &mut restored, Some(model.config_hash()))?;
    println!("restored parameters identical: {}", &restored == trainer.params());

    // a large model refuses the small model's checkpoint
    let large = GnnConfig::large();
    let mut wrong = large.init_params(0)?;
    println!("large model load: {:?}", load_checkpoint(&path, &mut wrong, Some(large.config_hash())).err());

    let mut resumed = Trainer::with_params(model, train, ranks()?, None, restored)?;
    println!("next loss: {:.6e}", resumed.step()?.loss);
    std::fs::remove_file(path)?;
    Ok(())
}
