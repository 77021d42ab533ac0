//! Trains a 3-layer network on moving shapes, saves the best-validation
//! checkpoint and compares it with the copy-last-frame baseline.
//!
//! cargo run --release --example train_prednet -- [epochs] [samples_per_epoch]

use prednet::checkpoint;
use prednet::data::{generate_moving_shapes, MovingShapesSpec};
use prednet::metrics::{evaluate, FramePredictor, SsimParams};
use prednet::train::{train, TrainSchedule};
use prednet::{Model, PredNetConfig, Variant};

fn main() -> prednet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(4);
    let samples = args.get(1).copied().unwrap_or(500);

    let train_set = generate_moving_shapes(&MovingShapesSpec::new(1000, 10, 32, 32, 1))?;
    let val = generate_moving_shapes(&MovingShapesSpec::new(50, 10, 32, 32, 2))?;
    let test = generate_moving_shapes(&MovingShapesSpec::new(50, 10, 32, 32, 3))?;

    let model = Model::new(PredNetConfig::new(&[1, 8, 16], Variant::PredNet), 0)?;
    println!("{} weights", model.num_weights());
    let mut schedule = TrainSchedule::new(epochs, samples, 0);
    schedule.adam.lr = 3e-3;
    schedule.lr_halving = true;
    let outcome = train(model, &train_set, &val, &schedule)?;
    for r in &outcome.history {
        println!("epoch {}: val {:.5} lr {:.0e}", r.epoch, r.val_loss, r.lr);
    }

    let path = std::env::temp_dir().join("prednet_example.pnetw");
    checkpoint::save(&outcome.model, &path)?;
    let restored = checkpoint::load(&path)?;
    let named = prednet::metrics::Named("PredNet".into(), &restored);
    let report = evaluate(&[&named as &dyn FramePredictor], &test, "moving shapes", &SsimParams::default())?;
    print!("{}", report.to_text());
    println!("checkpoint: {}", path.display());
    Ok(())
}
