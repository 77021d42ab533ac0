//! Decodes latent variables (velocity, position, size, intensity, shape) from
//! the pooled representation units of a trained and a random network.
//!
//! cargo run --release --example latent_readout

use prednet::data::{generate_moving_shapes, MovingShapesSpec};
use prednet::readout::{compare_trained_vs_random, write_readout_csv, ReadoutOptions};
use prednet::train::{train, TrainSchedule};
use prednet::{Model, PredNetConfig, Variant};

fn main() -> prednet::Result<()> {
    let cfg = PredNetConfig::new(&[1, 8, 16], Variant::PredNet);
    let train_set = generate_moving_shapes(&MovingShapesSpec::new(400, 8, 32, 32, 1))?;
    let val = generate_moving_shapes(&MovingShapesSpec::new(40, 8, 32, 32, 2))?;
    let test = generate_moving_shapes(&MovingShapesSpec::new(100, 8, 32, 32, 3))?;

    let mut schedule = TrainSchedule::new(4, 400, 0);
    schedule.adam.lr = 3e-3;
    schedule.lr_halving = true;
    let trained = train(Model::new(cfg.clone(), 0)?, &train_set, &val, &schedule)?.model;
    let random = Model::new(cfg, 99)?;

    let opts = ReadoutOptions {
        train_sizes: vec![1, 5, 20],
        repeats: 5,
        t_sweep: false,
        ..ReadoutOptions::default()
    };
    let rows = compare_trained_vs_random(&[("trained", &trained), ("random", &random)], &train_set, &test, &opts)?;
    write_readout_csv(&rows, std::io::stdout())?;
    Ok(())
}
