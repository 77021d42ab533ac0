//! Compares prediction quality on ordered and temporally scrambled sequences.
//! A model that exploits temporal structure loses accuracy on the latter.
//!
//! cargo run --release --example scramble_control

use prednet::data::{generate_moving_shapes, scramble_time, MovingShapesSpec};
use prednet::metrics::{sign_test_p, ssim_per_sequence, SsimParams};
use prednet::train::{train, TrainSchedule};
use prednet::{Model, PredNetConfig, Variant};

fn main() -> prednet::Result<()> {
    let train_set = generate_moving_shapes(&MovingShapesSpec::new(400, 10, 32, 32, 1))?;
    let val = generate_moving_shapes(&MovingShapesSpec::new(40, 10, 32, 32, 2))?;
    let test = generate_moving_shapes(&MovingShapesSpec::new(100, 10, 32, 32, 3))?;
    let mut schedule = TrainSchedule::new(4, 400, 0);
    schedule.adam.lr = 3e-3;
    schedule.lr_halving = true;
    let model = train(Model::new(PredNetConfig::new(&[1, 8, 16], Variant::PredNet), 0)?, &train_set, &val, &schedule)?.model;

    let params = SsimParams::default();
    let ordered = ssim_per_sequence(&model, &test, &params)?;
    let scrambled = ssim_per_sequence(&model, &scramble_time(&test, 5)?, &params)?;
    let wins = ordered.iter().zip(&scrambled).filter(|(o, s)| o > s).count();
    let losses = ordered.iter().zip(&scrambled).filter(|(o, s)| o < s).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean SSIM ordered {:.4}, scrambled {:.4}", mean(&ordered), mean(&scrambled));
    println!("ordered better on {wins}, worse on {losses}; sign test p = {:.2e}", sign_test_p(wins, losses));
    Ok(())
}
