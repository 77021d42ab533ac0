//! Multi-step extrapolation: the network is fed its own predictions after
//! `t_switch`, before and after fine-tuning on that regime.
//!
//! cargo run --release --example extrapolation

use prednet::data::{generate_moving_shapes, MovingShapesSpec};
use prednet::metrics::extrapolation_curve;
use prednet::train::{finetune_extrapolation, train, TrainSchedule};
use prednet::{Model, PredNetConfig, Variant};

const T_SWITCH: usize = 8;
const HORIZON: usize = 4;

fn main() -> prednet::Result<()> {
    let total = T_SWITCH + HORIZON;
    let train_set = generate_moving_shapes(&MovingShapesSpec::new(400, total, 32, 32, 1))?;
    let val = generate_moving_shapes(&MovingShapesSpec::new(40, total, 32, 32, 2))?;
    let test = generate_moving_shapes(&MovingShapesSpec::new(60, total, 32, 32, 3))?;

    let model = Model::new(PredNetConfig::new(&[1, 8, 16], Variant::PredNet), 0)?;
    let mut schedule = TrainSchedule::new(4, 400, 0);
    schedule.adam.lr = 3e-3;
    schedule.lr_halving = true;
    let short = train_set.truncate(T_SWITCH);
    let base = train(model, &short, &val.truncate(T_SWITCH), &schedule)?.model;
    let before = extrapolation_curve(&base, &test, T_SWITCH, HORIZON)?;

    let tuned = finetune_extrapolation(base, &train_set, &val, &TrainSchedule::new(1, 200, 1), T_SWITCH, total)?;
    let after = extrapolation_curve(&tuned.model, &test, T_SWITCH, HORIZON)?;

    println!("offset  copy-last  next-frame  fine-tuned");
    for k in 0..HORIZON {
        println!(
            "{:>6}  {:>9.5}  {:>10.5}  {:>10.5}",
            after.offsets[k], after.baseline_mse[k], before.model_mse[k], after.model_mse[k]
        );
    }
    after.write_csv(std::io::stdout())?;
    Ok(())
}
