//! Trains every architecture variant under one schedule and prints the
//! comparison table (best run, mean over seeds in parentheses).
//!
//! cargo run --release --example control_variants -- [seeds]

use prednet::data::{generate_moving_shapes, MovingShapesSpec};
use prednet::metrics::{evaluate, variant_table, FramePredictor, SsimParams, VariantRuns, COPY_LAST_FRAME};
use prednet::train::{train, TrainSchedule};
use prednet::{Model, PredNetConfig, Variant};

fn main() -> prednet::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let train_set = generate_moving_shapes(&MovingShapesSpec::new(400, 8, 32, 32, 1))?;
    let val = generate_moving_shapes(&MovingShapesSpec::new(40, 8, 32, 32, 2))?;
    let test = generate_moving_shapes(&MovingShapesSpec::new(40, 8, 32, 32, 3))?;
    let params = SsimParams::default();

    let mut groups = Vec::new();
    let mut baseline = None;
    for variant in Variant::ALL {
        let mut runs = Vec::new();
        for seed in 0..seeds {
            let model = Model::new(PredNetConfig::new(&[1, 8, 16], variant), seed)?;
            let mut schedule = TrainSchedule::new(3, 300, seed);
            schedule.adam.lr = 3e-3;
            schedule.lr_halving = true;
            let out = train(model, &train_set, &val, &schedule)?;
            let report = evaluate(&[&out.model as &dyn FramePredictor], &test, "moving shapes", &params)?;
            runs.push(report.rows[0].clone());
            baseline = report.row(COPY_LAST_FRAME).cloned();
        }
        eprintln!("trained {}", variant.tag());
        groups.push(VariantRuns {
            name: variant.display_name().into(),
            runs,
        });
    }
    groups.extend(baseline.map(|b| VariantRuns {
        name: COPY_LAST_FRAME.into(),
        runs: vec![b],
    }));
    print!("{}", variant_table(&groups));
    Ok(())
}
