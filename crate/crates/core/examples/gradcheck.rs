//! Checks the analytic gradients of a small 64-bit model against central
//! finite differences for every architecture variant.
//!
//! cargo run --release --example gradcheck

use prednet::gradcheck::check_gradients;
use prednet::train::{loss_and_gradients, objective_on_tape, LossMode, Objective};
use prednet::{Model, PredNetConfig, Shape, Tape, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> prednet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let frames: Vec<Tensor<f64>> = (0..3)
        .map(|_| Tensor::from_fn(Shape::new(2, 1, 8, 8), |_, _, _, _| rng.gen_range(0.0..1.0)))
        .collect();
    let objective = Objective::Loss(LossMode::L1ErrorUnits);

    for variant in Variant::ALL {
        let cfg = PredNetConfig::new(&[1, 3], variant).with_lambda_layer(vec![1.0, 0.1]);
        let mut model: Model<f64> = Model::new(cfg.clone(), 1)?;
        // Random biases too, so no unit sits exactly on a ReLU kink.
        for p in model.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        let (loss, grads) = loss_and_gradients(&model, &frames, objective)?;
        let report = check_gradients(model.params(), &grads, 1e-5, Some(16), |params| {
            let m = Model::from_params(cfg.clone(), params.to_vec())?;
            let mut tape = Tape::inference();
            let vars = m.bind(&mut tape);
            let l = objective_on_tape(&m, &mut tape, &vars, &frames, objective)?;
            Ok(tape.value(l).data()[0])
        })?;
        println!(
            "{:<20} loss {loss:.5}  {} entries probed  max relative error {:.2e}",
            variant.tag(),
            report.checked,
            report.max_rel_error
        );
    }
    Ok(())
}
