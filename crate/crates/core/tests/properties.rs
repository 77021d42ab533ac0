use prednet::model::error_unit;
use prednet::train::{adam_step, loss_and_gradients, AdamParams, AdamState, LossMode, Objective};
use prednet::{Model, PredNetConfig, Shape, Tensor, Variant};
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = Tensor<f32>> {
    (1usize..3, 1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(-4.0f32..4.0, n * c * h * w)
            .prop_map(move |v| Tensor::from_vec(Shape::new(n, c, h, w), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_serialization_round_trips(t in tensor_strategy()) {
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = Tensor::<f32>::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn error_halves_are_disjoint_and_reconstruct(
        pair in tensor_strategy().prop_flat_map(|a| {
            let s = a.shape();
            (Just(a), prop::collection::vec(-4.0f32..4.0, s.len())
                .prop_map(move |v| Tensor::from_vec(s, v).unwrap()))
        })
    ) {
        let (a, ahat) = pair;
        let e = error_unit(&a, &ahat).unwrap();
        let c = a.shape().c;
        let pos = e.channel_slice(0, c).unwrap();
        let neg = e.channel_slice(c, c).unwrap();
        for i in 0..a.len() {
            let (p, q) = (pos.data()[i], neg.data()[i]);
            prop_assert!(p >= 0.0 && q >= 0.0);
            prop_assert!(p == 0.0 || q == 0.0);
            prop_assert_eq!(p - q, a.data()[i] - ahat.data()[i]);
        }
    }

    #[test]
    fn loss_is_nonnegative(seed in 0u64..1000, variant in 0usize..6, t in 2usize..5) {
        let cfg = PredNetConfig::new(&[1, 2], Variant::ALL[variant]);
        let model: Model<f32> = Model::new(cfg, seed).unwrap();
        let frames: Vec<Tensor<f32>> = (0..t)
            .map(|k| Tensor::from_fn(Shape::new(2, 1, 8, 8), |n, _, y, x| {
                (((seed as usize + k * 7 + n * 3 + y * 5 + x) % 11) as f32) / 10.0
            }))
            .collect();
        for obj in [Objective::Loss(LossMode::L1ErrorUnits), Objective::Loss(LossMode::L2Pixel)] {
            let (loss, grads) = loss_and_gradients(&model, &frames, obj).unwrap();
            prop_assert!(loss >= 0.0 && loss.is_finite());
            prop_assert!(grads.iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn first_adam_step_is_bounded_by_learning_rate(
        grads in prop::collection::vec(-1e3f64..1e3, 1..40),
        lr in 1e-5f64..1e-1,
    ) {
        let n = grads.len();
        let before = Tensor::<f64>::zeros(Shape::new(1, 1, 1, n));
        let mut params = vec![before.clone()];
        let g = vec![Tensor::from_vec(Shape::new(1, 1, 1, n), grads).unwrap()];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &g, &mut state, lr, &AdamParams::default()).unwrap();
        for (&p, &gi) in params[0].data().iter().zip(g[0].data()) {
            prop_assert!(p.abs() <= lr * (1.0 + 1e-9));
            if gi != 0.0 {
                prop_assert!(p.signum() == -gi.signum());
            }
        }
    }
}

#[test]
fn adam_rejects_non_finite_gradients_without_mutation() {
    let mut params = vec![Tensor::<f32>::full(Shape::new(1, 1, 1, 3), 0.5)];
    let g = vec![Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, f32::NAN, 0.0]).unwrap()];
    let mut state = AdamState::new(&params);
    assert!(adam_step(&mut params, &g, &mut state, 1e-3, &AdamParams::default()).is_err());
    assert_eq!(params[0].data(), &[0.5, 0.5, 0.5]);
    assert_eq!(state.step, 0);
}
