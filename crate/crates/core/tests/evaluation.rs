mod common;

use prednet::data::{generate_moving_shapes, MovingShapesSpec, SequenceBatch};
use prednet::metrics::{
    copy_last_frame, evaluate, extrapolation_curve, sign_test_p, FramePredictor, SsimParams, COPY_LAST_FRAME,
};
use prednet::{Model, PredNetConfig, Shape, Tensor, Variant};

#[test]
fn evaluation_is_invariant_to_sequence_order() {
    let data = generate_moving_shapes(&MovingShapesSpec::new(6, 5, 32, 32, 2)).unwrap();
    let model = Model::new(PredNetConfig::new(&[1, 4], Variant::PredNet), 1).unwrap();
    let order = [4, 1, 5, 0, 3, 2];
    let shuffled = data.select(&order).unwrap();
    let p = SsimParams::default();
    let a = evaluate(&[&model as &dyn FramePredictor], &data, "a", &p).unwrap();
    let b = evaluate(&[&model as &dyn FramePredictor], &shuffled, "a", &p).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!((x.mse - y.mse).abs() <= 1e-12 * x.mse.max(1e-30));
        assert!((x.ssim - y.ssim).abs() <= 1e-12);
    }
}

#[test]
fn copy_last_frame_error_is_mean_squared_frame_difference() {
    // Frames are constant planes k * 0.1; consecutive differences are 0.1.
    let frames: Vec<Tensor<f32>> =
        (0..4).map(|k| Tensor::full(Shape::new(2, 1, 16, 16), k as f32 * 0.1)).collect();
    let batch = SequenceBatch::new(frames.clone(), None).unwrap();
    let report = evaluate(&[], &batch, "planes", &SsimParams::default()).unwrap();
    let row = report.row(COPY_LAST_FRAME).unwrap();
    let want: f64 = (1..4).map(|t| ((t as f32 * 0.1 - (t - 1) as f32 * 0.1) as f64).powi(2)).sum::<f64>() / 3.0;
    assert!((row.mse - want).abs() < 1e-9, "{} vs {want}", row.mse);
    let copied = copy_last_frame(&frames).unwrap();
    assert_eq!(copied.len(), 3);
    assert_eq!(copied[2], frames[2]);
}

#[test]
fn extrapolation_curve_has_one_entry_per_offset() {
    let data = generate_moving_shapes(&MovingShapesSpec::new(3, 8, 32, 32, 5)).unwrap();
    let model = Model::new(PredNetConfig::new(&[1, 4], Variant::PredNet), 1).unwrap();
    let c = extrapolation_curve(&model, &data, 5, 3).unwrap();
    assert_eq!(c.offsets, vec![1, 2, 3]);
    assert_eq!(c.model_mse.len(), 3);
    assert!(c.baseline_mse.iter().all(|v| *v > 0.0));
    assert!(extrapolation_curve(&model, &data, 6, 3).is_err());
}

#[test]
fn sign_test_matches_binomial_tail() {
    // P(X >= 9 | n = 10, p = 1/2) = 11 / 1024.
    assert!((sign_test_p(9, 1) - 11.0 / 1024.0).abs() < 1e-15);
    assert_eq!(sign_test_p(0, 0), 1.0);
}
