mod common;

use prednet::checkpoint::write_checkpoint;
use prednet::data::{generate_moving_shapes, MovingShapesSpec};
use prednet::train::{train, TrainSchedule};
use prednet::{Model, PredNetConfig, Variant};

fn train_bytes(threads: usize) -> (Vec<u8>, Vec<f64>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let tr = generate_moving_shapes(&MovingShapesSpec::new(24, 5, 32, 32, 3)).unwrap();
        let va = generate_moving_shapes(&MovingShapesSpec::new(4, 5, 32, 32, 4)).unwrap();
        let model = Model::new(PredNetConfig::new(&[1, 4], Variant::PredNet), 8).unwrap();
        let mut sched = TrainSchedule::new(2, 12, 6);
        sched.batch_size = 4;
        let out = train(model, &tr, &va, &sched).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&out.model, &mut buf).unwrap();
        (buf, out.history.iter().map(|h| h.val_loss).collect())
    })
}

#[test]
fn training_is_bitwise_reproducible_across_thread_counts() {
    let (a, ha) = train_bytes(1);
    let (b, hb) = train_bytes(4);
    assert_eq!(ha, hb);
    assert!(a == b, "checkpoints differ");
}

#[test]
fn cli_reruns_produce_identical_artifacts() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = common::cli_pipeline(d1.path()).unwrap();
    let b = common::cli_pipeline(d2.path()).unwrap();
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between runs");
    }
}
