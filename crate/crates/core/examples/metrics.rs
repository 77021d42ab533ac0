//! Image-quality metrics on synthetic frames: MSE, PSNR and SSIM of the
//! copy-last-frame baseline and of a blurred version of the ground truth.
//!
//! cargo run --release --example metrics

use prednet::data::{generate_moving_shapes, MovingShapesSpec};
use prednet::kernels::{avg_pool, upsample_nn2};
use prednet::metrics::{evaluate, mse, psnr, ssim, FramePredictor, SsimParams};
use prednet::Tensor;

/// Predicts each frame as a 2x block-averaged copy of the true frame.
struct Blurred;

impl FramePredictor for Blurred {
    fn name(&self) -> String {
        "Oracle, 2x blurred".into()
    }

    fn predict(&self, frames: &[Tensor<f32>]) -> prednet::Result<Vec<Tensor<f32>>> {
        frames.iter().map(|f| Ok(upsample_nn2(&avg_pool(f, 2)?))).collect()
    }
}

fn main() -> prednet::Result<()> {
    let data = generate_moving_shapes(&MovingShapesSpec::new(20, 10, 32, 32, 4))?;
    let params = SsimParams::default();
    let f = data.sequence(0);
    println!(
        "frame 2 vs frame 1: MSE {:.5}  PSNR {:.2} dB  SSIM {:.4}",
        mse(&f[0], &f[1])?,
        psnr(&f[0], &f[1], 1.0)?,
        ssim(&f[0], &f[1], &params)?
    );
    println!("SSIM of a frame with itself: {}", ssim(&f[1], &f[1], &params)?);
    let report = evaluate(&[&Blurred], &data, "moving shapes", &params)?;
    print!("{}", report.to_text());
    Ok(())
}
