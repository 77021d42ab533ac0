mod common;

use prednet::data::{
    area_resample, centroid, generate_moving_shapes, load_frame, load_frame_dir, scramble_time, MovingShapesSpec,
};

#[test]
fn centroid_moves_with_latent_velocity() {
    let spec = MovingShapesSpec::new(100, 10, 32, 32, 17);
    let b = generate_moving_shapes(&spec).unwrap();
    let lat = b.latents.as_ref().unwrap();
    for (i, r) in lat.iter().enumerate() {
        for t in 1..b.seq_len() {
            let (y0, x0) = centroid(&b.frames[t - 1], i);
            let (y1, x1) = centroid(&b.frames[t], i);
            assert!(((y1 - y0) - r.velocity.0).abs() <= 0.25, "seq {i} t {t}: d_row {} vs {}", y1 - y0, r.velocity.0);
            assert!(((x1 - x0) - r.velocity.1).abs() <= 0.25, "seq {i} t {t}: d_col {} vs {}", x1 - x0, r.velocity.1);
        }
    }
}

#[test]
fn scramble_preserves_frame_multiset_and_breaks_order() {
    let b = generate_moving_shapes(&MovingShapesSpec::new(20, 6, 32, 32, 1)).unwrap();
    let s = scramble_time(&b, 4).unwrap();
    for i in 0..b.len() {
        let orig = b.sequence(i);
        let perm = s.sequence(i);
        let mut a: Vec<Vec<u32>> = orig.iter().map(|f| f.data().iter().map(|v| v.to_bits()).collect()).collect();
        let mut c: Vec<Vec<u32>> = perm.iter().map(|f| f.data().iter().map(|v| v.to_bits()).collect()).collect();
        assert_ne!(a, c, "sequence {i} left in order");
        a.sort();
        c.sort();
        assert_eq!(a, c);
    }
}

fn write_pgm(path: &std::path::Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    let img = image::GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)]));
    prednet::data::save_pnm(&image::DynamicImage::ImageLuma8(img), path).unwrap();
}

#[test]
fn pixel_normalization_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.pgm");
    write_pgm(&p, 2, 2, |x, _| if x == 0 { 0 } else { 255 });
    let f = load_frame(&p, true, (2, 2)).unwrap();
    assert_eq!(f.data(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn crop_and_downsample_match_area_oracle() {
    // 12 x 20 checkerboard of 3x3 cells, cropped to 12 x 12 and reduced to 8 x 8.
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.pgm");
    let val = |x: u32, y: u32| if ((x / 3) + (y / 3)) % 2 == 0 { 255u8 } else { 0 };
    write_pgm(&p, 20, 12, val);
    let got = load_frame(&p, true, (8, 8)).unwrap();
    // Independent oracle: integrate the source over each destination cell by
    // fine sampling on a 1/12-pixel lattice (exact for 12 -> 8 cells of 1.5 px).
    let left = 4u32;
    for oy in 0..8 {
        for ox in 0..8 {
            let mut acc = 0.0;
            let fine = 18;
            for sy in 0..fine {
                for sx in 0..fine {
                    let y = (oy as f64 * 1.5 + (sy as f64 + 0.5) * 1.5 / fine as f64).floor() as u32;
                    let x = (ox as f64 * 1.5 + (sx as f64 + 0.5) * 1.5 / fine as f64).floor() as u32;
                    acc += val(x + left, y) as f64 / 255.0;
                }
            }
            let want = acc / (fine * fine) as f64;
            let have = got.get(0, 0, oy, ox) as f64;
            assert!((want - have).abs() < 1e-6, "({oy},{ox}): {have} vs {want}");
        }
    }
    // Same-size resampling is the identity.
    let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
    assert_eq!(area_resample(&src, 3, 4, 3, 4), src);
}

#[test]
fn directory_windows() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..20u8 {
        write_pgm(&dir.path().join(format!("f{i:02}.pgm")), 4, 4, move |_, _| i * 10);
    }
    let b = load_frame_dir(dir.path(), 10, 10, true, (4, 4)).unwrap();
    assert_eq!(b.len(), 2);
    assert_eq!(b.frames[0].get(1, 0, 0, 0), 100.0 / 255.0);
    let err = load_frame_dir(dir.path(), 25, 1, true, (4, 4)).unwrap_err().to_string();
    assert!(err.contains("fewer than one window"), "{err}");
}
