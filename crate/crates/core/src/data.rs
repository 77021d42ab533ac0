//! Sequence containers, the moving-shapes generator, temporal scrambling and
//! frame-directory ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disc,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Disc, ShapeKind::Triangle];

    /// Whether `(dy, dx)`, measured from the shape centre, lies inside a shape of side `size`.
    fn contains(self, dy: f64, dx: f64, size: f64) -> bool {
        let half = size / 2.0;
        match self {
            ShapeKind::Square => dy.abs() <= half && dx.abs() <= half,
            ShapeKind::Disc => dy * dy + dx * dx <= half * half,
            // Upward-pointing isosceles triangle inscribed in the size x size box.
            ShapeKind::Triangle => {
                if dy < -half || dy > half {
                    return false;
                }
                let depth = (dy + half) / size;
                dx.abs() <= depth * half
            }
        }
    }
}

/// Generative parameters of one sequence. Positions are the shape centre in
/// pixel units, `(row, col)`, with pixel `i` spanning `[i, i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub shape_id: usize,
    pub shape: ShapeKind,
    pub size: f64,
    pub initial_position: (f64, f64),
    /// Pixels per frame, `(d_row, d_col)`.
    pub velocity: (f64, f64),
    pub intensity: f64,
}

/// Frames indexed `[t]`, each `(n, c, h, w)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub frames: Vec<Tensor<f32>>,
    pub latents: Option<Vec<LatentRecord>>,
}

impl SequenceBatch {
    pub fn new(frames: Vec<Tensor<f32>>, latents: Option<Vec<LatentRecord>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("sequence_batch", "no frames"))?
            .shape();
        for f in &frames {
            if f.shape() != first {
                return Err(Error::shape("sequence_batch", first, f.shape()));
            }
            if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("sequence_batch", "frame values must lie in [0, 1]"));
            }
        }
        if let Some(l) = &latents {
            if l.len() != first.n {
                return Err(Error::invalid(
                    "sequence_batch",
                    format!("{} latent records for {} sequences", l.len(), first.n),
                ));
            }
        }
        Ok(SequenceBatch { frames, latents })
    }

    /// Number of sequences.
    pub fn len(&self) -> usize {
        self.frames.first().map_or(0, |f| f.shape().n)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_shape(&self) -> Shape {
        self.frames[0].shape()
    }

    /// Frames of sequence `i`, each with batch size 1.
    pub fn sequence(&self, i: usize) -> Vec<Tensor<f32>> {
        self.frames
            .iter()
            .map(|f| f.batch_slice(i, 1).expect("index in range"))
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<SequenceBatch> {
        if indices.is_empty() {
            return Err(Error::invalid("select", "no sequences selected"));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let parts: Vec<Tensor<f32>> = indices
                    .iter()
                    .map(|&i| f.batch_slice(i, 1))
                    .collect::<Result<_>>()?;
                Tensor::stack_batch(&parts.iter().collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let latents = self
            .latents
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i].clone()).collect());
        Ok(SequenceBatch { frames, latents })
    }

    /// The first `t` frames of every sequence.
    pub fn truncate(&self, t: usize) -> SequenceBatch {
        SequenceBatch {
            frames: self.frames[..t.min(self.frames.len())].to_vec(),
            latents: self.latents.clone(),
        }
    }

    /// Builds a batch from per-sequence frame lists (each frame with batch size 1).
    pub fn from_sequences(seqs: &[Vec<Tensor<f32>>], latents: Option<Vec<LatentRecord>>) -> Result<Self> {
        let t = seqs
            .first()
            .ok_or_else(|| Error::invalid("sequence_batch", "no sequences"))?
            .len();
        if seqs.iter().any(|s| s.len() != t) {
            return Err(Error::invalid("sequence_batch", "sequences differ in length"));
        }
        let frames = (0..t)
            .map(|ti| Tensor::stack_batch(&seqs.iter().map(|s| &s[ti]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, latents)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingShapesSpec {
    pub count: usize,
    pub seq_len: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "all_shapes")]
    pub shapes: Vec<ShapeKind>,
    /// Side length range in pixels.
    #[serde(default = "default_size_range")]
    pub size_range: (f64, f64),
    /// Each velocity component is drawn uniformly from `[-max, max]` and must
    /// have magnitude at least `min`.
    #[serde(default = "default_velocity_range")]
    pub velocity_range: (f64, f64),
    #[serde(default = "default_intensity_range")]
    pub intensity_range: (f64, f64),
    /// Round pixel values to multiples of 1/255 so frames survive 8-bit storage.
    #[serde(default = "default_true")]
    pub quantize: bool,
    pub seed: u64,
}

fn all_shapes() -> Vec<ShapeKind> {
    ShapeKind::ALL.to_vec()
}
fn default_size_range() -> (f64, f64) {
    (7.0, 10.0)
}
fn default_velocity_range() -> (f64, f64) {
    (0.0, 1.5)
}
fn default_intensity_range() -> (f64, f64) {
    (0.6, 1.0)
}
fn default_true() -> bool {
    true
}

impl MovingShapesSpec {
    /// Defaults for a `count x seq_len` dataset of `h x w` frames.
    pub fn new(count: usize, seq_len: usize, height: usize, width: usize, seed: u64) -> Self {
        MovingShapesSpec {
            count,
            seq_len,
            height,
            width,
            shapes: all_shapes(),
            size_range: default_size_range(),
            velocity_range: default_velocity_range(),
            intensity_range: default_intensity_range(),
            quantize: true,
            seed,
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Anti-aliased rendering of one shape by 4x4 supersampling.
pub fn render_shape(
    frame: &mut [f32],
    height: usize,
    width: usize,
    kind: ShapeKind,
    size: f64,
    center: (f64, f64),
    intensity: f64,
    quantize: bool,
) {
    let half = size / 2.0 + 1.0;
    let y0 = ((center.0 - half).floor().max(0.0)) as usize;
    let y1 = ((center.0 + half).ceil() as usize).min(height);
    let x0 = ((center.1 - half).floor().max(0.0)) as usize;
    let x1 = ((center.1 + half).ceil() as usize).min(width);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) * step;
                    let px = x as f64 + (sx as f64 + 0.5) * step;
                    if kind.contains(py - center.0, px - center.1, size) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let mut v = intensity * hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                if quantize {
                    v = (v * 255.0).round() / 255.0;
                }
                let i = y * width + x;
                frame[i] = (frame[i] as f64 + v).min(1.0) as f32;
            }
        }
    }
}

/// One anti-aliased shape per sequence translating at a constant velocity.
///
/// Initial positions are drawn from the region that keeps the whole trajectory
/// inside the frame, so velocity stays constant and no clipping occurs.
pub fn generate_moving_shapes(spec: &MovingShapesSpec) -> Result<SequenceBatch> {
    let op = "generate_moving_shapes";
    if spec.count == 0 || spec.seq_len == 0 {
        return Err(Error::invalid(op, "count and seq_len must be positive"));
    }
    if spec.shapes.is_empty() {
        return Err(Error::invalid(op, "shape set is empty"));
    }
    let (smin, smax) = spec.size_range;
    let (vmin, vmax) = spec.velocity_range;
    let (imin, imax) = spec.intensity_range;
    if !(smin > 0.0 && smin <= smax) || !(0.0 <= vmin && vmin <= vmax) || !(0.0 < imin && imin <= imax && imax <= 1.0) {
        return Err(Error::invalid(op, "ranges must be ordered, sizes positive, intensities in (0, 1]"));
    }
    let travel = vmax * (spec.seq_len - 1) as f64;
    for (dim, name) in [(spec.height, "height"), (spec.width, "width")] {
        if smax + travel > dim as f64 - 1.0 {
            return Err(Error::invalid(
                op,
                format!(
                    "velocity too large for frame bounds: size {smax} + travel {travel:.2} px over {} frames does not fit {name} {dim}",
                    spec.seq_len
                ),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;
    let mut data: Vec<Vec<f32>> = vec![vec![0.0; spec.count * plane]; spec.seq_len];
    let mut latents = Vec::with_capacity(spec.count);
    let component = |rng: &mut ChaCha8Rng| {
        let mag = if vmax > vmin { rng.gen_range(vmin..=vmax) } else { vmin };
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    };
    for n in 0..spec.count {
        let shape_id = rng.gen_range(0..spec.shapes.len());
        let kind = spec.shapes[shape_id];
        let size = if smax > smin { rng.gen_range(smin..=smax) } else { smin };
        let velocity = (component(&mut rng), component(&mut rng));
        let intensity = if imax > imin { rng.gen_range(imin..=imax) } else { imin };
        let mut start = [0.0; 2];
        for (axis, (dim, v)) in [(h, velocity.0), (w, velocity.1)].into_iter().enumerate() {
            let span = v * (spec.seq_len - 1) as f64;
            let lo = size / 2.0 + 0.5 + (-span).max(0.0);
            let hi = dim as f64 - size / 2.0 - 0.5 - span.max(0.0);
            start[axis] = if hi > lo { rng.gen_range(lo..hi) } else { (lo + hi) / 2.0 };
        }
        for (t, frame) in data.iter_mut().enumerate() {
            let center = (start[0] + velocity.0 * t as f64, start[1] + velocity.1 * t as f64);
            render_shape(
                &mut frame[n * plane..(n + 1) * plane],
                h,
                w,
                kind,
                size,
                center,
                intensity,
                spec.quantize,
            );
        }
        latents.push(LatentRecord {
            shape_id,
            shape: kind,
            size,
            initial_position: (start[0], start[1]),
            velocity,
            intensity,
        });
    }
    let frames = data
        .into_iter()
        .map(|d| Tensor::from_vec(Shape::new(spec.count, 1, h, w), d))
        .collect::<Result<Vec<_>>>()?;
    SequenceBatch::new(frames, Some(latents))
}

/// Intensity-weighted centroid `(row, col)` of sample `n`, channel 0, in pixel-centre coordinates.
pub fn centroid(frame: &Tensor<f32>, n: usize) -> (f64, f64) {
    let s = frame.shape();
    let (mut m, mut my, mut mx) = (0.0, 0.0, 0.0);
    for y in 0..s.h {
        for x in 0..s.w {
            let v = frame.get(n, 0, y, x) as f64;
            m += v;
            my += v * (y as f64 + 0.5);
            mx += v * (x as f64 + 0.5);
        }
    }
    (my / m, mx / m)
}

/// Permutes the frames of every sequence by a seeded uniform non-identity permutation.
/// Latents are dropped since they no longer describe the frames.
pub fn scramble_time(batch: &SequenceBatch, seed: u64) -> Result<SequenceBatch> {
    let t = batch.seq_len();
    if t < 2 {
        return Err(Error::invalid("scramble_time", "need at least 2 frames to scramble"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity: Vec<usize> = (0..t).collect();
    let mut seqs = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut perm = identity.clone();
        while perm == identity {
            perm.shuffle(&mut rng);
        }
        let frames = batch.sequence(i);
        seqs.push(perm.iter().map(|&p| frames[p].clone()).collect::<Vec<_>>());
    }
    SequenceBatch::from_sequences(&seqs, None)
}

/// Image files (PGM/PPM/PNG) in `dir`, sorted lexicographically.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Centre crop to the aspect ratio of `(th, tw)`: returns `(top, left, height, width)`.
pub fn center_crop_box(h: usize, w: usize, th: usize, tw: usize) -> (usize, usize, usize, usize) {
    // Compare w/h with tw/th without floating point.
    if w * th > tw * h {
        let cw = ((h * tw) as f64 / th as f64).round().max(1.0) as usize;
        (0, (w - cw) / 2, h, cw)
    } else {
        let ch = ((w * th) as f64 / tw as f64).round().max(1.0) as usize;
        ((h - ch) / 2, 0, ch, w)
    }
}

/// Area-average resampling of a `(src_h, src_w)` plane to `(dst_h, dst_w)`.
pub fn area_resample(src: &[f64], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f64> {
    // Per-axis overlap weights between destination cells and source pixels.
    fn weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let (a, b) = (d as f64 * scale, (d + 1) as f64 * scale);
                let mut out = Vec::new();
                let mut s = a.floor() as usize;
                while (s as f64) < b && s < src {
                    let overlap = (b.min((s + 1) as f64) - a.max(s as f64)).max(0.0);
                    if overlap > 0.0 {
                        out.push((s, overlap / scale));
                    }
                    s += 1;
                }
                out
            })
            .collect()
    }
    let wy = weights(src_h, dst_h);
    let wx = weights(src_w, dst_w);
    let mut rows = vec![0.0; dst_h * src_w];
    for (dy, ws) in wy.iter().enumerate() {
        for &(sy, wgt) in ws {
            for x in 0..src_w {
                rows[dy * src_w + x] += wgt * src[sy * src_w + x];
            }
        }
    }
    let mut out = vec![0.0; dst_h * dst_w];
    for dy in 0..dst_h {
        for (dx, ws) in wx.iter().enumerate() {
            out[dy * dst_w + dx] = ws.iter().map(|&(sx, wgt)| wgt * rows[dy * src_w + sx]).sum();
        }
    }
    out
}

/// Loads one image as `(channels, h, w)` values in `[0, 1]`, centre-cropped and
/// box-downsampled to `target_hw`.
pub fn load_frame(path: &Path, grayscale: bool, target_hw: (usize, usize)) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (planes, h, w): (Vec<Vec<f64>>, usize, usize) = if grayscale {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        (vec![g.pixels().map(|p| p.0[0] as f64 / 255.0).collect()], h as usize, w as usize)
    } else {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let planes = (0..3)
            .map(|c| rgb.pixels().map(|p| p.0[c] as f64 / 255.0).collect())
            .collect();
        (planes, h as usize, w as usize)
    };
    let (th, tw) = target_hw;
    let (top, left, ch, cw) = center_crop_box(h, w, th, tw);
    let mut data = Vec::with_capacity(planes.len() * th * tw);
    for p in &planes {
        let cropped: Vec<f64> = (top..top + ch)
            .flat_map(|y| p[y * w + left..y * w + left + cw].iter().copied())
            .collect();
        data.extend(
            area_resample(&cropped, ch, cw, th, tw)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0) as f32),
        );
    }
    Tensor::from_vec(Shape::new(1, planes.len(), th, tw), data)
}

/// Windows of `seq_len` consecutive frames starting every `stride` frames.
pub fn load_frame_dir(
    dir: &Path,
    seq_len: usize,
    stride: usize,
    grayscale: bool,
    target_hw: (usize, usize),
) -> Result<SequenceBatch> {
    if seq_len == 0 || stride == 0 {
        return Err(Error::invalid("load_frame_dir", "seq_len and stride must be positive"));
    }
    let files = list_frames(dir)?;
    if files.len() < seq_len {
        return Err(Error::invalid(
            "load_frame_dir",
            format!(
                "{} holds {} frames, fewer than one window of {seq_len}",
                dir.display(),
                files.len()
            ),
        ));
    }
    let frames = files
        .iter()
        .map(|p| load_frame(p, grayscale, target_hw))
        .collect::<Result<Vec<_>>>()?;
    let seqs: Vec<Vec<Tensor<f32>>> = (0..)
        .map(|k| k * stride)
        .take_while(|&s| s + seq_len <= frames.len())
        .map(|s| frames[s..s + seq_len].to_vec())
        .collect();
    SequenceBatch::from_sequences(&seqs, None)
}

/// Frames of sample `n` as an 8-bit image, clipped to `[0, 1]`. One channel
/// gives a greyscale image, three give RGB.
pub fn frame_image(frame: &Tensor<f32>, n: usize) -> Result<image::DynamicImage> {
    let s = frame.shape();
    let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let sample = frame.sample(n);
    let plane = s.h * s.w;
    match s.c {
        1 => {
            let buf: Vec<u8> = sample.iter().map(|&v| to8(v)).collect();
            let img = image::GrayImage::from_raw(s.w as u32, s.h as u32, buf).expect("buffer sized to frame");
            Ok(image::DynamicImage::ImageLuma8(img))
        }
        3 => {
            let buf: Vec<u8> = (0..plane).flat_map(|i| (0..3).map(move |c| to8(sample[c * plane + i]))).collect();
            let img = image::RgbImage::from_raw(s.w as u32, s.h as u32, buf).expect("buffer sized to frame");
            Ok(image::DynamicImage::ImageRgb8(img))
        }
        c => Err(Error::invalid("frame_image", format!("cannot write {c}-channel frames"))),
    }
}

/// Writes binary PGM (greyscale) or PPM (colour).
pub fn save_pnm(img: &image::DynamicImage, path: &Path) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;
    let subtype = match img {
        image::DynamicImage::ImageLuma8(_) => PnmSubtype::Graymap(SampleEncoding::Binary),
        _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
    };
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    let wrap = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    PnmEncoder::new(file)
        .with_subtype(subtype)
        .write_image(img.as_bytes(), img.width(), img.height(), img.color().into())
        .map_err(wrap)
}

/// Extension matching [`save_pnm`] for a frame with `channels` channels.
pub fn pnm_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// Writes every frame as `dir/seqNNNNN/frameNNN.pgm` (or `.ppm`).
pub fn materialize(batch: &SequenceBatch, dir: &Path) -> Result<()> {
    let ext = pnm_extension(batch.frame_shape().c);
    for i in 0..batch.len() {
        let seq_dir = dir.join(format!("seq{i:05}"));
        fs::create_dir_all(&seq_dir)?;
        for (t, f) in batch.frames.iter().enumerate() {
            save_pnm(&frame_image(f, i)?, &seq_dir.join(format!("frame{t:03}.{ext}")))?;
        }
    }
    Ok(())
}

/// Frame directories loaded with [`load_frame_dir`] and concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDirSpec {
    pub dirs: Vec<PathBuf>,
    pub seq_len: usize,
    pub stride: usize,
    #[serde(default = "default_true")]
    pub grayscale: bool,
    pub height: usize,
    pub width: usize,
}

impl FrameDirSpec {
    pub fn load(&self, base: &Path) -> Result<SequenceBatch> {
        if self.dirs.is_empty() {
            return Err(Error::invalid("load_frame_dir", "no directories listed"));
        }
        let parts = self
            .dirs
            .iter()
            .map(|d| load_frame_dir(&base.join(d), self.seq_len, self.stride, self.grayscale, (self.height, self.width)))
            .collect::<Result<Vec<_>>>()?;
        concat_batches(&parts)
    }
}

/// Self-contained description of a dataset: either the generator spec (with
/// its seed) or the frame directories to ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Manifest {
    Generated {
        spec: MovingShapesSpec,
        /// Where the frames were materialized, relative to the manifest.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frames_dir: Option<PathBuf>,
    },
    Directories(FrameDirSpec),
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        parse_json(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Rebuilds the dataset. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<SequenceBatch> {
        match self {
            Manifest::Generated { spec, .. } => generate_moving_shapes(spec),
            Manifest::Directories(d) => d.load(base),
        }
    }
}

/// Where a command takes its sequences from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generate(MovingShapesSpec),
    Manifest(PathBuf),
    Frames(FrameDirSpec),
}

impl DataSource {
    pub fn load(&self, base: &Path) -> Result<SequenceBatch> {
        match self {
            DataSource::Generate(spec) => generate_moving_shapes(spec),
            DataSource::Manifest(p) => {
                let path = base.join(p);
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Manifest::read(&path)?.load(&dir)
            }
            DataSource::Frames(f) => f.load(base),
        }
    }
}

/// Strict JSON parsing with the failing field path in the error.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path == "." { origin.to_string() } else { format!("{origin}: {path}") },
            msg: e.into_inner().to_string(),
        }
    })
}

/// Concatenates batches along the sequence axis.
pub fn concat_batches(parts: &[SequenceBatch]) -> Result<SequenceBatch> {
    let seqs: Vec<Vec<Tensor<f32>>> = parts
        .iter()
        .flat_map(|b| (0..b.len()).map(move |i| b.sequence(i)))
        .collect();
    let latents = if parts.iter().all(|p| p.latents.is_some()) {
        Some(parts.iter().flat_map(|p| p.latents.clone().unwrap()).collect())
    } else {
        None
    };
    SequenceBatch::from_sequences(&seqs, latents)
}
