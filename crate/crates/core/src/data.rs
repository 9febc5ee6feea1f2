//! RGB-D dataset ingestion: discovery, preprocessing, augmentation, splits.
//!
//! Expected layout:
//!
//! ```text
//! <root>/<dataset>/RGB/<stem>.{jpg,jpeg,png}
//! <root>/<dataset>/depth/<stem>.png
//! <root>/<dataset>/GT/<stem>.png
//! <root>/<dataset>/train.txt   (optional, one stem per line)
//! <root>/<dataset>/test.txt    (optional)
//! ```
//!
//! Sample ids are `<dataset>/<stem>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::linear_taps;
use crate::{Error, Result};

pub const RGB_DIR: &str = "RGB";
pub const DEPTH_DIR: &str = "depth";
pub const GT_DIR: &str = "GT";
pub const TRAIN_LIST: &str = "train.txt";
pub const TEST_LIST: &str = "test.txt";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Preprocessed sample at a square resolution. Planes are row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSample {
    pub id: String,
    pub size: usize,
    /// `3 x size x size`, values in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// `3 x size x size`; the three channels are identical.
    pub depth: Vec<f32>,
    /// `size x size`, values in `{0, 1}`.
    pub gt: Vec<f32>,
}

impl RgbdSample {
    pub fn foreground_pixels(&self) -> usize {
        self.gt.iter().filter(|&&g| g > 0.5).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Entry {
    pub id: String,
    pub stem: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
}

/// The stem-matched entries of one dataset plus its declared split lists.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub dataset: String,
    pub entries: Vec<Entry>,
    pub train_stems: Option<Vec<String>>,
    pub test_stems: Option<Vec<String>>,
}

impl DatasetManifest {
    /// Scans `<root>/<dataset>`. Stems missing from any of the three folders are
    /// skipped with a warning.
    pub fn scan(root: &Path, dataset: &str) -> Result<Self> {
        let dir = root.join(dataset);
        let rgb = stems_in(&dir.join(RGB_DIR))?;
        let depth = stems_in(&dir.join(DEPTH_DIR))?;
        let gt = stems_in(&dir.join(GT_DIR))?;
        let mut entries = Vec::new();
        for (stem, rgb_path) in &rgb {
            match (depth.get(stem), gt.get(stem)) {
                (Some(d), Some(g)) => entries.push(Entry {
                    id: format!("{dataset}/{stem}"),
                    stem: stem.clone(),
                    rgb: rgb_path.clone(),
                    depth: d.clone(),
                    gt: g.clone(),
                }),
                _ => log::warn!("{dataset}: `{stem}` lacks a depth or GT file, skipped"),
            }
        }
        for stem in depth.keys().chain(gt.keys()) {
            if !rgb.contains_key(stem) {
                log::warn!("{dataset}: `{stem}` has no RGB image, skipped");
            }
        }
        if entries.is_empty() {
            return Err(Error::Data(format!("no complete samples under {}", dir.display())));
        }
        Ok(Self {
            dataset: dataset.to_string(),
            entries,
            train_stems: read_list(&dir.join(TRAIN_LIST))?,
            test_stems: read_list(&dir.join(TEST_LIST))?,
        })
    }

    pub fn scan_all(root: &Path, datasets: &[String]) -> Result<Vec<Self>> {
        datasets.iter().map(|d| Self::scan(root, d)).collect()
    }

    /// Manifest from stems alone (paths are nominal); used for split bookkeeping.
    pub fn from_stems(dataset: &str, stems: &[String], train_stems: Option<Vec<String>>) -> Self {
        let entries = stems
            .iter()
            .map(|s| Entry {
                id: format!("{dataset}/{s}"),
                stem: s.clone(),
                rgb: PathBuf::from(format!("{dataset}/{RGB_DIR}/{s}.jpg")),
                depth: PathBuf::from(format!("{dataset}/{DEPTH_DIR}/{s}.png")),
                gt: PathBuf::from(format!("{dataset}/{GT_DIR}/{s}.png")),
            })
            .collect();
        Self {
            dataset: dataset.to_string(),
            entries,
            train_stems,
            test_stems: None,
        }
    }
}

fn stems_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let read = fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?;
    for item in read {
        let path = item?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Data(format!(
                    "stem `{stem}` appears twice in {} ({} and {})",
                    dir.display(),
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

fn read_list(path: &Path) -> Result<Option<Vec<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
    ))
}

/// Assembles the train and test sets from per-dataset manifests.
///
/// A dataset's training subset is its `train.txt` list, or every entry when no
/// list exists. Its test subset is `test.txt` when present, otherwise every
/// remaining entry. Any id in both sets is an error.
pub fn make_split(manifests: &[DatasetManifest]) -> Result<(Vec<Entry>, Vec<Entry>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut seen = BTreeSet::new();
    for m in manifests {
        if !seen.insert(m.dataset.as_str()) {
            return Err(Error::Data(format!("dataset `{}` listed twice", m.dataset)));
        }
        let by_stem: BTreeMap<&str, &Entry> = m.entries.iter().map(|e| (e.stem.as_str(), e)).collect();
        let lookup = |stems: &[String], list: &str| -> Result<Vec<Entry>> {
            let mut unique = BTreeSet::new();
            stems
                .iter()
                .map(|s| {
                    if !unique.insert(s.as_str()) {
                        return Err(Error::Data(format!("{}/{list} lists `{s}` twice", m.dataset)));
                    }
                    by_stem
                        .get(s.as_str())
                        .map(|e| (*e).clone())
                        .ok_or_else(|| Error::Data(format!("{}/{list} names missing sample `{s}`", m.dataset)))
                })
                .collect()
        };
        let tr = match &m.train_stems {
            Some(stems) => lookup(stems, TRAIN_LIST)?,
            None => m.entries.clone(),
        };
        let te = match &m.test_stems {
            Some(stems) => lookup(stems, TEST_LIST)?,
            None => {
                let used: BTreeSet<&str> = tr.iter().map(|e| e.stem.as_str()).collect();
                m.entries.iter().filter(|e| !used.contains(e.stem.as_str())).cloned().collect()
            }
        };
        train.extend(tr);
        test.extend(te);
    }
    let train_ids: BTreeSet<&str> = train.iter().map(|e| e.id.as_str()).collect();
    let overlap: Vec<&str> = test.iter().map(|e| e.id.as_str()).filter(|id| train_ids.contains(id)).collect();
    if !overlap.is_empty() {
        return Err(Error::Data(format!("ids in both train and test sets: {overlap:?}")));
    }
    Ok((train, test))
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and preprocesses one entry at `size x size`.
pub fn load_sample(entry: &Entry, size: usize) -> Result<RgbdSample> {
    let rgb = open(&entry.rgb)?;
    let depth = open(&entry.depth)?;
    let gt = open(&entry.gt)?;
    preprocess(&entry.id, &rgb, &depth, &gt, size)
}

pub fn load_samples(entries: &[Entry], size: usize) -> Result<Vec<RgbdSample>> {
    entries.iter().map(|e| load_sample(e, size)).collect()
}

/// Resizes, normalizes and binarizes decoded images.
///
/// RGB and depth use bilinear resampling; GT uses nearest-neighbour and is
/// thresholded at 0.5. Depth is min-max normalized per image (a constant map
/// becomes all zeros) and copied to three channels.
pub fn preprocess(id: &str, rgb: &DynamicImage, depth: &DynamicImage, gt: &DynamicImage, size: usize) -> Result<RgbdSample> {
    if size == 0 {
        return Err(Error::config("target size must be positive"));
    }
    let dims = [rgb.width(), rgb.height()];
    for (what, img) in [("depth", depth), ("GT", gt)] {
        if [img.width(), img.height()] != dims {
            return Err(Error::Data(format!(
                "{id}: {what} is {}x{} but RGB is {}x{}",
                img.width(),
                img.height(),
                dims[0],
                dims[1]
            )));
        }
    }
    let (w, h) = (dims[0] as usize, dims[1] as usize);

    let rgb_img = rgb.to_rgb32f();
    let mut rgb_out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane: Vec<f32> = rgb_img.pixels().map(|p| p[c]).collect();
        rgb_out.extend(resize_plane_bilinear(&plane, w, h, size, size));
    }

    let raw: Vec<f32> = depth.to_luma32f().pixels().map(|p| p[0]).collect();
    let mut plane = resize_plane_bilinear(&raw, w, h, size, size);
    normalize_min_max(&mut plane);
    let mut depth_out = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        depth_out.extend_from_slice(&plane);
    }

    let raw_gt: Vec<f32> = gt.to_luma32f().pixels().map(|p| p[0]).collect();
    let gt_out: Vec<f32> = resize_plane_nearest(&raw_gt, w, h, size, size)
        .into_iter()
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    if !gt_out.iter().any(|&g| g > 0.0) {
        log::warn!("{id}: ground truth has no foreground pixels");
    }

    Ok(RgbdSample {
        id: id.to_string(),
        size,
        rgb: rgb_out,
        depth: depth_out,
        gt: gt_out,
    })
}

/// Maps values affinely onto `[0, 1]`; constant input becomes zeros.
pub fn normalize_min_max(plane: &mut [f32]) {
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    for v in plane.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
}

/// Bilinear resize of a row-major plane (half-pixel centers, no corner alignment).
pub fn resize_plane_bilinear(src: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    if (w, h) == (out_w, out_h) {
        return src.to_vec();
    }
    let xs = linear_taps(w, out_w);
    let ys = linear_taps(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for ty in &ys {
        for tx in &xs {
            let at = |y: usize, x: usize| f64::from(src[y * w + x]);
            let top = (1.0 - tx.frac) * at(ty.lo, tx.lo) + tx.frac * at(ty.lo, tx.hi);
            let bottom = (1.0 - tx.frac) * at(ty.hi, tx.lo) + tx.frac * at(ty.hi, tx.hi);
            out.push(((1.0 - ty.frac) * top + ty.frac * bottom) as f32);
        }
    }
    out
}

/// Nearest-neighbour resize: `src = floor((dst + 0.5) * in / out)`.
pub fn resize_plane_nearest(src: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let pick = |dst: usize, n: usize, out: usize| (((dst as f64 + 0.5) * n as f64 / out as f64) as usize).min(n - 1);
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = pick(y, h, out_h);
        for x in 0..out_w {
            out.push(src[sy * w + pick(x, w, out_w)]);
        }
    }
    out
}

/// Joint geometric transform: optional horizontal flip, then counter-clockwise
/// rotation by `quarter_turns * 90` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip: false,
        quarter_turns: 0,
    };

    /// Flip with probability 0.5, rotation uniform over {0, 90, 180, 270}.
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            flip: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        }
    }

    /// Applies the transform to one square `n x n` plane.
    pub fn apply_plane(&self, plane: &[f32], n: usize) -> Vec<f32> {
        let mut cur = plane.to_vec();
        if self.flip {
            for row in cur.chunks_mut(n) {
                row.reverse();
            }
        }
        for _ in 0..self.quarter_turns % 4 {
            let mut next = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    // counter-clockwise: (y, x) <- (x, n-1-y)
                    next[y * n + x] = cur[x * n + (n - 1 - y)];
                }
            }
            cur = next;
        }
        cur
    }

    pub fn apply(&self, s: &RgbdSample) -> RgbdSample {
        let n = s.size;
        let per_channel = |data: &[f32]| -> Vec<f32> {
            data.chunks(n * n).flat_map(|p| self.apply_plane(p, n)).collect()
        };
        RgbdSample {
            id: s.id.clone(),
            size: n,
            rgb: per_channel(&s.rgb),
            depth: per_channel(&s.depth),
            gt: self.apply_plane(&s.gt, n),
        }
    }
}

pub fn augment(sample: &RgbdSample, rng: &mut impl Rng) -> RgbdSample {
    Transform::sample(rng).apply(sample)
}

/// A stacked mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(N, 3, S, S)`
    pub rgb: Tensor,
    /// `(N, 3, S, S)`
    pub depth: Tensor,
    /// `(N, 1, S, S)`
    pub gt: Tensor,
}

pub fn make_batch(samples: &[&RgbdSample], device: &Device, dtype: DType) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let s = first.size;
    if let Some(odd) = samples.iter().find(|x| x.size != s) {
        return Err(Error::Data(format!("{} is {}px but {} is {s}px", odd.id, odd.size, first.id)));
    }
    let n = samples.len();
    let stack = |f: &dyn Fn(&RgbdSample) -> &[f32], c: usize| -> Result<Tensor> {
        let flat: Vec<f32> = samples.iter().flat_map(|x| f(x).iter().copied()).collect();
        Ok(Tensor::from_vec(flat, (n, c, s, s), device)?.to_dtype(dtype)?)
    };
    Ok(Batch {
        ids: samples.iter().map(|x| x.id.clone()).collect(),
        rgb: stack(&|x| &x.rgb, 3)?,
        depth: stack(&|x| &x.depth, 3)?,
        gt: stack(&|x| &x.gt, 1)?,
    })
}

/// Synthetic scene: a bright ellipse in front of a textured background. The
/// object is nearer (brighter) in depth than the ramp behind it.
pub fn synthetic_images(width: u32, height: u32, rng: &mut impl Rng) -> (RgbImage, ImageBuffer<Luma<u16>, Vec<u16>>, GrayImage) {
    let (w, h) = (width as f64, height as f64);
    let cx = rng.random_range(0.3..0.7) * w;
    let cy = rng.random_range(0.3..0.7) * h;
    let rx = rng.random_range(0.15..0.3) * w;
    let ry = rng.random_range(0.15..0.3) * h;
    let fg: [f64; 3] = [rng.random_range(0.6..1.0), rng.random_range(0.0..0.4), rng.random_range(0.2..0.6)];
    let bg: [f64; 3] = [rng.random_range(0.0..0.4), rng.random_range(0.4..0.8), rng.random_range(0.3..0.7)];
    let inside = |x: u32, y: u32| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    };
    let mut rgb = RgbImage::new(width, height);
    let mut depth = ImageBuffer::<Luma<u16>, Vec<u16>>::new(width, height);
    let mut gt = GrayImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let obj = inside(x, y);
            let base = if obj { fg } else { bg };
            let px: [u8; 3] = std::array::from_fn(|c| {
                let v = base[c] + rng.random_range(-0.08..0.08);
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            rgb.put_pixel(x, y, Rgb(px));
            let d = if obj { 0.8 } else { 0.1 + 0.3 * y as f64 / h } + rng.random_range(-0.02..0.02);
            depth.put_pixel(x, y, Luma([(d.clamp(0.0, 1.0) * 65535.0).round() as u16]));
            gt.put_pixel(x, y, Luma([if obj { 255 } else { 0 }]));
        }
    }
    (rgb, depth, gt)
}

/// In-memory synthetic samples, preprocessed at `size`.
pub fn synthetic_samples(dataset: &str, count: usize, size: usize, seed: u64) -> Result<Vec<RgbdSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (rgb, depth, gt) = synthetic_images(size as u32, size as u32, &mut rng);
            preprocess(
                &format!("{dataset}/{i:04}"),
                &DynamicImage::ImageRgb8(rgb),
                &DynamicImage::ImageLuma16(depth),
                &DynamicImage::ImageLuma8(gt),
                size,
            )
        })
        .collect()
}

/// Writes a synthetic dataset in the standard layout. The first `train_count`
/// stems go to `train.txt`, the rest to `test.txt`.
pub fn write_synthetic_dataset(
    root: &Path,
    dataset: &str,
    count: usize,
    train_count: usize,
    size: u32,
    seed: u64,
) -> Result<DatasetManifest> {
    if train_count > count {
        return Err(Error::config("train_count exceeds count"));
    }
    let dir = root.join(dataset);
    for sub in [RGB_DIR, DEPTH_DIR, GT_DIR] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let stem = format!("{i:04}");
        let (rgb, depth, gt) = synthetic_images(size, size, &mut rng);
        let save = |path: PathBuf, result: image::ImageResult<()>| {
            result.map_err(|source| Error::Image { path, source })
        };
        let p = dir.join(RGB_DIR).join(format!("{stem}.png"));
        save(p.clone(), rgb.save(&p))?;
        let p = dir.join(DEPTH_DIR).join(format!("{stem}.png"));
        save(p.clone(), depth.save(&p))?;
        let p = dir.join(GT_DIR).join(format!("{stem}.png"));
        save(p.clone(), gt.save(&p))?;
        stems.push(stem);
    }
    fs::write(dir.join(TRAIN_LIST), stems[..train_count].join("\n") + "\n")?;
    fs::write(dir.join(TEST_LIST), stems[train_count..].join("\n") + "\n")?;
    DatasetManifest::scan(root, dataset)
}
