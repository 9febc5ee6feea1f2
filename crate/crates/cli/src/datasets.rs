//! Dataset selection and saliency-map output shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cdinet::data::{self, DatasetManifest, Entry, RGB_DIR};
use image::{GrayImage, ImageBuffer, Luma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

/// Names given on the command line, or every subdirectory of `root` that has
/// an RGB folder.
pub fn dataset_names(root: &Path, given: &[String]) -> anyhow::Result<Vec<String>> {
    if !given.is_empty() {
        return Ok(given.to_vec());
    }
    let mut names = Vec::new();
    for item in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = item?.path();
        if path.join(RGB_DIR).is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        bail!("no datasets found under {}", root.display());
    }
    Ok(names)
}

pub fn manifests(root: &Path, given: &[String]) -> anyhow::Result<Vec<DatasetManifest>> {
    Ok(DatasetManifest::scan_all(root, &dataset_names(root, given)?)?)
}

/// Entries of one dataset for the requested split.
pub fn select(manifest: &DatasetManifest, split: Split) -> anyhow::Result<Vec<Entry>> {
    Ok(match split {
        Split::All => manifest.entries.clone(),
        Split::Train => data::make_split(std::slice::from_ref(manifest))?.0,
        Split::Test => data::make_split(std::slice::from_ref(manifest))?.1,
    })
}

/// Resizes a `size x size` map to the entry's RGB resolution and writes it
/// as an 8-bit PNG named by stem.
pub fn write_map(map: &[f32], size: usize, entry: &Entry, dir: &Path) -> anyhow::Result<PathBuf> {
    let (w, h) = image::image_dimensions(&entry.rgb).with_context(|| format!("reading {}", entry.rgb.display()))?;
    let side = size as u32;
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(side, side, map.to_vec()).context("map size does not match image size")?;
    let buf = if (w, h) == (side, side) {
        buf
    } else {
        image::imageops::resize(&buf, w, h, image::imageops::FilterType::Triangle)
    };
    let gray = GrayImage::from_fn(w, h, |x, y| Luma([(buf.get_pixel(x, y)[0].clamp(0.0, 1.0) * 255.0).round() as u8]));
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.png", entry.stem));
    gray.save(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
