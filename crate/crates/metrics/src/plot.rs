//! PR-curve raster plot.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::report::MetricReport;
use crate::{MetricError, Result};

const SIZE: u32 = 512;
const MARGIN: u32 = 48;
const PALETTE: [[u8; 3]; 6] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

/// Renders one curve per dataset: recall on the x axis, precision on y, both
/// over `[0, 1]`, with grid lines every 0.1.
pub fn render_pr_plot(report: &MetricReport) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let span = (SIZE - 2 * MARGIN) as f32;
    let to_px = |r: f64, p: f64| {
        (
            MARGIN as f32 + r as f32 * span,
            (SIZE - MARGIN) as f32 - p as f32 * span,
        )
    };
    for i in 1..10 {
        let v = i as f64 / 10.0;
        let grid = Rgb([225, 225, 225]);
        draw_line_segment_mut(&mut img, to_px(v, 0.0), to_px(v, 1.0), grid);
        draw_line_segment_mut(&mut img, to_px(0.0, v), to_px(1.0, v), grid);
    }
    draw_hollow_rect_mut(
        &mut img,
        Rect::at(MARGIN as i32, MARGIN as i32).of_size(SIZE - 2 * MARGIN + 1, SIZE - 2 * MARGIN + 1),
        Rgb([0, 0, 0]),
    );
    for (i, d) in report.datasets.values().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for w in d.pr_points.windows(2) {
            draw_line_segment_mut(
                &mut img,
                to_px(w[0].recall, w[0].precision),
                to_px(w[1].recall, w[1].precision),
                color,
            );
        }
        // Legend swatch, top-left, one row per dataset.
        let y = (MARGIN / 2) as f32 + 6.0 * i as f32;
        draw_line_segment_mut(&mut img, (MARGIN as f32, y), (MARGIN as f32 + 24.0, y), color);
    }
    img
}

pub fn save_pr_plot(report: &MetricReport, path: &Path) -> Result<()> {
    render_pr_plot(report).save(path).map_err(|source| MetricError::Image {
        path: path.to_path_buf(),
        source,
    })
}
