//! Per-frame annotation overlays for human inspection: mask pixels tinted by
//! object label with the bounding box outlined on top.

use std::path::Path;

use anyhow::Context;
use image::{Rgb, RgbImage};
use salient_core::SalientDataset;

const PALETTE: [[u8; 3]; 8] = [
    [230, 80, 80],
    [80, 180, 80],
    [90, 120, 230],
    [230, 200, 70],
    [200, 90, 210],
    [80, 200, 200],
    [240, 140, 60],
    [150, 150, 150],
];

const BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);

pub fn render_overlays(ds: &SalientDataset, dir: &Path) -> anyhow::Result<usize> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating overlay directory {}", dir.display()))?;
    let mut frames: Vec<u32> = ds.items.iter().map(|i| i.frame).collect();
    frames.sort_unstable();
    frames.dedup();

    for &frame in &frames {
        let mut img = RgbImage::from_pixel(ds.width, ds.height, BACKGROUND);
        for item in ds.items.iter().filter(|i| i.frame == frame) {
            let color = PALETTE[item.label as usize % PALETTE.len()];
            if let Some(mask) = &item.mask {
                let width = mask.width() as u64;
                for (start, len) in mask.spans() {
                    for offset in start..start + len {
                        let (row, col) = ((offset / width) as u32, (offset % width) as u32);
                        img.put_pixel(col, row, Rgb(color));
                    }
                }
            }
            draw_box_outline(&mut img, item.bbox.corners(), color);
        }
        let path = dir.join(format!("frame_{frame:06}.png"));
        img.save(&path)
            .with_context(|| format!("writing overlay {}", path.display()))?;
    }
    Ok(frames.len())
}

fn draw_box_outline(img: &mut RgbImage, corners: [f64; 4], color: [u8; 3]) {
    let clamp_x = |v: f64| (v.round().max(0.0) as u32).min(img.width().saturating_sub(1));
    let clamp_y = |v: f64| (v.round().max(0.0) as u32).min(img.height().saturating_sub(1));
    let (x0, y0) = (clamp_x(corners[0]), clamp_y(corners[1]));
    let (x1, y1) = (clamp_x(corners[2] - 1.0), clamp_y(corners[3] - 1.0));
    let bright = Rgb([
        color[0].saturating_add(40),
        color[1].saturating_add(40),
        color[2].saturating_add(40),
    ]);
    for x in x0..=x1 {
        img.put_pixel(x, y0, bright);
        img.put_pixel(x, y1, bright);
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, bright);
        img.put_pixel(x1, y, bright);
    }
}
