//! Contact sheets: sampled (edge map, generated image) pairs in a grid.
//!
//! Each band of two rows shows up to `COLUMNS` items, edge maps above and the
//! generated images below.

use std::path::Path;

use image::imageops::{resize, FilterType};
use image::{GrayImage, Rgb, RgbImage};

use crate::dataset::{AnnotationRecord, Manifest};
use crate::imaging::{self, ImageIoError};

pub const COLUMNS: usize = 8;
pub const DEFAULT_TILE: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SheetLayout {
    pub columns: u32,
    pub rows: u32,
    pub tile: u32,
}

impl SheetLayout {
    pub fn for_items(n: usize, tile: u32) -> Self {
        let columns = n.clamp(1, COLUMNS) as u32;
        let bands = n.div_ceil(COLUMNS).max(1) as u32;
        Self { columns, rows: 2 * bands, tile }
    }

    pub fn width(&self) -> u32 {
        self.columns * self.tile
    }

    pub fn height(&self) -> u32 {
        self.rows * self.tile
    }
}

/// Evenly spaced picks of `n` ok records (all of them if fewer exist).
pub fn sample_records(manifest: &Manifest, n: usize) -> Vec<&AnnotationRecord> {
    let ok: Vec<&AnnotationRecord> = manifest.ok_records().collect();
    if n >= ok.len() {
        return ok;
    }
    (0..n).map(|i| ok[i * ok.len() / n]).collect()
}

fn tile_from(rgb: RgbImage, tile: u32) -> RgbImage {
    if rgb.width() == tile && rgb.height() == tile {
        rgb
    } else {
        resize(&rgb, tile, tile, FilterType::Triangle)
    }
}

fn load_tile_gray(path: &Path, tile: u32) -> Result<RgbImage, ImageIoError> {
    let (w, h, px) = imaging::load_gray(path)?;
    let gray = GrayImage::from_raw(w, h, px).ok_or(ImageIoError::Size { width: w, height: h })?;
    let rgb = RgbImage::from_fn(w, h, |x, y| {
        let v = gray.get_pixel(x, y).0[0];
        Rgb([v, v, v])
    });
    Ok(tile_from(rgb, tile))
}

fn load_tile_rgb(path: &Path, tile: u32) -> Result<RgbImage, ImageIoError> {
    let (w, h, px) = imaging::load_rgb(path)?;
    let rgb = RgbImage::from_raw(w, h, px).ok_or(ImageIoError::Size { width: w, height: h })?;
    Ok(tile_from(rgb, tile))
}

/// Builds the sheet for `records`, resolving their paths against `root`.
pub fn build_contact_sheet(records: &[&AnnotationRecord], root: &Path, tile: u32) -> Result<RgbImage, ImageIoError> {
    let layout = SheetLayout::for_items(records.len(), tile);
    let mut sheet = RgbImage::from_pixel(layout.width(), layout.height(), Rgb([255, 255, 255]));
    for (i, r) in records.iter().enumerate() {
        let col = (i % COLUMNS) as u32;
        let band = (i / COLUMNS) as u32;
        let (x, y) = (i64::from(col * tile), i64::from(2 * band * tile));
        if let Some(p) = &r.edge_map_path {
            image::imageops::replace(&mut sheet, &load_tile_gray(&root.join(p), tile)?, x, y);
        }
        if let Some(p) = &r.image_path {
            image::imageops::replace(&mut sheet, &load_tile_rgb(&root.join(p), tile)?, x, y + i64::from(tile));
        }
    }
    Ok(sheet)
}
