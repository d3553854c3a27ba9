//! PNG encode/decode helpers shared by the renderer, edge maps and the generation client.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("image file not found: {0}")]
    Missing(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("pixel buffer does not match {width}x{height}")]
    Size { width: u32, height: u32 },
}

fn io_err(path: &Path, source: std::io::Error) -> ImageIoError {
    if source.kind() == std::io::ErrorKind::NotFound {
        ImageIoError::Missing(path.to_path_buf())
    } else {
        ImageIoError::Io { path: path.to_path_buf(), source }
    }
}

pub fn encode_gray(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let buf: ImageBuffer<Luma<u8>, &[u8]> =
        ImageBuffer::from_raw(width, height, pixels).ok_or(ImageIoError::Size { width, height })?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_rgb(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let buf: ImageBuffer<Rgb<u8>, &[u8]> =
        ImageBuffer::from_raw(width, height, pixels).ok_or(ImageIoError::Size { width, height })?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decodes any PNG to 8-bit luma.
pub fn decode_gray(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma8();
    Ok((img.width(), img.height(), img.into_raw()))
}

/// Decodes any PNG to 8-bit RGB.
pub fn decode_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgb8();
    Ok((img.width(), img.height(), img.into_raw()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ImageIoError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, ImageIoError> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

pub fn save_gray(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<(), ImageIoError> {
    write_file(path, &encode_gray(width, height, pixels)?)
}

pub fn save_rgb(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<(), ImageIoError> {
    write_file(path, &encode_rgb(width, height, pixels)?)
}

pub fn load_gray(path: &Path) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    decode_gray(&read_file(path)?)
}

pub fn load_rgb(path: &Path) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    decode_rgb(&read_file(path)?)
}
