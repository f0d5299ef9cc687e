//! PNG / PNM loading and 8-bit PNG writing.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use super::{to_grayscale, GrayImage, RasterError, Result, RgbImage};

fn decode_err(path: &Path, e: impl std::fmt::Display) -> RasterError {
    RasterError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Loads an 8- or 16-bit grayscale or RGB(A) raster and converts it to a
/// normalized grayscale image. Alpha is ignored.
pub fn load_gray(path: &Path, spacing_um: f64) -> Result<GrayImage> {
    let reader = ImageReader::open(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = reader
        .with_guessed_format()
        .map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let decoded = reader.decode().map_err(|e| decode_err(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);

    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let data = buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 255.0)
                .collect();
            GrayImage::new(w, h, data, spacing_um)
        }
        DynamicImage::ImageLumaA8(buf) => {
            let data = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            GrayImage::new(w, h, data, spacing_um)
        }
        DynamicImage::ImageLuma16(buf) => {
            let data = buf
                .into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect();
            GrayImage::new(w, h, data, spacing_um)
        }
        DynamicImage::ImageLumaA16(buf) => {
            let data = buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            GrayImage::new(w, h, data, spacing_um)
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let rgb = decoded.to_rgb16();
            let data = rgb
                .pixels()
                .map(|p| p.0.map(|c| c as f64 / 65535.0))
                .collect();
            to_grayscale(&RgbImage::new(w, h, data)?, spacing_um)
        }
        other => {
            let rgb = other.to_rgb8();
            let data = rgb
                .pixels()
                .map(|p| p.0.map(|c| c as f64 / 255.0))
                .collect();
            to_grayscale(&RgbImage::new(w, h, data)?, spacing_um)
        }
    }
}

fn quantize(img: &GrayImage) -> image::GrayImage {
    let raw = img
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions")
}

/// Encodes the image as an 8-bit grayscale PNG.
pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    quantize(img)
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding does not fail");
    out.into_inner()
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(img)).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}
