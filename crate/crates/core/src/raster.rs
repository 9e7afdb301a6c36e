//! 8-bit grayscale images and decoding.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit intensity grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image has zero area".into()));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Nearest-neighbour lookup with coordinates clamped to the image.
    /// Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> u8 {
        let xi = clamp_index(x, self.width);
        let yi = clamp_index(y, self.height);
        self.data[yi * self.width as usize + xi]
    }

    pub fn to_luma8(&self) -> ::image::GrayImage {
        ::image::GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer size matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8()
            .save_with_format(path, ::image::ImageFormat::Png)
            .map_err(|e| match e {
                ::image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Decode {
                    path: path.to_path_buf(),
                    message: other.to_string(),
                },
            })
    }
}

#[inline]
fn clamp_index(v: f64, len: u32) -> usize {
    let f = v.floor();
    if !(f > 0.0) {
        0
    } else if f >= (len - 1) as f64 {
        (len - 1) as usize
    } else {
        f as usize
    }
}

/// Rec.601 luma, rounded half-up.
pub fn rec601_luma(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}

/// Decodes a PNG or JPEG file into grayscale intensities.
pub fn load_image_grayscale(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grayscale(&bytes).map_err(|message| Error::Decode {
        path: path.to_path_buf(),
        message,
    })
}

pub fn decode_grayscale(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let format = ::image::guess_format(bytes).map_err(|e| e.to_string())?;
    if !matches!(format, ::image::ImageFormat::Png | ::image::ImageFormat::Jpeg) {
        return Err(format!("unsupported image format {format:?}"));
    }
    let decoded =
        ::image::load_from_memory_with_format(bytes, format).map_err(|e| e.to_string())?;
    let (width, height, data) = match decoded {
        ::image::DynamicImage::ImageLuma8(g) => (g.width(), g.height(), g.into_raw()),
        other => {
            let rgb = other.to_rgb8();
            let data = rgb
                .pixels()
                .map(|p| rec601_luma(p.0[0], p.0[1], p.0[2]))
                .collect();
            (rgb.width(), rgb.height(), data)
        }
    };
    GrayImage::new(width, height, data).map_err(|e| e.to_string())
}
