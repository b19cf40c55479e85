//! 8-bit grayscale rasters. Ink is 0, background is 255.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const INK: u8 = 0;
pub const BACKGROUND: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Raster {
    /// A blank (all background) raster.
    pub fn blank(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            pixels: vec![BACKGROUND; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Contract(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel value, or background outside the raster.
    #[inline]
    pub fn get_or_background(&self, x: i64, y: i64) -> u8 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            BACKGROUND
        } else {
            self.get(x as usize, y as usize)
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Fills the clipped rectangle `[x0, x1) x [y0, y1)`.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, v: u8) {
        let xa = x0.clamp(0, self.width as i64) as usize;
        let xb = x1.clamp(0, self.width as i64) as usize;
        let ya = y0.clamp(0, self.height as i64) as usize;
        let yb = y1.clamp(0, self.height as i64) as usize;
        for y in ya..yb {
            self.pixels[y * self.width + xa..y * self.width + xb].fill(v);
        }
    }

    /// Copies a `size x size` window at `(x0, y0)`, padding with background.
    pub fn crop_padded(&self, x0: usize, y0: usize, size: usize) -> Raster {
        let mut out = Raster::blank(size, size);
        for y in 0..size {
            let sy = y0 + y;
            if sy >= self.height {
                break;
            }
            let n = size.min(self.width.saturating_sub(x0));
            let src = &self.pixels[sy * self.width + x0..sy * self.width + x0 + n];
            out.pixels[y * size..y * size + n].copy_from_slice(src);
        }
        out
    }

    /// Network input: ink maps to 1, background to 0.
    pub fn normalized(&self) -> Array2<f32> {
        Array2::from_shape_fn((self.height, self.width), |(y, x)| {
            1.0 - self.get(x, y) as f32 / 255.0
        })
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("raster buffer matches its dimensions")
    }

    /// Loads PNG or PGM (any format the decoder recognizes), converted to 8-bit gray.
    pub fn load(path: impl AsRef<Path>) -> Result<Raster> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        Ok(Raster {
            width: w as usize,
            height: h as usize,
            pixels: img.into_raw(),
        })
    }

    /// Writes an 8-bit grayscale PNG, or binary PGM (P5) when the extension is `pgm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_pgm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        let image_err = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        if is_pgm {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let enc = PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
            enc.write_image(
                &self.pixels,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L8,
            )
            .map_err(image_err)
        } else {
            self.to_gray_image().save(path).map_err(image_err)
        }
    }

    /// PNG bytes of the raster, for embedding.
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        image::codecs::png::PngEncoder::new(&mut buf)
            .write_image(
                &self.pixels,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L8,
            )
            .map_err(|source| Error::Image {
                path: "<memory>".into(),
                source,
            })?;
        Ok(buf)
    }
}
