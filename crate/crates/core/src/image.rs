//! Minimal float image container plus the sampling and resizing primitives
//! the synthesis and extraction paths need.
//!
//! Pixel centers sit at integer coordinates; intensities live in [0, 1].

use crate::error::{Error, Result};
use std::path::Path;

/// Interleaved H x W x C image with f32 intensities in [0, 1].
/// Channels is 1 (grayscale) or 3 (RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        ImageBuf {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut img = ImageBuf::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// True if the continuous coordinate can be bilinearly sampled.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear sample of channel `c` at a continuous coordinate.
    /// Caller must ensure `contains(x, y)`.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(x0, y0, c) as f64;
        let v10 = self.get(x1, y0, c) as f64;
        let v01 = self.get(x0, y1, c) as f64;
        let v11 = self.get(x1, y1, c) as f64;
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bot = v01 * (1.0 - fx) + v11 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    }

    /// Grayscale copy (ITU-R 601 luma for RGB inputs).
    pub fn to_gray(&self) -> ImageBuf {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = ImageBuf::new(self.width, self.height, 1);
        for i in 0..self.width * self.height {
            let r = self.data[i * 3] as f64;
            let g = self.data[i * 3 + 1] as f64;
            let b = self.data[i * 3 + 2] as f64;
            out.data[i] = (0.299 * r + 0.587 * g + 0.114 * b) as f32;
        }
        out
    }

    /// Quantize all intensities onto the 16-bit grid used by the on-disk
    /// frame format, so disk round-trips are exact.
    pub fn quantize_u16(&mut self) {
        for v in &mut self.data {
            *v = (f64::from(*v).clamp(0.0, 1.0) * 65535.0).round() as f32 / 65535.0;
        }
    }

    /// Bilinear resize (pixel centers aligned, edge-clamped).
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> ImageBuf {
        assert!(new_width > 0 && new_height > 0);
        let mut out = ImageBuf::new(new_width, new_height, 1);
        out.channels = self.channels;
        out.data = vec![0.0; new_width * new_height * self.channels];
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        for y in 0..new_height {
            let yin = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for x in 0..new_width {
                let xin = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                for c in 0..self.channels {
                    let v = self.sample_bilinear(xin, yin, c);
                    out.data[(y * new_width + x) * self.channels + c] = v;
                }
            }
        }
        out
    }

    /// 2x2 box downsample (dims halved, rounding up on odd dims).
    pub fn box_downsample_2x(&self) -> ImageBuf {
        let nw = self.width.div_ceil(2);
        let nh = self.height.div_ceil(2);
        let mut out = ImageBuf::new(nw, nh, 1);
        out.channels = self.channels;
        out.data = vec![0.0; nw * nh * self.channels];
        for y in 0..nh {
            for x in 0..nw {
                for c in 0..self.channels {
                    let x0 = 2 * x;
                    let y0 = 2 * y;
                    let x1 = (x0 + 1).min(self.width - 1);
                    let y1 = (y0 + 1).min(self.height - 1);
                    let s = self.get(x0, y0, c) as f64
                        + self.get(x1, y0, c) as f64
                        + self.get(x0, y1, c) as f64
                        + self.get(x1, y1, c) as f64;
                    out.data[(y * nw + x) * self.channels + c] = (s * 0.25) as f32;
                }
            }
        }
        out
    }

    /// Load from disk; any format the `image` crate decodes. Gray stays
    /// single-channel, everything else becomes RGB. Values scaled to [0, 1].
    pub fn load(path: &Path) -> Result<ImageBuf> {
        let dyn_img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(match dyn_img {
            image::DynamicImage::ImageLuma8(img) => {
                let (w, h) = img.dimensions();
                let mut out = ImageBuf::new(w as usize, h as usize, 1);
                for (i, p) in img.pixels().enumerate() {
                    out.data[i] = p.0[0] as f32 / 255.0;
                }
                out
            }
            image::DynamicImage::ImageLuma16(img) => {
                let (w, h) = img.dimensions();
                let mut out = ImageBuf::new(w as usize, h as usize, 1);
                for (i, p) in img.pixels().enumerate() {
                    out.data[i] = p.0[0] as f32 / 65535.0;
                }
                out
            }
            other => {
                let img = other.to_rgb16();
                let (w, h) = img.dimensions();
                let mut out = ImageBuf::new(w as usize, h as usize, 3);
                for (i, p) in img.pixels().enumerate() {
                    out.data[i * 3] = p.0[0] as f32 / 65535.0;
                    out.data[i * 3 + 1] = p.0[1] as f32 / 65535.0;
                    out.data[i * 3 + 2] = p.0[2] as f32 / 65535.0;
                }
                out
            }
        })
    }

    /// Save as 16-bit PNG (lossless for values on the 1/65535 grid).
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let to_u16 = |v: f32| (f64::from(v).clamp(0.0, 1.0) * 65535.0).round() as u16;
        let res = if self.channels == 1 {
            let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(
                self.width as u32,
                self.height as u32,
                |x, y| image::Luma([to_u16(self.get(x as usize, y as usize, 0))]),
            );
            img.save(path)
        } else {
            let img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_fn(
                self.width as u32,
                self.height as u32,
                |x, y| {
                    image::Rgb([
                        to_u16(self.get(x as usize, y as usize, 0)),
                        to_u16(self.get(x as usize, y as usize, 1)),
                        to_u16(self.get(x as usize, y as usize, 2)),
                    ])
                },
            );
            img.save(path)
        };
        res.map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Save as 8-bit PNG (for confidence-map dumps and preview output).
    pub fn save_png8(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| (f64::from(v).clamp(0.0, 1.0) * 255.0).round() as u8;
        let res = if self.channels == 1 {
            let img = image::ImageBuffer::<image::Luma<u8>, Vec<u8>>::from_fn(
                self.width as u32,
                self.height as u32,
                |x, y| image::Luma([to_u8(self.get(x as usize, y as usize, 0))]),
            );
            img.save(path)
        } else {
            let img = image::ImageBuffer::<image::Rgb<u8>, Vec<u8>>::from_fn(
                self.width as u32,
                self.height as u32,
                |x, y| {
                    image::Rgb([
                        to_u8(self.get(x as usize, y as usize, 0)),
                        to_u8(self.get(x as usize, y as usize, 1)),
                        to_u8(self.get(x as usize, y as usize, 2)),
                    ])
                },
            );
            img.save(path)
        };
        res.map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
