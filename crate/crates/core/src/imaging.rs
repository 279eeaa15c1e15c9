//! Float images, binary masks, resampling, PNG I/O and a few drawing
//! helpers for overlays and plots.

use std::path::Path;

use image::{GrayImage, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image {path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("image {path} is {found:?}, expected {expected:?}")]
    Size {
        path: String,
        found: (u32, u32),
        expected: (u32, u32),
    },
}

/// Interleaved (HWC) intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Replicates a single-channel buffer into `channels` channels.
    pub fn from_gray(width: usize, height: usize, channels: usize, gray: &[f32]) -> Self {
        let mut data = Vec::with_capacity(gray.len() * channels);
        for &g in gray {
            data.extend(std::iter::repeat_n(g, channels));
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Mean over channels per pixel.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() / self.channels as f32)
            .collect()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Planar CHW copy, the layout network inputs use.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    /// Bilinear resampling of the continuous region `[x0, x1) × [y0, y1)`
    /// (pixel-edge coordinates) into a `width × height` image. Samples
    /// falling outside the source are clamped to the border.
    pub fn resample_region(&self, region: [f64; 4], width: usize, height: usize) -> Image {
        let [x0, y0, x1, y1] = region;
        let sx = (x1 - x0) / width as f64;
        let sy = (y1 - y0) / height as f64;
        let mut out = Image::new(width, height, self.channels);
        for oy in 0..height {
            let fy = (y0 + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y_lo = fy.floor() as usize;
            let y_hi = (y_lo + 1).min(self.height - 1);
            let ty = (fy - y_lo as f64) as f32;
            for ox in 0..width {
                let fx = (x0 + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x_lo = fx.floor() as usize;
                let x_hi = (x_lo + 1).min(self.width - 1);
                let tx = (fx - x_lo as f64) as f32;
                for c in 0..self.channels {
                    let top = self.get(x_lo, y_lo, c) * (1.0 - tx) + self.get(x_hi, y_lo, c) * tx;
                    let bot = self.get(x_lo, y_hi, c) * (1.0 - tx) + self.get(x_hi, y_hi, c) * tx;
                    out.set(ox, oy, c, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            let src = &self.data[i * self.channels..(i + 1) * self.channels];
            for c in 0..3 {
                px.0[c] = quantize(src[c.min(self.channels - 1)]);
            }
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        self.to_rgb8().save(path).map_err(|source| ImagingError::Codec {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path, channels: usize) -> Result<Image, ImagingError> {
        let img = image::open(path)
            .map_err(|source| ImagingError::Codec {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut out = Image::new(w as usize, h as usize, channels);
        for (i, px) in img.pixels().enumerate() {
            for c in 0..channels {
                out.data[i * channels + c] = px.0[c.min(2)] as f32 / 255.0;
            }
        }
        Ok(out)
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Source indices and overlap weights for area-averaging one axis from
/// `src` to `dst` samples.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let (lo, hi) = (d as f64 * scale, (d + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)) / scale;
                if overlap > 1e-12 {
                    w.push((s, overlap));
                }
                s += 1;
            }
            w
        })
        .collect()
}

/// Box-filter downsampling of a single-channel row-major buffer.
pub fn area_downsample(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    let wx = area_weights(sw, dw);
    let wy = area_weights(sh, dh);
    let mut rows = vec![0.0f64; sh * dw];
    for y in 0..sh {
        let line = &src[y * sw..(y + 1) * sw];
        for (dx, taps) in wx.iter().enumerate() {
            rows[y * dw + dx] = taps.iter().map(|&(s, w)| line[s] as f64 * w).sum();
        }
    }
    let mut out = vec![0.0f32; dw * dh];
    for (dy, taps) in wy.iter().enumerate() {
        for dx in 0..dw {
            out[dy * dw + dx] = taps.iter().map(|&(s, w)| rows[s * dw + dx] * w).sum::<f64>() as f32;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Whether the pixel containing continuous point `(u, v)` is set.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        if !(u >= 0.0 && v >= 0.0) {
            return false;
        }
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        x < self.width && y < self.height && self.get(x, y)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as isize;
        let mut horiz = Mask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let lo = (x as isize - r).max(0) as usize;
                let hi = (x as isize + r).min(self.width as isize - 1) as usize;
                horiz.data[y * self.width + x] = (lo..=hi).any(|xx| self.get(xx, y));
            }
        }
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height {
            let lo = (y as isize - r).max(0) as usize;
            let hi = (y as isize + r).min(self.height as isize - 1) as usize;
            for x in 0..self.width {
                out.data[y * self.width + x] = (lo..=hi).any(|yy| horiz.get(x, yy));
            }
        }
        out
    }

    /// `[x0, y0, x1, y1]` in pixel-edge coordinates, or `None` when empty.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let mut b: Option<[usize; 4]> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let e = b.get_or_insert([x, y, x, y]);
                    e[0] = e[0].min(x);
                    e[1] = e[1].min(y);
                    e[2] = e[2].max(x);
                    e[3] = e[3].max(y);
                }
            }
        }
        b.map(|[x0, y0, x1, y1]| [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64])
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImagingError> {
        let bytes = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions")
            .save(path)
            .map_err(|source| ImagingError::Codec {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn load_png(path: &Path) -> Result<Mask, ImagingError> {
        let img = image::open(path)
            .map_err(|source| ImagingError::Codec {
                path: path.display().to_string(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Mask {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p.0[0] >= 128).collect(),
        })
    }
}

/// Piecewise-linear "jet" colour map for `v ∈ [0, 1]`.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

pub fn put_pixel(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, image::Rgb(color));
    }
}

pub fn draw_cross(img: &mut RgbImage, x: f64, y: f64, arm: i64, color: [u8; 3]) {
    let (cx, cy) = (x.floor() as i64, y.floor() as i64);
    for d in -arm..=arm {
        put_pixel(img, cx + d, cy, color);
        put_pixel(img, cx, cy + d, color);
    }
}

pub fn draw_line(img: &mut RgbImage, from: (f64, f64), to: (f64, f64), color: [u8; 3]) {
    let steps = ((to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = from.0 + (to.0 - from.0) * t;
        let y = from.1 + (to.1 - from.1) * t;
        put_pixel(img, x.round() as i64, y.round() as i64, color);
    }
}
