//! 8-bit images: PNM decode/encode, resampling, crops, overlays and the
//! detection JSON format.

mod json;
mod overlay;
mod pnm;

pub use json::{detections_to_json, parse_detections_json, parse_results_json, results_to_json, ImageDetections, JsonError};
pub use overlay::draw_overlay;
pub use pnm::{read_pnm, read_pnm_bytes, write_pnm, write_pnm_bytes, PnmError};

use crate::geometry::CropPlan;

/// Row-major interleaved u8 pixels, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, PnmError> {
        if channels != 1 && channels != 3 {
            return Err(PnmError::UnsupportedChannels(channels));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(PnmError::BadHeader(format!(
                "{width}x{height}x{channels} image cannot hold {} bytes",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Panics when `channels` is not 1 or 3 or an extent is zero.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Image::new(width, height, channels, vec![value; width * height * channels]).expect("valid image extents")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn min_extent(&self) -> usize {
        self.width.min(self.height)
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Gray images are replicated into three channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            channels: 3,
            data,
            ..*self
        }
    }

    /// Integer luma, `(77 R + 150 G + 29 B + 128) >> 8`.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| ((77 * p[0] as u32 + 150 * p[1] as u32 + 29 * p[2] as u32 + 128) >> 8) as u8)
            .collect();
        Image {
            channels: 1,
            data,
            ..*self
        }
    }

    /// Copies out a crop, zero-filling whatever falls outside the image.
    pub fn crop(&self, plan: &CropPlan) -> Image {
        let c = self.channels;
        let mut out = Image::filled(plan.width, plan.height, c, 0);
        for row in 0..plan.src_h {
            let src = ((plan.src_y + row) * self.width + plan.src_x) * c;
            let dst = ((plan.dst_y + row) * plan.width + plan.dst_x) * c;
            out.data[dst..dst + plan.src_w * c].copy_from_slice(&self.data[src..src + plan.src_w * c]);
        }
        out
    }
}

/// Bilinear resampling with half-pixel centers: source coordinate
/// `(dst + 0.5)·(in/out) − 0.5`, clamped to the image. Values are not rounded.
pub fn resize_bilinear_values(image: &Image, out_h: usize, out_w: usize) -> Vec<f32> {
    let c = image.channels;
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let ratio = inp as f32 / out as f32;
        (0..out)
            .map(|d| {
                let s = ((d as f32 + 0.5) * ratio - 0.5).clamp(0.0, (inp - 1) as f32);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f32)
            })
            .collect()
    };
    let xs = taps(out_w, image.width);
    let ys = taps(out_h, image.height);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p00 = image.get(x0, y0, ch) as f32;
                let p01 = image.get(x1, y0, ch) as f32;
                let p10 = image.get(x0, y1, ch) as f32;
                let p11 = image.get(x1, y1, ch) as f32;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

/// Bilinear resize, rounded back to u8.
pub fn resize_bilinear(image: &Image, out_h: usize, out_w: usize) -> Image {
    if out_h == image.height && out_w == image.width {
        return image.clone();
    }
    let data = resize_bilinear_values(image, out_h, out_w)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Image {
        width: out_w,
        height: out_h,
        channels: image.channels,
        data,
    }
}
