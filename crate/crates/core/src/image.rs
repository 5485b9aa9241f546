//! RGB face images with a working luminance channel.

use crate::error::{Error, Result};
use crate::sh::LuminanceImage;

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const CHROMA_EPS: f64 = 1e-9;

pub fn luma(rgb: [f64; 3]) -> f64 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// An RGB image in `[0, 1]` plus its luminance and chroma.
///
/// Chroma is stored as the per-channel ratio `rgb / luminance`, so a new
/// luminance scales all three channels by the same shading factor. Black
/// pixels carry neutral chroma `(1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    width: usize,
    height: usize,
    rgb: Vec<[f64; 3]>,
    luminance: Vec<f64>,
    chroma: Vec<[f64; 3]>,
}

impl FaceImage {
    pub fn from_rgb(width: usize, height: usize, rgb: Vec<[f64; 3]>) -> Result<Self> {
        if rgb.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", width * height),
                actual: format!("{}", rgb.len()),
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::precondition("image has zero size"));
        }
        let mut clean = Vec::with_capacity(rgb.len());
        for (i, p) in rgb.into_iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("pixel {i}")));
            }
            clean.push(p.map(|c| c.clamp(0.0, 1.0)));
        }
        let luminance: Vec<f64> = clean.iter().map(|&p| luma(p)).collect();
        let chroma = clean
            .iter()
            .zip(luminance.iter())
            .map(|(p, &y)| {
                if y > CHROMA_EPS {
                    [p[0] / y, p[1] / y, p[2] / y]
                } else {
                    [1.0, 1.0, 1.0]
                }
            })
            .collect();
        Ok(FaceImage {
            width,
            height,
            rgb: clean,
            luminance,
            chroma,
        })
    }

    /// Gray image whose three channels equal the given luminance.
    pub fn from_luminance(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        FaceImage::from_rgb(width, height, values.iter().map(|&v| [v, v, v]).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.luminance.len()
    }

    pub fn rgb(&self) -> &[[f64; 3]] {
        &self.rgb
    }

    pub fn luminance(&self) -> &[f64] {
        &self.luminance
    }

    pub fn chroma(&self) -> &[[f64; 3]] {
        &self.chroma
    }

    pub fn luminance_image(&self) -> LuminanceImage {
        LuminanceImage {
            width: self.width,
            height: self.height,
            values: self.luminance.clone(),
        }
    }

    /// Same image with a replaced luminance channel (clamped to `[0, 1]`);
    /// chroma is reattached and RGB rebuilt from it.
    pub fn with_luminance(&self, luminance: Vec<f64>) -> Result<Self> {
        if luminance.len() != self.luminance.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", self.luminance.len()),
                actual: format!("{}", luminance.len()),
            });
        }
        let luminance: Vec<f64> = luminance.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let rgb = reconstruct(&luminance, &self.chroma);
        Ok(FaceImage {
            width: self.width,
            height: self.height,
            rgb,
            luminance,
            chroma: self.chroma.clone(),
        })
    }

    /// 8-bit quantized luminance, row-major.
    pub fn luminance_u8(&self) -> Vec<u8> {
        self.luminance.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

pub fn reconstruct(luminance: &[f64], chroma: &[[f64; 3]]) -> Vec<[f64; 3]> {
    luminance
        .iter()
        .zip(chroma.iter())
        .map(|(&y, c)| [(y * c[0]).clamp(0.0, 1.0), (y * c[1]).clamp(0.0, 1.0), (y * c[2]).clamp(0.0, 1.0)])
        .collect()
}

/// Mean absolute luminance difference; the image-change proxy reported by
/// the harness.
pub fn mean_abs_change(a: &FaceImage, b: &FaceImage) -> f64 {
    let n = a.luminance.len().max(1) as f64;
    a.luminance
        .iter()
        .zip(b.luminance.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n
}
