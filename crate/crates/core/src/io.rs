//! Image, normal-map, light and manifest files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage, Rgba};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FaceImage;
use crate::sh::{LightingMap, NormalMap, SHLight};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Reads any supported image and converts it to 8-bit RGB.
pub fn read_image(path: &Path) -> Result<FaceImage> {
    let img = image::open(path).map_err(image_err(path))?.into_rgb8();
    let (w, h) = img.dimensions();
    let rgb = img
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    FaceImage::from_rgb(w as usize, h as usize, rgb)
}

pub fn write_image(path: &Path, image: &FaceImage) -> Result<()> {
    let mut out = RgbImage::new(image.width() as u32, image.height() as u32);
    for (p, c) in out.pixels_mut().zip(image.rgb()) {
        *p = Rgb(c.map(to_u8));
    }
    out.save(path).map_err(image_err(path))
}

/// Reads a 16-bit normal map: `n = 2p − 1` per RGB channel, alpha above
/// half scale marks valid pixels. Decoded normals are renormalized to undo
/// quantization.
pub fn read_normals(path: &Path) -> Result<NormalMap> {
    let img = image::open(path).map_err(image_err(path))?.into_rgba16();
    let (w, h) = img.dimensions();
    let mut normals = Vec::with_capacity((w * h) as usize);
    let mut mask = Vec::with_capacity((w * h) as usize);
    for p in img.pixels() {
        let [r, g, b, a] = p.0;
        normals.push([r, g, b].map(|c| 2.0 * c as f64 / 65535.0 - 1.0));
        mask.push(a > u16::MAX / 2);
    }
    NormalMap::normalized(w as usize, h as usize, normals, mask)
}

pub fn write_normals(path: &Path, normals: &NormalMap) -> Result<()> {
    let mut out: ImageBuffer<Rgba<u16>, Vec<u16>> = ImageBuffer::new(normals.width() as u32, normals.height() as u32);
    for ((p, n), &m) in out.pixels_mut().zip(normals.normals()).zip(normals.mask()) {
        let [r, g, b] = n.map(|c| to_u16((c + 1.0) / 2.0));
        *p = Rgba([r, g, b, if m { u16::MAX } else { 0 }]);
    }
    out.save(path).map_err(image_err(path))
}

/// A light file holds one JSON-style array of nine numbers.
pub fn parse_light(text: &str) -> Result<SHLight> {
    let values: Vec<f64> = serde_json::from_str(text.trim())
        .map_err(|e| Error::Parse(format!("light must be an array of 9 numbers: {e}")))?;
    let coeffs: [f64; 9] = values
        .try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("light has {} coefficients, expected 9", v.len())))?;
    SHLight::new(coeffs)
}

pub fn read_light(path: &Path) -> Result<SHLight> {
    parse_light(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn format_light(light: &SHLight) -> String {
    let parts: Vec<String> = light.0.iter().map(|c| format!("{c}")).collect();
    format!("[{}]\n", parts.join(", "))
}

pub fn write_light(path: &Path, light: &SHLight) -> Result<()> {
    write_text(path, &format_light(light))
}

/// Writes the display-normalized map as an 8-bit gray image.
pub fn write_lighting_map(path: &Path, map: &LightingMap) -> Result<()> {
    let r = map.resolution as u32;
    let mut out = GrayImage::new(r, r);
    for (p, &v) in out.pixels_mut().zip(&map.normalized) {
        *p = Luma([to_u8(v)]);
    }
    out.save(path).map_err(image_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const DEFAULT_K: usize = 8;

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestIdentity {
    pub id: String,
    pub images: Vec<PathBuf>,
    pub normals: Vec<PathBuf>,
}

/// Identity → image and normal-map paths. Relative paths are resolved
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_k")]
    pub k: usize,
    pub identities: Vec<ManifestIdentity>,
    #[serde(skip)]
    pub base: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(format!("malformed manifest: {e}")))?;
        m.base = base.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Manifest("k must be >= 1".into()));
        }
        if self.identities.is_empty() {
            return Err(Error::Manifest("no identities".into()));
        }
        for id in &self.identities {
            if id.images.len() != 2 * self.k {
                return Err(Error::Manifest(format!(
                    "identity `{}` has {} images, expected 2k = {}",
                    id.id,
                    id.images.len(),
                    2 * self.k
                )));
            }
            if id.normals.len() != id.images.len() {
                return Err(Error::Manifest(format!(
                    "identity `{}` has {} images but {} normal maps",
                    id.id,
                    id.images.len(),
                    id.normals.len()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
