//! Procedural desk-scale face corpus: textured ellipsoids rendered under
//! varied SH lights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{luma, FaceImage};
use crate::sh::{basis, NormalMap, SHLight};

pub const DEFAULT_SIDE: usize = 48;
const BACKGROUND: f64 = 0.35;

/// Normals of the visible half of an ellipsoid with semi-axes `(ax, ay, az)`
/// in units of half the image size.
pub fn ellipsoid_normals(width: usize, height: usize, ax: f64, ay: f64, az: f64) -> NormalMap {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut normals = Vec::with_capacity(width * height);
    let mut mask = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let x = (u as f64 - cx) / (width as f64 / 2.0);
            let y = (cy - v as f64) / (height as f64 / 2.0);
            let q = (x / ax).powi(2) + (y / ay).powi(2);
            if q < 1.0 {
                let z = az * (1.0 - q).sqrt();
                let g = [x / (ax * ax), y / (ay * ay), z / (az * az)];
                let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                normals.push([g[0] / n, g[1] / n, g[2] / n]);
                mask.push(true);
            } else {
                normals.push([0.0, 0.0, 1.0]);
                mask.push(false);
            }
        }
    }
    NormalMap::new(width, height, normals, mask).expect("ellipsoid normals are unit")
}

/// Smooth random reflectance in `[0.2, 0.95]`: a base level plus Gaussian
/// blobs.
pub fn textured_albedo(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1be_d0);
    let base = rng.random_range(0.5..0.65);
    let scale = width.max(height) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..10)
        .map(|_| {
            (
                rng.random_range(0.15..0.85) * width as f64,
                rng.random_range(0.15..0.85) * height as f64,
                rng.random_range(0.06..0.16) * scale,
                rng.random_range(-0.3..0.3),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let mut a = base;
            for &(bx, by, s, amp) in &blobs {
                let d2 = (u as f64 - bx).powi(2) + (v as f64 - by).powi(2);
                a += amp * (-d2 / (2.0 * s * s)).exp();
            }
            out.push(a.clamp(0.2, 0.95));
        }
    }
    out
}

/// Ambient level plus a directional lobe from the front cone.
pub fn random_portrait_light(rng: &mut impl Rng) -> SHLight {
    let ambient = rng.random_range(0.55..0.75);
    let strength = rng.random_range(0.15..0.4);
    let polar: f64 = rng.random_range(0.0..0.7);
    let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let d = [polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos()];
    let b = basis(d);
    let mut l = SHLight::ambient(ambient);
    for j in 0..9 {
        l[j] += strength * b[j];
    }
    l
}

/// Renders `albedo · f(N, L)` with a color tint; unmasked pixels get a flat
/// gray background.
pub fn render(normals: &NormalMap, albedo: &[f64], light: &SHLight, tint: [f64; 3]) -> FaceImage {
    let t = luma(tint);
    let tint = tint.map(|c| c / t);
    let rgb = (0..normals.len())
        .map(|i| {
            if normals.mask()[i] {
                let y = albedo[i] * light.irradiance(normals.normals()[i]);
                tint.map(|c| (c * y).clamp(0.0, 1.0))
            } else {
                [BACKGROUND; 3]
            }
        })
        .collect();
    FaceImage::from_rgb(normals.width(), normals.height(), rgb).expect("render dimensions")
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: FaceImage,
    pub normals: NormalMap,
    /// Light used for rendering (not visible to the attacks, which estimate it).
    pub light: SHLight,
}

#[derive(Debug, Clone)]
pub struct Identity {
    pub id: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub identities: usize,
    pub images_per_identity: usize,
    pub side: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            identities: 8,
            images_per_identity: 16,
            side: DEFAULT_SIDE,
            seed: 2024,
        }
    }
}

/// Each identity has its own albedo texture, tint and head shape; every
/// render draws a fresh light.
pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<Identity> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.identities)
        .map(|k| {
            let ax = rng.random_range(0.72..0.85);
            let ay = rng.random_range(0.85..0.97);
            let az = rng.random_range(0.6..0.8);
            let tint = [
                rng.random_range(0.9..1.1),
                rng.random_range(0.85..1.0),
                rng.random_range(0.7..0.9),
            ];
            let normals = ellipsoid_normals(cfg.side, cfg.side, ax, ay, az);
            let albedo = textured_albedo(cfg.side, cfg.side, cfg.seed.wrapping_mul(31).wrapping_add(k as u64));
            let samples = (0..cfg.images_per_identity)
                .map(|_| {
                    let light = random_portrait_light(&mut rng);
                    Sample {
                        image: render(&normals, &albedo, &light, tint),
                        normals: normals.clone(),
                        light,
                    }
                })
                .collect();
            Identity {
                id: format!("id{k:02}"),
                samples,
            }
        })
        .collect()
}
