use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Embedder, EmbedderDescriptor, Embedding};
use crate::error::Result;
use crate::image::FaceImage;

pub const BUILTIN_SIDE: usize = 32;
pub const BUILTIN_DIMENSION: usize = 128;
const DEFAULT_SEED: u64 = 0x5eed_f00d;
const DEGENERATE_NORM: f64 = 1e-12;

/// Deterministic differentiable stand-in for a face-recognition network.
///
/// Luminance is area-resampled to 32×32, mean-subtracted, projected by a
/// seeded random orthonormal matrix to 128 dimensions and normalized.
/// Images with no contrast map to the first canonical axis.
#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    seed: u64,
    /// Row-major `dim × side²`, orthonormal rows.
    projection: Vec<f64>,
    dim: usize,
}

impl Default for BuiltinEmbedder {
    fn default() -> Self {
        BuiltinEmbedder::new(DEFAULT_SEED)
    }
}

impl BuiltinEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dimension(seed, BUILTIN_DIMENSION)
    }

    pub fn with_dimension(seed: u64, dim: usize) -> Self {
        assert!((2..=BUILTIN_SIDE * BUILTIN_SIDE).contains(&dim));
        let n = BUILTIN_SIDE * BUILTIN_SIDE;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = DMatrix::<f64>::from_fn(n, dim, |_, _| StandardNormal.sample(&mut rng));
        let q = gauss.qr().q();
        let mut projection = vec![0.0; dim * n];
        for r in 0..dim {
            for c in 0..n {
                projection[r * n + c] = q[(c, r)];
            }
        }
        BuiltinEmbedder { seed, projection, dim }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Projected, mean-subtracted features before normalization.
    fn features(&self, image: &FaceImage) -> (Resampler, Vec<f64>) {
        let rs = Resampler::new(image.width(), image.height());
        let mut x = rs.forward(image.luminance());
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        for v in x.iter_mut() {
            *v -= mean;
        }
        let n = x.len();
        let v = (0..self.dim)
            .map(|r| {
                self.projection[r * n..(r + 1) * n]
                    .iter()
                    .zip(x.iter())
                    .map(|(p, z)| p * z)
                    .sum()
            })
            .collect();
        (rs, v)
    }
}

impl Embedder for BuiltinEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            name: if self.seed == DEFAULT_SEED {
                "builtin".into()
            } else {
                format!("builtin-{}", self.seed)
            },
            dimension: self.dim,
            differentiable: true,
        }
    }

    fn embed(&self, image: &FaceImage) -> Result<Embedding> {
        let (_, v) = self.features(image);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Ok(Embedding::axis(self.dim, 0));
        }
        Ok(Embedding(v.into_iter().map(|x| x / norm).collect()))
    }

    fn input_gradient(&self, image: &FaceImage, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.dim {
            return Err(crate::error::Error::DimensionMismatch {
                expected: format!("upstream of dimension {}", self.dim),
                actual: format!("{}", upstream.len()),
            });
        }
        let (rs, v) = self.features(image);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Ok(vec![0.0; image.pixel_count()]);
        }
        // d⟨e, u⟩/dv = (u - e⟨e, u⟩) / ‖v‖
        let e: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let eu: f64 = e.iter().zip(upstream).map(|(a, b)| a * b).sum();
        let dv: Vec<f64> = upstream.iter().zip(e.iter()).map(|(u, ei)| (u - ei * eu) / norm).collect();
        // Back through the projection and the mean subtraction.
        let n = BUILTIN_SIDE * BUILTIN_SIDE;
        let mut dz = vec![0.0; n];
        for (r, &g) in dv.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, p) in dz.iter_mut().zip(&self.projection[r * n..(r + 1) * n]) {
                *d += g * p;
            }
        }
        let mean = dz.iter().sum::<f64>() / n as f64;
        for d in dz.iter_mut() {
            *d -= mean;
        }
        Ok(rs.backward(&dz))
    }
}

/// Separable area-average resampling onto the 32×32 working grid.
#[derive(Debug, Clone)]
struct Resampler {
    width: usize,
    height: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<(usize, f64)>>,
}

fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = hi.min(s as f64 + 1.0) - lo.max(s as f64);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

impl Resampler {
    fn new(width: usize, height: usize) -> Self {
        Resampler {
            width,
            height,
            cols: axis_weights(width, BUILTIN_SIDE),
            rows: axis_weights(height, BUILTIN_SIDE),
        }
    }

    fn forward(&self, src: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; BUILTIN_SIDE * BUILTIN_SIDE];
        for (oy, rw) in self.rows.iter().enumerate() {
            for (ox, cw) in self.cols.iter().enumerate() {
                let mut acc = 0.0;
                for &(sy, wy) in rw {
                    for &(sx, wx) in cw {
                        acc += wy * wx * src[sy * self.width + sx];
                    }
                }
                out[oy * BUILTIN_SIDE + ox] = acc;
            }
        }
        out
    }

    fn backward(&self, grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        for (oy, rw) in self.rows.iter().enumerate() {
            for (ox, cw) in self.cols.iter().enumerate() {
                let g = grad[oy * BUILTIN_SIDE + ox];
                for &(sy, wy) in rw {
                    for &(sx, wx) in cw {
                        out[sy * self.width + sx] += wy * wx * g;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> FaceImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lum: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.05..0.95)).collect();
        FaceImage::from_luminance(w, h, &lum).unwrap()
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let e = BuiltinEmbedder::default();
        for (i, (w, h)) in [(32, 32), (48, 40), (20, 27)].into_iter().enumerate() {
            let img = random_image(w, h, i as u64);
            let a = e.embed(&img).unwrap();
            let b = BuiltinEmbedder::default().embed(&img).unwrap();
            assert_eq!(a, b);
            let norm: f64 = a.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_image_maps_to_axis() {
        let e = BuiltinEmbedder::default();
        let img = FaceImage::from_luminance(16, 16, &[0.4; 256]).unwrap();
        assert_eq!(e.embed(&img).unwrap(), Embedding::axis(BUILTIN_DIMENSION, 0));
        let g = e.input_gradient(&img, &vec![1.0; BUILTIN_DIMENSION]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn projection_rows_are_orthonormal() {
        let e = BuiltinEmbedder::with_dimension(3, 16);
        let n = BUILTIN_SIDE * BUILTIN_SIDE;
        for a in 0..16 {
            for b in 0..16 {
                let dot: f64 = (0..n).map(|k| e.projection[a * n + k] * e.projection[b * n + k]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn resampling_preserves_constants() {
        for (w, h) in [(32, 32), (64, 48), (17, 45), (100, 9)] {
            let rs = Resampler::new(w, h);
            let out = rs.forward(&vec![0.7; w * h]);
            assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let e = BuiltinEmbedder::default();
        let img = random_image(40, 36, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let upstream: Vec<f64> = (0..BUILTIN_DIMENSION).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = e.input_gradient(&img, &upstream).unwrap();
        let h = 1e-4;
        let objective = |lum: &[f64]| -> f64 {
            let im = FaceImage::from_luminance(40, 36, lum).unwrap();
            let v = e.embed(&im).unwrap();
            v.values().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let base = img.luminance().to_vec();
        let mut fd = vec![0.0; base.len()];
        for p in 0..base.len() {
            let mut plus = base.clone();
            plus[p] += h;
            let mut minus = base.clone();
            minus[p] -= h;
            fd[p] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "relative error {}", num / den);

        let zero = e.input_gradient(&img, &vec![0.0; BUILTIN_DIMENSION]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
        assert_eq!(zero.len(), img.pixel_count());
    }
}
