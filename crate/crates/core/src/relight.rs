//! Albedo-quotient relighting and least-squares light estimation.
//!
//! Under the Lambertian model `I = R ⊙ f(N, L)`, an image lit by `L` is
//! moved to `L'` by `I' = I · f(N, L') / f(N, L)`; the unknown reflectance
//! cancels in the ratio.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::FaceImage;
use crate::sh::{shading_row, NormalMap, SHLight};

/// Floor applied to the shading denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct RelightResult {
    pub image: FaceImage,
    pub new_light: SHLight,
    pub old_light: SHLight,
    /// Fraction of masked pixels whose relit value was clipped to `[0, 1]`.
    pub clamp_fraction: f64,
}

/// Precomputed quotient relighting of one image under a fixed source light.
///
/// Holds the shading rows and floored denominators of the masked pixels so
/// that repeated relights (as in the iterative attack) only pay for the
/// numerator.
#[derive(Debug, Clone)]
pub struct QuotientRelighter<'a> {
    image: &'a FaceImage,
    light: SHLight,
    indices: Vec<usize>,
    rows: Vec<[f64; 9]>,
    /// Luminance per masked pixel.
    lum: Vec<f64>,
    /// `max(f(n, L), δ)` per masked pixel.
    denom: Vec<f64>,
    floored: Vec<bool>,
}

impl<'a> QuotientRelighter<'a> {
    pub fn new(image: &'a FaceImage, normals: &NormalMap, light: &SHLight) -> Result<Self> {
        check_dims(image, normals)?;
        let masked = normals.masked_count();
        if masked == 0 {
            return Err(Error::EmptyMask);
        }
        let lum = image.luminance();
        let mut indices = Vec::with_capacity(masked);
        let mut rows = Vec::with_capacity(masked);
        let mut lums = Vec::with_capacity(masked);
        let mut denoms = Vec::with_capacity(masked);
        let mut floored = Vec::with_capacity(masked);
        for (i, n) in normals.masked() {
            let row = shading_row(n);
            let denom: f64 = row.iter().zip(light.0.iter()).map(|(a, b)| a * b).sum();
            let is_floored = denom < DENOMINATOR_FLOOR;
            indices.push(i);
            rows.push(row);
            lums.push(lum[i]);
            denoms.push(denom.max(DENOMINATOR_FLOOR));
            floored.push(is_floored);
        }
        let n_floored = floored.iter().filter(|&&f| f).count();
        if 2 * n_floored > masked {
            return Err(Error::DegenerateLight {
                floored: n_floored,
                masked,
            });
        }
        Ok(QuotientRelighter {
            image,
            light: *light,
            indices,
            rows,
            lum: lums,
            denom: denoms,
            floored,
        })
    }

    pub fn source_light(&self) -> &SHLight {
        &self.light
    }

    pub fn image(&self) -> &FaceImage {
        self.image
    }

    /// Masked pixel indices, in the order used by [`Self::pre_clamp`].
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn floored(&self) -> &[bool] {
        &self.floored
    }

    /// Relit luminance of each masked pixel before clamping. The shading
    /// ratio is formed first, so relighting to the source light is exact.
    pub fn pre_clamp(&self, new_light: &SHLight) -> Vec<f64> {
        self.rows
            .iter()
            .zip(self.lum.iter().zip(self.denom.iter()))
            .map(|(row, (&y, &d))| {
                let f: f64 = row.iter().zip(new_light.0.iter()).map(|(a, b)| a * b).sum();
                y * (f / d)
            })
            .collect()
    }

    pub fn relight(&self, new_light: &SHLight) -> Result<RelightResult> {
        let pre = self.pre_clamp(new_light);
        let mut lum = self.image.luminance().to_vec();
        let mut clipped = 0usize;
        for (&i, &v) in self.indices.iter().zip(pre.iter()) {
            if !(0.0..=1.0).contains(&v) {
                clipped += 1;
            }
            lum[i] = v;
        }
        Ok(RelightResult {
            image: self.image.with_luminance(lum)?,
            new_light: *new_light,
            old_light: self.light,
            clamp_fraction: clipped as f64 / self.indices.len() as f64,
        })
    }

    /// Partial derivatives of the pre-clamp relit luminance with respect to
    /// each coefficient of the new light, one row per image pixel. Rows are
    /// zero at unmasked pixels and where the relit value is clipped.
    pub fn jacobian(&self, new_light: &SHLight) -> Vec<[f64; 9]> {
        let pre = self.pre_clamp(new_light);
        let mut jac = vec![[0.0; 9]; self.image.pixel_count()];
        for (k, &i) in self.indices.iter().enumerate() {
            if !(0.0..=1.0).contains(&pre[k]) {
                continue;
            }
            let s = self.lum[k] / self.denom[k];
            let row = &self.rows[k];
            for j in 0..9 {
                jac[i][j] = row[j] * s;
            }
        }
        jac
    }
}

fn check_dims(image: &FaceImage, normals: &NormalMap) -> Result<()> {
    if image.width() != normals.width() || image.height() != normals.height() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} normal map", image.width(), image.height()),
            actual: format!("{}x{}", normals.width(), normals.height()),
        });
    }
    Ok(())
}

pub fn quotient_relight(
    image: &FaceImage,
    normals: &NormalMap,
    light: &SHLight,
    new_light: &SHLight,
) -> Result<RelightResult> {
    QuotientRelighter::new(image, normals, light)?.relight(new_light)
}

/// Least-squares SH light under a uniform-albedo assumption.
pub fn estimate_light(image: &FaceImage, normals: &NormalMap) -> Result<SHLight> {
    check_dims(image, normals)?;
    estimate_light_from(image.luminance(), normals, None)
}

/// Least-squares fit of `values ≈ albedo · f(N, L)` over masked pixels.
/// Without an albedo the reflectance is taken as one everywhere.
pub fn estimate_light_from(values: &[f64], normals: &NormalMap, albedo: Option<&[f64]>) -> Result<SHLight> {
    if values.len() != normals.len() || albedo.is_some_and(|a| a.len() != normals.len()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", normals.len()),
            actual: format!("{} values", values.len()),
        });
    }
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    let mut aty = SVector::<f64, 9>::zeros();
    let mut count = 0usize;
    for (i, n) in normals.masked() {
        let mut row = shading_row(n);
        if let Some(r) = albedo {
            for v in row.iter_mut() {
                *v *= r[i];
            }
        }
        let a = SVector::<f64, 9>::from_row_slice(&row);
        ata += a * a.transpose();
        aty += a * values[i];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let svd = ata.svd(true, true);
    let smax = svd.singular_values.max();
    // Singular values of AᵀA are squares of those of A.
    let tol = smax * 1e-20_f64.max(f64::EPSILON * 9.0 * count as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < 9 || smax <= 0.0 {
        return Err(Error::SingularFit { rank });
    }
    let x = svd.solve(&aty, tol).map_err(|e| Error::Parse(e.to_string()))?;
    SHLight::new(std::array::from_fn(|j| x[j]))
}

/// Perturbs every coefficient uniformly in `[-ε, ε]` and relights.
pub fn random_relight(
    image: &FaceImage,
    normals: &NormalMap,
    light: &SHLight,
    epsilon: f64,
    seed: u64,
) -> Result<RelightResult> {
    let new_light = random_light_in_ball(light, epsilon, seed)?;
    quotient_relight(image, normals, light, &new_light)
}

pub fn random_light_in_ball(light: &SHLight, epsilon: f64, seed: u64) -> Result<SHLight> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::precondition(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = *light;
    for c in out.0.iter_mut() {
        *c += rng.random_range(-epsilon..=epsilon);
    }
    Ok(out)
}
