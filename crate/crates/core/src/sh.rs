//! Second-order real spherical harmonics and Lambertian shading.
//!
//! Coefficient order is `l=0; l=1: m=-1,0,1; l=2: m=-2..2`, i.e. the basis
//! `[1, y, z, x, xy, yz, 3z²-1, xz, x²-y²]` up to normalization. Lights are
//! raw SH radiance; the Lambertian band gains are applied at shading time.

use std::f64::consts::PI;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282095;
pub const SH_C1: f64 = 0.488603;
pub const SH_C2: f64 = 1.092548;
pub const SH_C3: f64 = 0.315392;

/// Tolerance on `|‖n‖ - 1|` for normals handed to the basis.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Lambertian convolution gains per coefficient (π, 2π/3, π/4 by band).
pub const BAND_GAINS: [f64; 9] = [
    PI,
    2.0 * PI / 3.0,
    2.0 * PI / 3.0,
    2.0 * PI / 3.0,
    PI / 4.0,
    PI / 4.0,
    PI / 4.0,
    PI / 4.0,
    PI / 4.0,
];

/// Nine SH lighting coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SHLight(pub [f64; 9]);

impl SHLight {
    pub const ZERO: SHLight = SHLight([0.0; 9]);

    pub fn new(coeffs: [f64; 9]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("light coefficients {coeffs:?}")));
        }
        Ok(SHLight(coeffs))
    }

    /// Pure ambient light `(a, 0, …, 0)`.
    pub fn ambient(a: f64) -> Self {
        let mut c = [0.0; 9];
        c[0] = a;
        SHLight(c)
    }

    pub fn coeffs(&self) -> &[f64; 9] {
        &self.0
    }

    pub fn linf_distance(&self, other: &SHLight) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Shading value `Σ Â_l L_j b_j(n)` for a unit normal.
    #[inline]
    pub fn irradiance(&self, n: [f64; 3]) -> f64 {
        let b = basis(n);
        let mut f = 0.0;
        for j in 0..9 {
            f += BAND_GAINS[j] * self.0[j] * b[j];
        }
        f
    }
}

impl TryFrom<Vec<f64>> for SHLight {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let arr: [f64; 9] = v
            .try_into()
            .map_err(|v: Vec<f64>| Error::Parse(format!("light needs 9 coefficients, got {}", v.len())))?;
        SHLight::new(arr)
    }
}

impl From<SHLight> for Vec<f64> {
    fn from(l: SHLight) -> Self {
        l.0.to_vec()
    }
}

impl Index<usize> for SHLight {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for SHLight {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for SHLight {
    type Output = SHLight;
    fn add(mut self, rhs: SHLight) -> SHLight {
        for j in 0..9 {
            self.0[j] += rhs.0[j];
        }
        self
    }
}

impl Sub for SHLight {
    type Output = SHLight;
    fn sub(mut self, rhs: SHLight) -> SHLight {
        for j in 0..9 {
            self.0[j] -= rhs.0[j];
        }
        self
    }
}

impl Mul<SHLight> for f64 {
    type Output = SHLight;
    fn mul(self, mut rhs: SHLight) -> SHLight {
        for c in rhs.0.iter_mut() {
            *c *= self;
        }
        rhs
    }
}

/// SH basis without the unit-norm check; callers guarantee unit input.
#[inline]
pub(crate) fn basis(n: [f64; 3]) -> [f64; 9] {
    let [x, y, z] = n;
    [
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        0.5 * SH_C2 * (x * x - y * y),
    ]
}

/// Basis row including the Lambertian gains, so that `f = row · L`.
#[inline]
pub(crate) fn shading_row(n: [f64; 3]) -> [f64; 9] {
    let mut b = basis(n);
    for j in 0..9 {
        b[j] *= BAND_GAINS[j];
    }
    b
}

pub fn sh_basis(n: [f64; 3]) -> Result<[f64; 9]> {
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::precondition(format!("sh_basis needs a unit normal, |n| = {norm}")));
    }
    Ok(basis(n))
}

/// Per-pixel camera-space normals (x right, y up, z toward the viewer).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

impl NormalMap {
    /// Unmasked normals are ignored; masked ones must be unit within 1e-6.
    pub fn new(width: usize, height: usize, normals: Vec<[f64; 3]>, mask: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if normals.len() != n || mask.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} pixels ({width}x{height})"),
                actual: format!("{} normals, {} mask entries", normals.len(), mask.len()),
            });
        }
        for (i, (v, &m)) in normals.iter().zip(mask.iter()).enumerate() {
            if !m {
                continue;
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::precondition(format!(
                    "normal at pixel {i} has norm {norm}"
                )));
            }
        }
        Ok(NormalMap {
            width,
            height,
            normals,
            mask,
        })
    }

    /// Like [`NormalMap::new`] but renormalizes masked normals first; pixels
    /// whose normal has (near) zero length are dropped from the mask.
    pub fn normalized(width: usize, height: usize, mut normals: Vec<[f64; 3]>, mut mask: Vec<bool>) -> Result<Self> {
        for (v, m) in normals.iter_mut().zip(mask.iter_mut()) {
            if !*m {
                continue;
            }
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm < 1e-3 || !norm.is_finite() {
                *m = false;
                *v = [0.0, 0.0, 1.0];
            } else {
                *v = [v[0] / norm, v[1] / norm, v[2] / norm];
            }
        }
        NormalMap::new(width, height, normals, mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(index, normal)` for every masked pixel.
    pub fn masked(&self) -> impl Iterator<Item = (usize, [f64; 3])> + '_ {
        self.normals
            .iter()
            .zip(self.mask.iter())
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(|(i, (&n, _))| (i, n))
    }
}

/// Single-channel image. Shading results are stored unclamped; use
/// [`LuminanceImage::clamped`] for the `[0, 1]` view.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LuminanceImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        LuminanceImage {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn clamped(&self) -> LuminanceImage {
        LuminanceImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Unclamped Lambertian shading of every masked pixel; zero elsewhere.
pub fn shade(normals: &NormalMap, light: &SHLight) -> LuminanceImage {
    let mut out = LuminanceImage::zeros(normals.width, normals.height);
    for (i, n) in normals.masked() {
        out.values[i] = light.irradiance(n);
    }
    out
}

/// Orthographic front hemisphere of a unit sphere inscribed in a square
/// image. Pixel `(u, v)` (row `v` from the top) maps to
/// `x = (u - c) / r`, `y = (c - v) / r` with `c = (res - 1) / 2`, `r = res / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereProjection {
    pub resolution: usize,
}

impl SphereProjection {
    pub fn new(resolution: usize) -> Self {
        SphereProjection { resolution }
    }

    fn center(&self) -> f64 {
        (self.resolution as f64 - 1.0) / 2.0
    }

    fn radius(&self) -> f64 {
        self.resolution as f64 / 2.0
    }

    /// Disk coordinates of a pixel center.
    pub fn disk_coords(&self, u: usize, v: usize) -> (f64, f64) {
        let c = self.center();
        let r = self.radius();
        ((u as f64 - c) / r, (c - v as f64) / r)
    }

    /// Normal at a pixel, or `None` outside the disk.
    pub fn normal_at(&self, u: usize, v: usize) -> Option<[f64; 3]> {
        let (x, y) = self.disk_coords(u, v);
        let rr = x * x + y * y;
        if rr >= 1.0 {
            return None;
        }
        Some([x, y, (1.0 - rr).sqrt()])
    }

    /// Continuous pixel position `(u, v)` where a front-facing direction lands.
    pub fn pixel_of(&self, d: [f64; 3]) -> (f64, f64) {
        let c = self.center();
        let r = self.radius();
        (c + d[0] * r, c - d[1] * r)
    }
}

pub fn sphere_normals(resolution: usize) -> Result<NormalMap> {
    if resolution < 8 {
        return Err(Error::precondition(format!("sphere resolution {resolution} < 8")));
    }
    let proj = SphereProjection::new(resolution);
    let mut normals = Vec::with_capacity(resolution * resolution);
    let mut mask = Vec::with_capacity(resolution * resolution);
    for v in 0..resolution {
        for u in 0..resolution {
            match proj.normal_at(u, v) {
                Some(n) => {
                    normals.push(n);
                    mask.push(true);
                }
                None => {
                    normals.push([0.0, 0.0, 1.0]);
                    mask.push(false);
                }
            }
        }
    }
    NormalMap::new(resolution, resolution, normals, mask)
}

/// Shading of the reference sphere under a light.
#[derive(Debug, Clone, PartialEq)]
pub struct LightingMap {
    pub resolution: usize,
    /// Unclamped shading, zero outside the disk.
    pub values: Vec<f64>,
    /// Min-max normalized copy of `values` over the disk, for display.
    pub normalized: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LightingMap {
    pub fn projection(&self) -> SphereProjection {
        SphereProjection::new(self.resolution)
    }

    /// Row-major index of the largest masked value; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        masked_argmax(&self.values, &self.mask)
    }

    pub fn max_value(&self) -> Option<f64> {
        self.argmax().map(|i| self.values[i])
    }
}

pub(crate) fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &m)) in values.iter().zip(mask.iter()).enumerate() {
        if !m {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn lighting_map(light: &SHLight, resolution: usize) -> Result<LightingMap> {
    let sphere = sphere_normals(resolution)?;
    Ok(lighting_map_on(&sphere, light))
}

pub(crate) fn lighting_map_on(sphere: &NormalMap, light: &SHLight) -> LightingMap {
    let values = shade(sphere, light).values;
    let mask = sphere.mask().to_vec();
    let (lo, hi) = values
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let normalized = values
        .iter()
        .zip(mask.iter())
        .map(|(&v, &m)| {
            if !m {
                0.0
            } else if span > 0.0 {
                (v - lo) / span
            } else {
                1.0
            }
        })
        .collect();
    LightingMap {
        resolution: sphere.width(),
        values,
        normalized,
        mask,
    }
}
