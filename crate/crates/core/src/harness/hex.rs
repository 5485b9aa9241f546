use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phy::{pls_to_sh, PLSPose};
use crate::report::{hex_svg, sig6};
use crate::sh::{lighting_map_on, masked_argmax, sphere_normals, SHLight};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Axial coordinates of the pointy-top hexagon (circumradius `size`)
/// containing `(x, y)`.
pub fn hex_cell(x: f64, y: f64, size: f64) -> (i64, i64) {
    let q = (SQRT3 / 3.0 * x - y / 3.0) / size;
    let r = (2.0 / 3.0 * y) / size;
    cube_round(q, r)
}

pub fn hex_center(q: i64, r: i64, size: f64) -> (f64, f64) {
    (size * SQRT3 * (q as f64 + r as f64 / 2.0), size * 1.5 * r as f64)
}

fn cube_round(q: f64, r: f64) -> (i64, i64) {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    (rq as i64, rr as i64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexCell {
    pub q: i64,
    pub r: i64,
    pub center: (f64, f64),
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityHistogram {
    pub resolution: usize,
    /// Hexagon circumradius in map pixels.
    pub size: f64,
    /// Non-empty cells ordered by `(r, q)`.
    pub cells: Vec<HexCell>,
    /// Sensitive point `(x, y)` of every processed pair, in input order.
    pub points: Vec<(f64, f64)>,
    pub total: usize,
    /// Pairs whose lighting maps do not differ.
    pub skipped: usize,
}

impl SensitivityHistogram {
    /// The most populated cell; ties go to the first in `(r, q)` order.
    pub fn modal_cell(&self) -> Option<&HexCell> {
        self.cells.iter().fold(None, |best: Option<&HexCell>, c| match best {
            Some(b) if b.count >= c.count => Some(b),
            _ => Some(c),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,count\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{}\n", sig6(c.center.0), sig6(c.center.1), c.count));
        }
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        let cells: Vec<((f64, f64), usize)> = self.cells.iter().map(|c| (c.center, c.count)).collect();
        hex_svg(self.resolution, self.size, &cells, title)
    }
}

/// Bins the position of the largest lighting-map change of every
/// `(original, adversarial)` light pair on a hexagonal grid.
pub fn sensitivity_analysis(pairs: &[(SHLight, SHLight)], resolution: usize, size: f64) -> Result<SensitivityHistogram> {
    if pairs.is_empty() {
        return Err(Error::precondition("no light pairs"));
    }
    if !(size > 0.0) || !size.is_finite() {
        return Err(Error::precondition("hex size must be > 0"));
    }
    let sphere = sphere_normals(resolution)?;
    let found: Vec<Option<(f64, f64)>> = pairs
        .par_iter()
        .map(|(l, adv)| {
            let m = lighting_map_on(&sphere, l);
            let a = lighting_map_on(&sphere, adv);
            let d: Vec<f64> = a.values.iter().zip(&m.values).map(|(x, y)| (x - y).abs()).collect();
            let idx = masked_argmax(&d, sphere.mask())?;
            if d[idx] > 0.0 {
                Some(((idx % resolution) as f64, (idx / resolution) as f64))
            } else {
                None
            }
        })
        .collect();
    let points: Vec<(f64, f64)> = found.iter().flatten().copied().collect();
    let skipped = found.len() - points.len();
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for &(x, y) in &points {
        let (q, r) = hex_cell(x, y, size);
        *counts.entry((r, q)).or_default() += 1;
    }
    let cells = counts
        .into_iter()
        .map(|((r, q), count)| HexCell {
            q,
            r,
            center: hex_center(q, r, size),
            count,
        })
        .collect();
    Ok(SensitivityHistogram {
        resolution,
        size,
        cells,
        total: points.len(),
        points,
        skipped,
    })
}

/// Light pairs whose adversarial change is a point source clustered around
/// one direction, on top of a random base light.
pub fn clustered_pairs(count: usize, azimuth: f64, polar: f64, spread: f64, seed: u64) -> Result<Vec<(SHLight, SHLight)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base = crate::synth::random_portrait_light(&mut rng);
            let az = azimuth + rng.random_range(-spread..=spread);
            let po = (polar + rng.random_range(-spread..=spread)).clamp(0.0, PI / 2.0);
            let intensity = rng.random_range(0.3..0.6);
            let pose = PLSPose::new(az, po, 1.0, intensity)?;
            Ok((base, base + pls_to_sh(&pose)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_point_lands_in_the_nearest_center() {
        let size = 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let (x, y) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let (q, r) = hex_cell(x, y, size);
            let (cx, cy) = hex_center(q, r, size);
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            for (dq, dr) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)] {
                let (nx, ny) = hex_center(q + dq, r + dr, size);
                assert!(d <= ((x - nx).powi(2) + (y - ny).powi(2)).sqrt() + 1e-9);
            }
            assert!(d <= size + 1e-9);
        }
    }

    #[test]
    fn single_pair_single_cell() {
        let pairs = [(SHLight::ambient(0.5), SHLight::ambient(0.5) + pls_to_sh(&PLSPose::new(1.0, 0.5, 1.0, 1.0).unwrap()))];
        let h = sensitivity_analysis(&pairs, 64, 4.0).unwrap();
        assert_eq!(h.total, 1);
        assert_eq!(h.cells.len(), 1);
        assert_eq!(h.cells[0].count, 1);
    }

    #[test]
    fn identical_lights_are_skipped() {
        let l = SHLight::ambient(0.7);
        let pairs = [(l, l), (l, l + SHLight::ambient(0.1))];
        let h = sensitivity_analysis(&pairs, 32, 2.0).unwrap();
        assert_eq!(h.skipped, 1);
        assert_eq!(h.total, 1);
        assert_eq!(h.cells.iter().map(|c| c.count).sum::<usize>(), 1);
        assert!(sensitivity_analysis(&[], 32, 2.0).is_err());
    }
}
