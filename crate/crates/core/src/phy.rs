//! Simulated physical reproduction of an adversarial light: a point light
//! source on a robotic arm is steered until the lighting map of the light
//! observed on the scene matches the target's lighting map.
//!
//! Feedback per frame comes from two statistics of the lighting maps: the
//! brightest position (source azimuth and polar angle) and the area of the
//! isointensity region at a fixed level (source distance).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::relight::estimate_light_from;
use crate::report::sig6;
use crate::sh::{basis, lighting_map_on, shade, sphere_normals, LightingMap, NormalMap, SHLight, SphereProjection, BAND_GAINS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PLSPose {
    /// Radians in `[0, 2π)`, counter-clockwise from +x in the image plane.
    pub azimuth: f64,
    /// Radians in `[0, π/2]` from the viewing axis (+z).
    pub polar: f64,
    pub distance: f64,
    pub intensity: f64,
}

impl PLSPose {
    pub fn new(azimuth: f64, polar: f64, distance: f64, intensity: f64) -> Result<Self> {
        let pose = PLSPose {
            azimuth: wrap_tau(azimuth),
            polar,
            distance,
            intensity,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..TAU).contains(&self.azimuth) {
            return Err(Error::precondition(format!("azimuth {} outside [0, 2π)", self.azimuth)));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.polar) {
            return Err(Error::precondition(format!("polar {} outside [0, π/2]", self.polar)));
        }
        if !(self.distance > 0.0) || !self.distance.is_finite() {
            return Err(Error::precondition(format!("distance {} must be > 0", self.distance)));
        }
        if !(self.intensity > 0.0) || !self.intensity.is_finite() {
            return Err(Error::precondition(format!("intensity {} must be > 0", self.intensity)));
        }
        Ok(())
    }

    pub fn direction(&self) -> [f64; 3] {
        direction(self.azimuth, self.polar)
    }
}

fn direction(azimuth: f64, polar: f64) -> [f64; 3] {
    [polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos()]
}

fn wrap_tau(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(-π, π]`.
fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Great-circle angle between two directions.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    dot.acos()
}

/// Distant-source SH projection: `L_j = (intensity / distance²) · b_j(d)`.
pub fn pls_to_sh(pose: &PLSPose) -> SHLight {
    let s = pose.intensity / (pose.distance * pose.distance);
    SHLight(basis(pose.direction()).map(|b| s * b))
}

#[derive(Debug, Clone)]
pub struct SceneModel {
    pub normals: NormalMap,
    /// Reflectance per pixel, `[0, 1]`.
    pub albedo: Vec<f64>,
    pub ambient: f64,
}

impl SceneModel {
    pub fn new(normals: NormalMap, albedo: Vec<f64>, ambient: f64) -> Result<Self> {
        if albedo.len() != normals.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} albedo values", normals.len()),
                actual: format!("{}", albedo.len()),
            });
        }
        if albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::precondition("albedo must lie in [0, 1]"));
        }
        if !(ambient >= 0.0) {
            return Err(Error::precondition("ambient must be >= 0"));
        }
        Ok(SceneModel {
            normals,
            albedo,
            ambient,
        })
    }

    /// Camera frame under a light: `albedo ⊙ f(N, L) + ambient`, linear (no
    /// sensor clipping), optionally with additive Gaussian noise.
    pub fn photograph(&self, light: &SHLight, noise: Option<(&mut ChaCha8Rng, f64)>) -> Vec<f64> {
        let s = shade(&self.normals, light);
        let mut out: Vec<f64> = s
            .values
            .iter()
            .zip(self.albedo.iter())
            .zip(self.normals.mask())
            .map(|((v, a), &m)| if m { a * v + self.ambient } else { 0.0 })
            .collect();
        if let Some((rng, sigma)) = noise {
            if sigma > 0.0 {
                let dist = Normal::new(0.0, sigma).expect("finite sigma");
                for (v, &m) in out.iter_mut().zip(self.normals.mask()) {
                    if m {
                        *v += dist.sample(rng);
                    }
                }
            }
        }
        out
    }

    /// Inverts the Lambertian model with the known reflectance and ambient
    /// level of the scene.
    pub fn estimate_light(&self, photo: &[f64]) -> Result<SHLight> {
        let direct: Vec<f64> = photo.iter().map(|v| v - self.ambient).collect();
        estimate_light_from(&direct, &self.normals, Some(&self.albedo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackTolerances {
    pub azimuth: f64,
    pub polar: f64,
    pub area: f64,
}

impl Default for FeedbackTolerances {
    fn default() -> Self {
        FeedbackTolerances {
            azimuth: 0.5_f64.to_radians(),
            polar: 0.5_f64.to_radians(),
            area: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavFeedback {
    /// Current minus target brightest-position azimuth, wrapped to `(-π, π]`.
    pub d_azimuth: f64,
    /// Current minus target polar angle.
    pub d_polar: f64,
    /// Isointensity area of the current map over that of the target.
    pub area_ratio: f64,
    pub converged: bool,
}

/// Direction of the brightest point of a lighting map, to sub-pixel
/// precision.
///
/// The map is a rendering of a nine-coefficient light on the sphere, so the
/// light is refitted from the map and the shading maximized continuously,
/// starting from the brightest pixel.
pub fn brightest_direction(map: &LightingMap) -> Result<[f64; 3]> {
    let idx = map.argmax().ok_or(Error::NoLight)?;
    if !(map.values[idx] > 0.0) {
        return Err(Error::NoLight);
    }
    let sphere = sphere_normals(map.resolution)?;
    let light = estimate_light_from(&map.values, &sphere, None)?;
    let proj = map.projection();
    let start = proj
        .normal_at(idx % map.resolution, idx / map.resolution)
        .ok_or(Error::NoLight)?;
    Ok(maximize_on_hemisphere(&light, start))
}

fn shading_gradient(light: &SHLight, n: [f64; 3]) -> [f64; 3] {
    // ∂f/∂n of Σ Â_j L_j b_j(n), from the basis polynomials.
    let g: [f64; 9] = std::array::from_fn(|j| BAND_GAINS[j] * light[j]);
    let [x, y, z] = n;
    use crate::sh::{SH_C1 as c1, SH_C2 as c2, SH_C3 as c3};
    [
        g[3] * c1 + g[4] * c2 * y + g[7] * c2 * z + g[8] * c2 * x,
        g[1] * c1 + g[4] * c2 * x + g[5] * c2 * z - g[8] * c2 * y,
        g[2] * c1 + g[5] * c2 * y + g[6] * c3 * 6.0 * z + g[7] * c2 * x,
    ]
}

fn maximize_on_hemisphere(light: &SHLight, start: [f64; 3]) -> [f64; 3] {
    let project = |v: [f64; 3]| -> [f64; 3] {
        let v = [v[0], v[1], v[2].max(0.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let mut n = start;
    let mut f = light.irradiance(n);
    let mut step = 0.05;
    for _ in 0..500 {
        let g = shading_gradient(light, n);
        let radial = g[0] * n[0] + g[1] * n[1] + g[2] * n[2];
        let t = [g[0] - radial * n[0], g[1] - radial * n[1], g[2] - radial * n[2]];
        let tn = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        if tn < 1e-14 {
            break;
        }
        let mut moved = false;
        while step > 1e-13 {
            let cand = project([
                n[0] + step * t[0] / tn,
                n[1] + step * t[1] / tn,
                n[2] + step * t[2] / tn,
            ]);
            let fc = light.irradiance(cand);
            if fc > f {
                n = cand;
                f = fc;
                step *= 1.5;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    n
}

fn polar_azimuth(d: [f64; 3]) -> (f64, f64) {
    (d[2].clamp(-1.0, 1.0).acos(), wrap_tau(d[1].atan2(d[0])))
}

/// Brightest direction and peak of a lighting map.
#[derive(Debug, Clone, Copy, PartialEq)]
struct MapSummary {
    polar: f64,
    azimuth: f64,
    max: f64,
}

fn summarize(map: &LightingMap) -> Result<MapSummary> {
    let max = map.max_value().ok_or(Error::NoLight)?;
    if !(max > 0.0) {
        return Err(Error::NoLight);
    }
    let (polar, azimuth) = polar_azimuth(brightest_direction(map)?);
    Ok(MapSummary { polar, azimuth, max })
}

fn area_at(map: &LightingMap, level: f64) -> usize {
    map.values
        .iter()
        .zip(map.mask.iter())
        .filter(|(&v, &k)| k && v >= level)
        .count()
}

/// Compares the current lighting map with the target's.
///
/// Both isointensity areas are counted at the same absolute level,
/// `τ · max(target)`, so a nearer (brighter) source covers a larger area.
pub fn map_feedback(
    current: &LightingMap,
    target: &LightingMap,
    tau: f64,
    tol: &FeedbackTolerances,
) -> Result<NavFeedback> {
    if current.resolution != target.resolution {
        return Err(Error::DimensionMismatch {
            expected: format!("resolution {}", target.resolution),
            actual: format!("{}", current.resolution),
        });
    }
    let tgt = summarize(target)?;
    let tgt_area = area_at(target, tau * tgt.max);
    feedback_against(current, &tgt, tgt_area, tau, tol)
}

fn feedback_against(
    current: &LightingMap,
    tgt: &MapSummary,
    tgt_area: usize,
    tau: f64,
    tol: &FeedbackTolerances,
) -> Result<NavFeedback> {
    let cur = summarize(current)?;
    let a_cur = area_at(current, tau * tgt.max);
    let area_ratio = if a_cur == 0 {
        0.5 / tgt_area as f64
    } else {
        a_cur as f64 / tgt_area as f64
    };
    let d_azimuth = wrap_pi(cur.azimuth - tgt.azimuth);
    let d_polar = cur.polar - tgt.polar;
    Ok(NavFeedback {
        d_azimuth,
        d_polar,
        area_ratio,
        converged: d_azimuth.abs() < tol.azimuth && d_polar.abs() < tol.polar && (area_ratio - 1.0).abs() < tol.area,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceConfig {
    /// Proportional gains on azimuth, polar angle and log distance.
    pub gains: [f64; 3],
    pub max_iter: usize,
    pub tau: f64,
    pub tolerances: FeedbackTolerances,
    pub resolution: usize,
    pub distance_bounds: (f64, f64),
    /// Standard deviation of simulated sensor noise on the photo.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        RecurrenceConfig {
            gains: [0.5, 0.5, 0.5],
            max_iter: 100,
            tau: 0.9,
            tolerances: FeedbackTolerances::default(),
            resolution: 128,
            distance_bounds: (0.25, 20.0),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

/// Log-area change per unit log-distance change, used to turn the area
/// ratio into a distance correction.
const AREA_DISTANCE_SENSITIVITY: f64 = 8.0;
const MAX_LOG_DISTANCE_STEP: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct RecurrenceResult {
    pub final_pose: PLSPose,
    /// Pose at each frame; `poses[i]` produced `trace[i]`.
    pub poses: Vec<PLSPose>,
    pub trace: Vec<NavFeedback>,
}

impl RecurrenceResult {
    /// Number of pose adjustments made before convergence.
    pub fn adjustments(&self) -> usize {
        self.trace.len() - 1
    }

    /// CSV with columns `iteration, azimuth, polar, distance, d_azimuth,
    /// d_polar, area_ratio`.
    pub fn to_csv(&self) -> String {
        trace_csv(&self.poses, &self.trace)
    }
}

pub fn trace_csv(poses: &[PLSPose], trace: &[NavFeedback]) -> String {
    let mut out = String::from("iteration,azimuth,polar,distance,d_azimuth,d_polar,area_ratio\n");
    for (i, (p, f)) in poses.iter().zip(trace).enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{}\n",
            sig6(p.azimuth),
            sig6(p.polar),
            sig6(p.distance),
            sig6(f.d_azimuth),
            sig6(f.d_polar),
            sig6(f.area_ratio)
        ));
    }
    out
}

/// Closed-loop adjustment of the light pose until the observed lighting map
/// matches the target's.
pub fn recurrence_loop(
    target: &SHLight,
    start: PLSPose,
    scene: &SceneModel,
    cfg: &RecurrenceConfig,
) -> Result<RecurrenceResult> {
    start.validate()?;
    let sphere = sphere_normals(cfg.resolution)?;
    let target_map = lighting_map_on(&sphere, target);
    let tgt = summarize(&target_map)?;
    let tgt_area = area_at(&target_map, cfg.tau * tgt.max);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (dmin, dmax) = cfg.distance_bounds;
    let mut pose = start;
    pose.distance = pose.distance.clamp(dmin, dmax);
    let mut poses = Vec::new();
    let mut trace = Vec::new();

    for _ in 0..=cfg.max_iter {
        let photo = scene.photograph(&pls_to_sh(&pose), Some((&mut rng, cfg.noise_std)));
        let observed = scene.estimate_light(&photo)?;
        let current_map = lighting_map_on(&sphere, &observed);
        let fb = feedback_against(&current_map, &tgt, tgt_area, cfg.tau, &cfg.tolerances)?;
        poses.push(pose);
        trace.push(fb);
        if fb.converged {
            return Ok(RecurrenceResult {
                final_pose: pose,
                poses,
                trace,
            });
        }
        if trace.len() > cfg.max_iter {
            break;
        }
        let [k_az, k_po, k_d] = cfg.gains;
        pose.azimuth = wrap_tau(pose.azimuth - k_az * fb.d_azimuth);
        pose.polar = (pose.polar - k_po * fb.d_polar).clamp(0.0, FRAC_PI_2);
        let dlog = (k_d * fb.area_ratio.ln() / AREA_DISTANCE_SENSITIVITY).clamp(-MAX_LOG_DISTANCE_STEP, MAX_LOG_DISTANCE_STEP);
        pose.distance = (pose.distance * dlog.exp()).clamp(dmin, dmax);
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        poses,
        trace,
    })
}

/// Pixel position of a direction on a lighting map of the given resolution.
pub fn direction_to_pixel(resolution: usize, d: [f64; 3]) -> (f64, f64) {
    SphereProjection::new(resolution).pixel_of(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::lighting_map;

    fn pose(az: f64, po: f64, d: f64) -> PLSPose {
        PLSPose::new(az, po, d, 1.0).unwrap()
    }

    #[test]
    fn frontal_source_uses_zonal_terms_only() {
        let l = pls_to_sh(&pose(0.7, 0.0, 1.0));
        for j in 0..9 {
            if [0, 2, 6].contains(&j) {
                assert!(l[j].abs() > 0.1);
            } else {
                assert!(l[j].abs() < 1e-15, "coef {j} = {}", l[j]);
            }
        }
    }

    #[test]
    fn inverse_square_and_intensity_scaling() {
        let a = pls_to_sh(&pose(1.0, 0.5, 1.5));
        let b = pls_to_sh(&pose(1.0, 0.5, 3.0));
        for j in 0..9 {
            assert!((b[j] - a[j] / 4.0).abs() < 1e-15);
        }
        let c = pls_to_sh(&PLSPose::new(1.0, 0.5, 1.5, 3.0).unwrap());
        for j in 0..9 {
            assert_eq!(c[j], 3.0 * (1.0 / 2.25) * basis(pose(1.0, 0.5, 1.5).direction())[j]);
        }
    }

    #[test]
    fn half_turn_flips_terms_odd_in_the_image_plane() {
        let a = pls_to_sh(&pose(0.4, 0.9, 1.0));
        let b = pls_to_sh(&pose(0.4 + PI, 0.9, 1.0));
        for j in 0..9 {
            let want = if [1, 3, 5, 7].contains(&j) { -a[j] } else { a[j] };
            assert!((b[j] - want).abs() < 1e-12, "coef {j}");
        }
    }

    #[test]
    fn pose_validation() {
        assert!(PLSPose::new(0.0, 1.7, 1.0, 1.0).is_err());
        assert!(PLSPose::new(0.0, 0.5, 0.0, 1.0).is_err());
        assert!(PLSPose::new(0.0, 0.5, 1.0, -1.0).is_err());
        assert!((PLSPose::new(-0.5, 0.5, 1.0, 1.0).unwrap().azimuth - (TAU - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn identical_maps_give_null_feedback() {
        let m = lighting_map(&pls_to_sh(&pose(2.0, 0.8, 2.0)), 64).unwrap();
        let fb = map_feedback(&m, &m, 0.9, &FeedbackTolerances::default()).unwrap();
        assert_eq!(fb.d_azimuth, 0.0);
        assert_eq!(fb.d_polar, 0.0);
        assert_eq!(fb.area_ratio, 1.0);
        assert!(fb.converged);
    }

    #[test]
    fn azimuth_offset_is_measured() {
        let cur = lighting_map(&pls_to_sh(&pose(1.0, 0.7, 2.0)), 128).unwrap();
        let tgt = lighting_map(&pls_to_sh(&pose(1.3, 0.7, 2.0)), 128).unwrap();
        let fb = map_feedback(&cur, &tgt, 0.9, &FeedbackTolerances::default()).unwrap();
        assert!((fb.d_azimuth + 0.3).abs() < 0.05, "{fb:?}");
        assert!(fb.d_polar.abs() < 0.05);
    }

    #[test]
    fn nearer_source_has_larger_area() {
        let near = lighting_map(&pls_to_sh(&pose(1.0, 0.5, 1.8)), 128).unwrap();
        let far = lighting_map(&pls_to_sh(&pose(1.0, 0.5, 2.0)), 128).unwrap();
        let fb = map_feedback(&near, &far, 0.9, &FeedbackTolerances::default()).unwrap();
        assert!(fb.area_ratio > 1.0, "{fb:?}");
        let fb = map_feedback(&far, &near, 0.9, &FeedbackTolerances::default()).unwrap();
        assert!(fb.area_ratio < 1.0, "{fb:?}");
    }

    #[test]
    fn dark_map_is_rejected() {
        let dark = lighting_map(&SHLight::ZERO, 32).unwrap();
        let lit = lighting_map(&pls_to_sh(&pose(1.0, 0.5, 1.0)), 32).unwrap();
        assert!(matches!(map_feedback(&dark, &lit, 0.9, &FeedbackTolerances::default()), Err(Error::NoLight)));
        assert!(matches!(map_feedback(&lit, &dark, 0.9, &FeedbackTolerances::default()), Err(Error::NoLight)));
    }

    #[test]
    fn angle_extraction_inverts_rendering() {
        for &po in &[0.1, 0.3, 0.6, 0.9, 1.2, 1.4] {
            for &az in &[0.2, 1.7, 3.3, 5.9] {
                let m = lighting_map(&pls_to_sh(&pose(az, po, 2.0)), 128).unwrap();
                let (p, a) = polar_azimuth(brightest_direction(&m).unwrap());
                assert!((p - po).abs() < 0.05, "polar {po} az {az}: got {p}");
                assert!(wrap_pi(a - az).abs() < 0.05, "polar {po} az {az}: got az {a}");
            }
        }
    }

    fn scene() -> SceneModel {
        let normals = crate::synth::ellipsoid_normals(48, 48, 0.8, 0.95, 0.7);
        let albedo = crate::synth::textured_albedo(48, 48, 3);
        SceneModel::new(normals, albedo, 0.05).unwrap()
    }

    fn angular_error(a: &PLSPose, b: &PLSPose) -> f64 {
        angle_between(a.direction(), b.direction())
    }

    #[test]
    fn self_recurrence_needs_no_adjustment() {
        let p = pose(2.2, 0.9, 1.7);
        let r = recurrence_loop(&pls_to_sh(&p), p, &scene(), &RecurrenceConfig::default()).unwrap();
        assert_eq!(r.adjustments(), 0);
        assert_eq!(r.final_pose, p);
    }

    #[test]
    fn reaches_a_displaced_target() {
        let target = pose(1.0, 0.6, 2.0);
        let r = recurrence_loop(&pls_to_sh(&target), pose(0.2, 0.3, 3.0), &scene(), &RecurrenceConfig::default()).unwrap();
        assert!(r.adjustments() <= 100);
        assert!(angular_error(&r.final_pose, &target) < 2f64.to_radians());
        assert!((r.final_pose.distance / target.distance - 1.0).abs() < 0.05);
    }

    #[test]
    fn random_targets_converge_with_late_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sc = scene();
        for _ in 0..20 {
            use rand::Rng;
            let target = pose(
                rng.random_range(0.0..TAU),
                rng.random_range(0.1..1.4),
                rng.random_range(1.0..4.0),
            );
            let start = pose(
                rng.random_range(0.0..TAU),
                rng.random_range(0.1..1.4),
                rng.random_range(1.0..4.0),
            );
            let r = recurrence_loop(&pls_to_sh(&target), start, &sc, &RecurrenceConfig::default())
                .unwrap_or_else(|e| panic!("{target:?} from {start:?}: {e}"));
            assert!(angular_error(&r.final_pose, &target) < 2f64.to_radians(), "{target:?}");
            assert!((r.final_pose.distance / target.distance - 1.0).abs() < 0.05, "{target:?} {:?}", r.final_pose);
            let errs: Vec<f64> = r.poses.iter().map(|p| angular_error(p, &target)).collect();
            let tail = &errs[errs.len().saturating_sub(11)..];
            let ok = tail.windows(2).filter(|w| w[1] <= w[0]).count();
            assert!(ok + 10 >= 8 + tail.len() - 1, "{errs:?}");
        }
    }

    #[test]
    fn unreachable_intensity_fails_with_trace() {
        let target = PLSPose::new(1.0, 0.6, 0.3, 50.0).unwrap();
        let cfg = RecurrenceConfig {
            max_iter: 30,
            ..Default::default()
        };
        match recurrence_loop(&pls_to_sh(&target), pose(0.2, 0.3, 3.0), &scene(), &cfg) {
            Err(Error::NonConvergence { iterations, poses, trace }) => {
                assert_eq!(iterations, 30);
                assert_eq!(trace.len(), 31);
                assert_eq!(poses.len(), 31);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn distant_source_peaks_at_its_pixel() {
        let res = 128;
        for &(az, po) in &[(0.3, 0.4), (2.0, 0.9), (4.0, 1.2), (5.5, 0.05)] {
            let p = pose(az, po, 50.0);
            let m = lighting_map(&pls_to_sh(&p), res).unwrap();
            let idx = m.argmax().unwrap();
            let (u, v) = ((idx % res) as f64, (idx / res) as f64);
            let (pu, pv) = direction_to_pixel(res, p.direction());
            assert!(((u - pu).powi(2) + (v - pv).powi(2)).sqrt() < 2.0, "{az} {po}");
        }
    }
}
