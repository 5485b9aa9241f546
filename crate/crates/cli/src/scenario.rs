//! TOML scenario files for `phy-sim`.
//!
//! ```toml
//! [scene]
//! normals = "face_normals.png"   # procedural head when absent
//! albedo = "face_albedo.png"     # gray; procedural texture when absent
//! side = 48
//! albedo_seed = 3
//! ambient = 0.05
//!
//! [start]
//! azimuth = 0.2
//! polar = 0.3
//! distance = 3.0
//!
//! [target]
//! pose = { azimuth = 1.0, polar = 0.6, distance = 2.0 }
//! # or: light = [0.8, 0.1, ...]  or: light_file = "adv.txt"
//!
//! [control]
//! gains = [0.5, 0.5, 0.5]
//! max_iter = 100
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use advrelight::io;
use advrelight::phy::{pls_to_sh, FeedbackTolerances, PLSPose, RecurrenceConfig, SceneModel};
use advrelight::synth::{ellipsoid_normals, textured_albedo, DEFAULT_SIDE};
use advrelight::SHLight;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub scene: SceneSection,
    pub start: PoseSection,
    pub target: TargetSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(skip)]
    base: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub normals: Option<PathBuf>,
    pub albedo: Option<PathBuf>,
    pub side: usize,
    pub albedo_seed: u64,
    pub ambient: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            normals: None,
            albedo: None,
            side: DEFAULT_SIDE,
            albedo_seed: 3,
            ambient: 0.05,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSection {
    pub azimuth: f64,
    pub polar: f64,
    pub distance: f64,
    #[serde(default = "one")]
    pub intensity: f64,
}

impl PoseSection {
    fn pose(&self) -> Result<PLSPose> {
        Ok(PLSPose::new(self.azimuth, self.polar, self.distance, self.intensity)?)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub pose: Option<PoseSection>,
    pub light: Option<Vec<f64>>,
    pub light_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub gains: [f64; 3],
    pub max_iter: usize,
    pub tau: f64,
    pub tolerance_azimuth_deg: f64,
    pub tolerance_polar_deg: f64,
    pub tolerance_area: f64,
    pub resolution: usize,
    pub distance_bounds: [f64; 2],
    pub noise_std: f64,
    /// Overrides `--seed`.
    pub seed: Option<u64>,
}

impl Default for ControlSection {
    fn default() -> Self {
        let d = RecurrenceConfig::default();
        ControlSection {
            gains: d.gains,
            max_iter: d.max_iter,
            tau: d.tau,
            tolerance_azimuth_deg: d.tolerances.azimuth.to_degrees(),
            tolerance_polar_deg: d.tolerances.polar.to_degrees(),
            tolerance_area: d.tolerances.area,
            resolution: d.resolution,
            distance_bounds: [d.distance_bounds.0, d.distance_bounds.1],
            noise_std: d.noise_std,
            seed: None,
        }
    }
}

impl Scenario {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text).context("malformed scenario")?;
        s.base = base.to_path_buf();
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .with_context(|| format!("scenario {}", path.display()))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn scene_model(&self) -> Result<SceneModel> {
        let sc = &self.scene;
        let normals = match &sc.normals {
            Some(p) => io::read_normals(&self.resolve(p))?,
            None => ellipsoid_normals(sc.side, sc.side, 0.8, 0.95, 0.7),
        };
        let albedo = match &sc.albedo {
            Some(p) => {
                let img = io::read_image(&self.resolve(p))?;
                if (img.width(), img.height()) != (normals.width(), normals.height()) {
                    bail!("albedo and normal map differ in size");
                }
                img.luminance().to_vec()
            }
            None => textured_albedo(normals.width(), normals.height(), sc.albedo_seed),
        };
        Ok(SceneModel::new(normals, albedo, sc.ambient)?)
    }

    fn target_light(&self) -> Result<SHLight> {
        let t = &self.target;
        match (&t.pose, &t.light, &t.light_file) {
            (Some(p), None, None) => Ok(pls_to_sh(&p.pose()?)),
            (None, Some(l), None) => {
                let coeffs: [f64; 9] = l
                    .as_slice()
                    .try_into()
                    .map_err(|_| anyhow::anyhow!("target light has {} coefficients, expected 9", l.len()))?;
                Ok(SHLight::new(coeffs)?)
            }
            (None, None, Some(f)) => Ok(io::read_light(&self.resolve(f))?),
            _ => bail!("[target] needs exactly one of `pose`, `light` or `light_file`"),
        }
    }

    fn config(&self) -> RecurrenceConfig {
        let c = &self.control;
        RecurrenceConfig {
            gains: c.gains,
            max_iter: c.max_iter,
            tau: c.tau,
            tolerances: FeedbackTolerances {
                azimuth: c.tolerance_azimuth_deg.to_radians(),
                polar: c.tolerance_polar_deg.to_radians(),
                area: c.tolerance_area,
            },
            resolution: c.resolution,
            distance_bounds: (c.distance_bounds[0], c.distance_bounds[1]),
            noise_std: c.noise_std,
            seed: c.seed.unwrap_or(0),
        }
    }

    pub fn build(&self) -> Result<(SceneModel, SHLight, PLSPose, RecurrenceConfig)> {
        Ok((self.scene_model()?, self.target_light()?, self.start.pose()?, self.config()))
    }
}
