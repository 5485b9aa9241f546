//! Albedo-quotient adversarial relighting: projected sign-gradient descent
//! on the nine light coefficients inside an L∞ ball.

use crate::embedder::{similarity, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::image::FaceImage;
use crate::relight::{estimate_light, QuotientRelighter};
use crate::report::sig6;
use crate::sh::{NormalMap, SHLight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Relighting Jacobian chained with the embedder's input gradient.
    #[default]
    AnalyticChain,
    /// Central differences on the similarity over the 9 coefficients.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.4,
            iterations: 10,
            gradient_mode: GradientMode::AnalyticChain,
            fd_step: 1e-3,
        }
    }
}

impl AttackConfig {
    pub fn new(epsilon: f64, iterations: usize) -> Result<Self> {
        let cfg = AttackConfig {
            epsilon,
            iterations,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_mode(mut self, mode: GradientMode) -> Self {
        self.gradient_mode = mode;
        self
    }

    /// Step size `ε / T`.
    pub fn step(&self) -> f64 {
        self.epsilon / self.iterations as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::precondition(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(Error::precondition("iterations must be >= 1"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::precondition("fd_step must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub light: SHLight,
    /// Cosine similarity between the relit and the original embedding.
    pub similarity: f64,
    pub clamp_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AttackTrace {
    /// `T + 1` entries; entry 0 is the unmodified start.
    pub steps: Vec<TraceStep>,
    pub source_light: SHLight,
    pub adversarial_light: SHLight,
    pub image: FaceImage,
    pub initial_similarity: f64,
    pub final_similarity: f64,
}

impl AttackTrace {
    /// CSV with columns `iteration, l0..l8, similarity, clamp_fraction`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,l0,l1,l2,l3,l4,l5,l6,l7,l8,similarity,clamp_fraction\n");
        for s in &self.steps {
            out.push_str(&s.iteration.to_string());
            for c in s.light.0 {
                out.push(',');
                out.push_str(&sig6(c));
            }
            out.push_str(&format!(",{},{}\n", sig6(s.similarity), sig6(s.clamp_fraction)));
        }
        out
    }
}

/// Exact derivatives of the pre-clamp relit luminance with respect to the
/// new light; one 9-vector per pixel.
pub fn relight_jacobian(
    image: &FaceImage,
    normals: &NormalMap,
    light: &SHLight,
    new_light: &SHLight,
) -> Result<Vec<[f64; 9]>> {
    Ok(QuotientRelighter::new(image, normals, light)?.jacobian(new_light))
}

fn chain(jac: &[[f64; 9]], pixel_grad: &[f64]) -> [f64; 9] {
    let mut g = [0.0; 9];
    for (row, &d) in jac.iter().zip(pixel_grad) {
        if d == 0.0 {
            continue;
        }
        for j in 0..9 {
            g[j] += row[j] * d;
        }
    }
    g
}

pub(crate) fn analytic_gradient(
    relighter: &QuotientRelighter<'_>,
    light: &SHLight,
    reference: &Embedding,
    embedder: &dyn Embedder,
) -> Result<[f64; 9]> {
    let relit = relighter.relight(light)?;
    let pixel_grad = embedder.input_gradient(&relit.image, reference.values())?;
    Ok(chain(&relighter.jacobian(light), &pixel_grad))
}

pub(crate) fn fd_gradient(
    relighter: &QuotientRelighter<'_>,
    light: &SHLight,
    reference: &Embedding,
    embedder: &dyn Embedder,
    h: f64,
) -> Result<[f64; 9]> {
    let mut g = [0.0; 9];
    for j in 0..9 {
        let mut plus = *light;
        plus[j] += h;
        let mut minus = *light;
        minus[j] -= h;
        let sp = similarity(&embedder.embed(&relighter.relight(&plus)?.image)?, reference)?;
        let sm = similarity(&embedder.embed(&relighter.relight(&minus)?.image)?, reference)?;
        g[j] = (sp - sm) / (2.0 * h);
    }
    Ok(g)
}

/// Gradient of `sim(φ(relight(I, L → L')), φ(I))` with respect to `L'`
/// through the analytic relighting Jacobian.
pub fn loss_gradient_analytic(
    image: &FaceImage,
    normals: &NormalMap,
    light: &SHLight,
    new_light: &SHLight,
    embedder: &dyn Embedder,
) -> Result<[f64; 9]> {
    let relighter = QuotientRelighter::new(image, normals, light)?;
    let reference = embedder.embed(image)?;
    analytic_gradient(&relighter, new_light, &reference, embedder)
}

/// Central-difference estimate of the same gradient (18 embeddings).
pub fn loss_gradient_fd(
    image: &FaceImage,
    normals: &NormalMap,
    light: &SHLight,
    new_light: &SHLight,
    embedder: &dyn Embedder,
    h: f64,
) -> Result<[f64; 9]> {
    if !(h > 0.0) {
        return Err(Error::precondition("finite-difference step must be > 0"));
    }
    let relighter = QuotientRelighter::new(image, normals, light)?;
    let reference = embedder.embed(image)?;
    fd_gradient(&relighter, new_light, &reference, embedder, h)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs `T` projected sign-gradient steps minimizing the similarity between
/// the relit face and the original. Without a light, one is estimated from
/// the image.
pub fn attack(
    image: &FaceImage,
    normals: &NormalMap,
    light: Option<&SHLight>,
    embedder: &dyn Embedder,
    cfg: &AttackConfig,
) -> Result<AttackTrace> {
    cfg.validate()?;
    let source = match light {
        Some(l) => *l,
        None => estimate_light(image, normals)?,
    };
    let relighter = QuotientRelighter::new(image, normals, &source)?;
    let reference = embedder.embed(image)?;
    let step = cfg.step();

    let mut current = source;
    let first = relighter.relight(&current)?;
    let initial_similarity = similarity(&embedder.embed(&first.image)?, &reference)?;
    let mut steps = Vec::with_capacity(cfg.iterations + 1);
    steps.push(TraceStep {
        iteration: 0,
        light: current,
        similarity: initial_similarity,
        clamp_fraction: first.clamp_fraction,
    });
    let mut last_image = first.image;

    for t in 1..=cfg.iterations {
        let g = match cfg.gradient_mode {
            GradientMode::AnalyticChain => analytic_gradient(&relighter, &current, &reference, embedder)?,
            GradientMode::FiniteDifference => fd_gradient(&relighter, &current, &reference, embedder, cfg.fd_step)?,
        };
        for j in 0..9 {
            let lo = source[j] - cfg.epsilon;
            let hi = source[j] + cfg.epsilon;
            current[j] = (current[j] - step * sign(g[j])).clamp(lo, hi);
        }
        let relit = relighter.relight(&current)?;
        let sim = similarity(&embedder.embed(&relit.image)?, &reference)?;
        steps.push(TraceStep {
            iteration: t,
            light: current,
            similarity: sim,
            clamp_fraction: relit.clamp_fraction,
        });
        last_image = relit.image;
    }

    let final_similarity = steps.last().map(|s| s.similarity).unwrap_or(initial_similarity);
    Ok(AttackTrace {
        steps,
        source_light: source,
        adversarial_light: current,
        image: last_image,
        initial_similarity,
        final_similarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{BuiltinEmbedder, EmbedderDescriptor};
    use crate::relight::quotient_relight;
    use crate::synth::{ellipsoid_normals, textured_albedo};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64) -> (FaceImage, NormalMap, SHLight) {
        let normals = ellipsoid_normals(40, 40, 0.8, 0.95, 0.7);
        let albedo = textured_albedo(40, 40, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let light = SHLight([
            0.75,
            rng.random_range(-0.15..0.15),
            rng.random_range(0.05..0.25),
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ]);
        let lum: Vec<f64> = (0..1600)
            .map(|i| {
                if normals.mask()[i] {
                    albedo[i] * light.irradiance(normals.normals()[i])
                } else {
                    0.5
                }
            })
            .collect();
        (FaceImage::from_luminance(40, 40, &lum).unwrap(), normals, light)
    }

    #[test]
    fn step_is_epsilon_over_t() {
        let cfg = AttackConfig::new(0.8, 10).unwrap();
        assert!((cfg.step() - 0.08).abs() < 1e-15);
        assert!((cfg.step() * 10.0 - 0.8).abs() < 1e-12);
        assert!(AttackConfig::new(-0.1, 10).is_err());
        assert!(AttackConfig::new(0.1, 0).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..5 {
            let (img, n, l) = scene(seed);
            let mut lp = l;
            lp[1] += 0.05;
            lp[3] -= 0.03;
            let jac = relight_jacobian(&img, &n, &l, &lp).unwrap();
            let r = QuotientRelighter::new(&img, &n, &l).unwrap();
            let h = 1e-4;
            for j in 0..9 {
                let mut plus = lp;
                plus[j] += h;
                let mut minus = lp;
                minus[j] -= h;
                let a = quotient_relight(&img, &n, &l, &plus).unwrap();
                let b = quotient_relight(&img, &n, &l, &minus).unwrap();
                let pre = r.pre_clamp(&lp);
                for (k, &i) in r.indices().iter().enumerate() {
                    if pre[k] < 0.01 || pre[k] > 0.99 {
                        continue;
                    }
                    let fd = (a.image.luminance()[i] - b.image.luminance()[i]) / (2.0 * h);
                    let an = jac[i][j];
                    assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-6), "seed {seed} px {i} coef {j}: {fd} vs {an}");
                }
            }
            for (i, &m) in n.mask().iter().enumerate() {
                if !m {
                    assert_eq!(jac[i], [0.0; 9]);
                }
            }
        }
    }

    #[test]
    fn jacobian_is_independent_of_new_light_where_unclamped() {
        let (img, n, l) = scene(3);
        let mut l2 = l;
        l2[2] += 0.02;
        let r = QuotientRelighter::new(&img, &n, &l).unwrap();
        let (a, b) = (r.jacobian(&l), r.jacobian(&l2));
        let (pa, pb) = (r.pre_clamp(&l), r.pre_clamp(&l2));
        for (k, &i) in r.indices().iter().enumerate() {
            if (0.0..=1.0).contains(&pa[k]) && (0.0..=1.0).contains(&pb[k]) {
                assert_eq!(a[i], b[i]);
            }
        }
    }

    #[test]
    fn fd_and_analytic_gradients_agree() {
        let e = BuiltinEmbedder::default();
        for seed in 0..4 {
            let (img, n, l) = scene(seed);
            let mut lp = l;
            lp[0] += 0.02;
            lp[2] -= 0.04;
            let an = loss_gradient_analytic(&img, &n, &l, &lp, &e).unwrap();
            let fd = loss_gradient_fd(&img, &n, &l, &lp, &e, 1e-3).unwrap();
            let num: f64 = an.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = an.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-2, "seed {seed}: relative error {}", num / den);
        }
    }

    #[test]
    fn fd_estimate_converges_quadratically() {
        let e = BuiltinEmbedder::default();
        let (img, n, l) = scene(7);
        let mut lp = l;
        lp[3] += 0.05;
        let exact = loss_gradient_analytic(&img, &n, &l, &lp, &e).unwrap();
        let err = |h: f64| {
            let g = loss_gradient_fd(&img, &n, &l, &lp, &e, h).unwrap();
            g.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let (e1, e2) = (err(2e-2), err(1e-2));
        // Halving h should cut the truncation error about four-fold.
        assert!(e2 < e1 / 2.5, "errors {e1} -> {e2}");
    }

    struct Blind;
    impl Embedder for Blind {
        fn descriptor(&self) -> EmbedderDescriptor {
            EmbedderDescriptor {
                name: "blind".into(),
                dimension: 2,
                differentiable: false,
            }
        }
        fn embed(&self, _: &FaceImage) -> Result<Embedding> {
            Ok(Embedding::axis(2, 1))
        }
    }

    #[test]
    fn constant_landscape_has_zero_fd_gradient() {
        let (img, n, l) = scene(1);
        let g = loss_gradient_fd(&img, &n, &l, &l, &Blind, 1e-3).unwrap();
        assert_eq!(g, [0.0; 9]);
        // The analytic path needs input gradients.
        assert!(matches!(
            loss_gradient_analytic(&img, &n, &l, &l, &Blind),
            Err(Error::NotDifferentiable(_))
        ));
    }

    #[test]
    fn zero_ball_is_identity() {
        let e = BuiltinEmbedder::default();
        let (img, n, l) = scene(2);
        let trace = attack(&img, &n, Some(&l), &e, &AttackConfig::new(0.0, 10).unwrap()).unwrap();
        assert_eq!(trace.steps.len(), 11);
        assert_eq!(trace.adversarial_light, l);
        assert_eq!(trace.final_similarity, trace.initial_similarity);
        for (a, b) in trace.image.luminance().iter().zip(img.luminance()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attack_respects_ball_and_lowers_similarity() {
        let e = BuiltinEmbedder::default();
        for mode in [GradientMode::AnalyticChain, GradientMode::FiniteDifference] {
            let (img, n, _) = scene(4);
            let cfg = AttackConfig::new(0.3, 10).unwrap().with_mode(mode);
            let trace = attack(&img, &n, None, &e, &cfg).unwrap();
            assert_eq!(trace.steps.len(), cfg.iterations + 1);
            for s in &trace.steps {
                assert!(s.light.linf_distance(&trace.source_light) <= cfg.epsilon + 1e-9);
            }
            assert!(trace.final_similarity < trace.initial_similarity);
            let again = attack(&img, &n, None, &e, &cfg).unwrap();
            assert_eq!(trace.steps, again.steps);
            let csv = trace.to_csv();
            assert_eq!(csv.lines().count(), cfg.iterations + 2);
        }
    }
}
