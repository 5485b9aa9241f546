//! One-step adversarial light prediction (AdvLNet).
//!
//! A three-layer perceptron maps the estimated light of a face to a residual
//! that is added to it. The dynamic variant generates the middle layer's
//! weights from the face embedding. Training minimizes the similarity of the
//! relit face to the original plus the mean absolute luminance change.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aq::GradientMode;
use crate::embedder::{similarity, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::image::{mean_abs_change, FaceImage};
use crate::relight::{estimate_light, QuotientRelighter};
use crate::report::sig6;
use crate::sh::{NormalMap, SHLight};

pub const DEFAULT_HIDDEN: usize = 32;
const PARAM_FORMAT: &str = "advlnet";
const PARAM_VERSION: u32 = 1;
const OUTPUT_INIT_STD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Static,
    Dynamic,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Variant::Static),
            "dynamic" => Ok(Variant::Dynamic),
            _ => Err(Error::Parse(format!("unknown variant `{s}` (static|dynamic)"))),
        }
    }
}

/// Weights are row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvLNetParams {
    pub variant: Variant,
    pub hidden: usize,
    /// Embedding dimension consumed by the generator (0 for static).
    pub embed_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Middle-layer weights; for the dynamic variant, the generator bias.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    /// Generator, `(hidden · hidden) × embed_dim`; empty for static.
    pub gen: Vec<f64>,
}

impl AdvLNetParams {
    /// He-initialized hidden layers and a small random output layer.
    ///
    /// A zero output layer would start training at the identity, which is a
    /// stationary point of the loss: the similarity term is at its maximum
    /// and the absolute-change term pulls back toward it.
    pub fn init(variant: Variant, hidden: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        Self::init_scaled(variant, hidden, embed_dim, seed, OUTPUT_INIT_STD)
    }

    /// As [`Self::init`] with output-layer weights drawn with standard
    /// deviation `output_std`; zero gives the identity network.
    pub fn init_scaled(variant: Variant, hidden: usize, embed_dim: usize, seed: u64, output_std: f64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::precondition("hidden width must be >= 1"));
        }
        if variant == Variant::Dynamic && embed_dim < 2 {
            return Err(Error::precondition("dynamic variant needs an embedding dimension >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, std: f64| -> Vec<f64> {
            let d = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        };
        let w1 = draw(hidden * 9, (2.0 / 9.0f64).sqrt());
        let w2 = draw(hidden * hidden, (2.0 / hidden as f64).sqrt());
        let (embed_dim, gen) = match variant {
            Variant::Static => (0, Vec::new()),
            Variant::Dynamic => (
                embed_dim,
                draw(hidden * hidden * embed_dim, 0.5 * (2.0 / hidden as f64).sqrt()),
            ),
        };
        let w3 = if output_std > 0.0 {
            draw(9 * hidden, output_std)
        } else {
            vec![0.0; 9 * hidden]
        };
        Ok(AdvLNetParams {
            variant,
            hidden,
            embed_dim,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; hidden],
            w3,
            b3: vec![0.0; 9],
            gen,
        })
    }

    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        AdvLNetParams {
            variant: self.variant,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
            w3: z(&self.w3),
            b3: z(&self.b3),
            gen: z(&self.gen),
        }
    }

    fn tensors(&self) -> [(&'static str, &Vec<f64>); 7] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
            ("gen", &self.gen),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.gen,
        ]
    }

    fn shape(&self, name: &str) -> Vec<usize> {
        let h = self.hidden;
        match name {
            "w1" => vec![h, 9],
            "b1" | "b2" => vec![h],
            "w2" => vec![h, h],
            "w3" => vec![9, h],
            "b3" => vec![9],
            "gen" => vec![h * h, self.embed_dim],
            _ => unreachable!(),
        }
    }

    /// All parameters in file order (`w1, b1, w2, b2, w3, b3, gen`).
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Overwrites all parameters from a vector in [`Self::flatten`] order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters", self.parameter_count()),
                actual: values.len().to_string(),
            });
        }
        let mut rest = values;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            let want: usize = if name == "gen" && self.variant == Variant::Static {
                0
            } else {
                self.shape(name).iter().product()
            };
            if t.len() != want {
                return Err(Error::DimensionMismatch {
                    expected: format!("{want} values in `{name}`"),
                    actual: t.len().to_string(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter `{name}`")));
            }
        }
        Ok(())
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.1) {
                *d += a * s;
            }
        }
    }

    fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ParamFile {
            format: PARAM_FORMAT.into(),
            version: PARAM_VERSION,
            variant: self.variant,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            tensors: self
                .tensors()
                .into_iter()
                .filter(|(_, t)| !t.is_empty())
                .map(|(name, t)| TensorRecord {
                    name: name.into(),
                    shape: self.shape(name),
                    data: t.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamFile = serde_json::from_str(text)?;
        if file.format != PARAM_FORMAT {
            return Err(Error::Parse(format!("not an AdvLNet parameter file: `{}`", file.format)));
        }
        if file.version != PARAM_VERSION {
            return Err(Error::Parse(format!("unsupported parameter file version {}", file.version)));
        }
        let mut p = AdvLNetParams {
            variant: file.variant,
            hidden: file.hidden,
            embed_dim: if file.variant == Variant::Static { 0 } else { file.embed_dim },
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
            w3: Vec::new(),
            b3: Vec::new(),
            gen: Vec::new(),
        };
        for rec in file.tensors {
            let shape = match rec.name.as_str() {
                "w1" | "b1" | "w2" | "b2" | "w3" | "b3" | "gen" => p.shape(&rec.name),
                other => return Err(Error::Parse(format!("unknown tensor `{other}`"))),
            };
            if rec.shape != shape {
                return Err(Error::DimensionMismatch {
                    expected: format!("`{}` of shape {:?}", rec.name, shape),
                    actual: format!("{:?}", rec.shape),
                });
            }
            let slot = match rec.name.as_str() {
                "w1" => &mut p.w1,
                "b1" => &mut p.b1,
                "w2" => &mut p.w2,
                "b2" => &mut p.b2,
                "w3" => &mut p.w3,
                "b3" => &mut p.b3,
                _ => &mut p.gen,
            };
            *slot = rec.data;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    format: String,
    version: u32,
    variant: Variant,
    hidden: usize,
    embed_dim: usize,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn matvec(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| bi + w[i * n..(i + 1) * n].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn matvec_t(w: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &yi) in y.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += a * yi;
        }
    }
    out
}

fn outer_add(dst: &mut [f64], y: &[f64], x: &[f64]) {
    let n = x.len();
    for (i, &yi) in y.iter().enumerate() {
        for (d, &xj) in dst[i * n..(i + 1) * n].iter_mut().zip(x) {
            *d += yi * xj;
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Tape {
    x: [f64; 9],
    a1: Vec<f64>,
    h1: Vec<f64>,
    w2: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&a| a.max(0.0)).collect()
}

fn middle_weights(p: &AdvLNetParams, embedding: &[f64]) -> Result<Vec<f64>> {
    match p.variant {
        Variant::Static => Ok(p.w2.clone()),
        Variant::Dynamic => {
            if embedding.len() != p.embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: format!("embedding of dimension {}", p.embed_dim),
                    actual: embedding.len().to_string(),
                });
            }
            Ok(matvec(&p.gen, embedding, &p.w2))
        }
    }
}

fn forward(p: &AdvLNetParams, light: &SHLight, embedding: &[f64]) -> Result<([f64; 9], Tape)> {
    let x = light.0;
    let a1 = matvec(&p.w1, &x, &p.b1);
    let h1 = relu(&a1);
    let w2 = middle_weights(p, embedding)?;
    let a2 = matvec(&w2, &h1, &p.b2);
    let h2 = relu(&a2);
    let out = matvec(&p.w3, &h2, &p.b3);
    let out: [f64; 9] = out.try_into().expect("nine outputs");
    Ok((
        out,
        Tape {
            x,
            a1,
            h1,
            w2,
            a2,
            h2,
        },
    ))
}

/// Accumulates into `grad` the parameter gradient of `⟨d_out, net(x, e)⟩`.
fn backward(p: &AdvLNetParams, tape: &Tape, embedding: &[f64], d_out: &[f64; 9], grad: &mut AdvLNetParams) {
    let h = p.hidden;
    outer_add(&mut grad.w3, d_out, &tape.h2);
    for (g, d) in grad.b3.iter_mut().zip(d_out) {
        *g += d;
    }
    let dh2 = matvec_t(&p.w3, d_out, h);
    let da2: Vec<f64> = dh2.iter().zip(&tape.a2).map(|(&g, &a)| if a > 0.0 { g } else { 0.0 }).collect();
    let mut dw2 = vec![0.0; h * h];
    outer_add(&mut dw2, &da2, &tape.h1);
    for (g, d) in grad.b2.iter_mut().zip(&da2) {
        *g += d;
    }
    let dh1 = matvec_t(&tape.w2, &da2, h);
    let da1: Vec<f64> = dh1.iter().zip(&tape.a1).map(|(&g, &a)| if a > 0.0 { g } else { 0.0 }).collect();
    outer_add(&mut grad.w1, &da1, &tape.x);
    for (g, d) in grad.b1.iter_mut().zip(&da1) {
        *g += d;
    }
    if p.variant == Variant::Dynamic {
        outer_add(&mut grad.gen, &dw2, embedding);
    }
    for (g, d) in grad.w2.iter_mut().zip(&dw2) {
        *g += d;
    }
}

/// Light predicted for a face: the input light plus the network residual.
pub fn predict_light(params: &AdvLNetParams, light: &SHLight, embedding: &Embedding) -> Result<SHLight> {
    let (out, _) = forward(params, light, embedding.values())?;
    Ok(*light + SHLight(out))
}

/// Estimates the light of `image`, predicts an adversarial light in one
/// forward pass and relights the face with it.
pub fn predict(
    image: &FaceImage,
    normals: &NormalMap,
    params: &AdvLNetParams,
    embedder: &dyn Embedder,
) -> Result<(FaceImage, SHLight)> {
    params.validate()?;
    let light = estimate_light(image, normals)?;
    let e = embedder.embed(image)?;
    let adv = predict_light(params, &light, &e)?;
    let relit = QuotientRelighter::new(image, normals, &light)?.relight(&adv)?;
    Ok((relit.image, adv))
}

/// Similarity to the original plus mean absolute luminance change over all
/// pixels.
pub fn loss(original: &FaceImage, relit: &FaceImage, embedder: &dyn Embedder) -> Result<f64> {
    if original.width() != relit.width() || original.height() != relit.height() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", original.width(), original.height()),
            actual: format!("{}x{}", relit.width(), relit.height()),
        });
    }
    let sim = similarity(&embedder.embed(relit)?, &embedder.embed(original)?)?;
    Ok(sim + mean_abs_change(original, relit))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            gradient_mode: GradientMode::AnalyticChain,
            fd_step: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.momentum >= 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::precondition(
                "learning rate must be > 0, momentum >= 0, batch size and epochs >= 1",
            ));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::precondition("fd_step must be > 0"));
        }
        Ok(())
    }
}

/// One training face with everything that does not depend on the network.
struct Prepared<'a> {
    image: &'a FaceImage,
    relighter: QuotientRelighter<'a>,
    embedding: Embedding,
}

fn prepare<'a>(image: &'a FaceImage, normals: &NormalMap, embedder: &dyn Embedder) -> Result<Prepared<'a>> {
    let light = estimate_light(image, normals)?;
    Ok(Prepared {
        image,
        relighter: QuotientRelighter::new(image, normals, &light)?,
        embedding: embedder.embed(image)?,
    })
}

fn sample_loss(s: &Prepared<'_>, light: &SHLight, embedder: &dyn Embedder) -> Result<(f64, FaceImage)> {
    let relit = s.relighter.relight(light)?.image;
    let sim = similarity(&embedder.embed(&relit)?, &s.embedding)?;
    Ok((sim + mean_abs_change(s.image, &relit), relit))
}

/// Loss of one sample and its gradient with respect to the predicted light.
fn light_gradient(
    s: &Prepared<'_>,
    light: &SHLight,
    embedder: &dyn Embedder,
    cfg: &TrainConfig,
) -> Result<(f64, [f64; 9])> {
    let (value, relit) = sample_loss(s, light, embedder)?;
    let g = match cfg.gradient_mode {
        GradientMode::AnalyticChain => {
            let mut pixel = embedder.input_gradient(&relit, s.embedding.values())?;
            let n = relit.pixel_count() as f64;
            for ((g, a), b) in pixel.iter_mut().zip(relit.luminance()).zip(s.image.luminance()) {
                let d = a - b;
                if d.abs() > 1e-12 {
                    *g += d.signum() / n;
                }
            }
            let jac = s.relighter.jacobian(light);
            let mut g = [0.0; 9];
            for (row, &d) in jac.iter().zip(&pixel) {
                for j in 0..9 {
                    g[j] += row[j] * d;
                }
            }
            g
        }
        GradientMode::FiniteDifference => {
            let h = cfg.fd_step;
            let mut g = [0.0; 9];
            for j in 0..9 {
                let mut plus = *light;
                plus[j] += h;
                let mut minus = *light;
                minus[j] -= h;
                g[j] = (sample_loss(s, &plus, embedder)?.0 - sample_loss(s, &minus, embedder)?.0) / (2.0 * h);
            }
            g
        }
    };
    Ok((value, g))
}

fn sample_gradient(
    params: &AdvLNetParams,
    s: &Prepared<'_>,
    embedder: &dyn Embedder,
    cfg: &TrainConfig,
) -> Result<(f64, AdvLNetParams)> {
    let source = *s.relighter.source_light();
    let (out, tape) = forward(params, &source, s.embedding.values())?;
    let predicted = source + SHLight(out);
    let (value, d_light) = light_gradient(s, &predicted, embedder, cfg)?;
    let mut grad = params.zeros_like();
    backward(params, &tape, s.embedding.values(), &d_light, &mut grad);
    Ok((value, grad))
}

/// Training loss of one face under `params`.
pub fn sample_objective(
    params: &AdvLNetParams,
    image: &FaceImage,
    normals: &NormalMap,
    embedder: &dyn Embedder,
) -> Result<f64> {
    let s = prepare(image, normals, embedder)?;
    let light = predict_light(params, s.relighter.source_light(), &s.embedding)?;
    Ok(sample_loss(&s, &light, embedder)?.0)
}

/// Training loss of one face and its gradient with respect to every
/// parameter, by backpropagation.
pub fn sample_objective_gradient(
    params: &AdvLNetParams,
    image: &FaceImage,
    normals: &NormalMap,
    embedder: &dyn Embedder,
    cfg: &TrainConfig,
) -> Result<(f64, AdvLNetParams)> {
    params.validate()?;
    let s = prepare(image, normals, embedder)?;
    sample_gradient(params, &s, embedder, cfg)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AdvLNetParams,
    /// Mean sample loss of each epoch.
    pub history: Vec<f64>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.history.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, sig6(*l)));
        }
        out
    }
}

/// Mini-batch SGD with momentum (`v ← μv + g`, `θ ← θ − lr·v`) on the
/// training loss. Per-sample gradients within a batch are computed in
/// parallel and summed in batch order.
pub fn train(
    corpus: &[(FaceImage, NormalMap)],
    embedder: &dyn Embedder,
    init: AdvLNetParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if corpus.is_empty() {
        return Err(Error::precondition("training corpus is empty"));
    }
    if cfg.gradient_mode == GradientMode::AnalyticChain && !embedder.descriptor().differentiable {
        return Err(Error::NotDifferentiable(embedder.descriptor().name));
    }
    let prepared: Vec<Prepared<'_>> = corpus
        .iter()
        .map(|(img, n)| prepare(img, n, embedder))
        .collect::<Result<_>>()?;

    let mut params = init;
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, AdvLNetParams)>> = batch
                .par_iter()
                .map(|&i| sample_gradient(&params, &prepared[i], embedder, cfg))
                .collect();
            let mut grad = params.zeros_like();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grad.axpy(1.0, &g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            epoch_loss += batch_loss;
            grad.scale(1.0 / batch.len() as f64);
            velocity.scale(cfg.momentum);
            velocity.axpy(1.0, &grad);
            params.axpy(-cfg.learning_rate, &velocity);
        }
        history.push(epoch_loss / prepared.len() as f64);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{BuiltinEmbedder, EmbedderDescriptor};
    use crate::synth::{generate_corpus, CorpusConfig};

    fn small_corpus(n: usize) -> Vec<(FaceImage, NormalMap)> {
        let cfg = CorpusConfig {
            identities: 2,
            images_per_identity: n.div_ceil(2),
            side: 32,
            seed: 11,
        };
        generate_corpus(&cfg)
            .into_iter()
            .flat_map(|id| id.samples.into_iter().map(|s| (s.image, s.normals)))
            .take(n)
            .collect()
    }

    fn perturbed(mut p: AdvLNetParams, seed: u64) -> AdvLNetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.05).unwrap();
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += d.sample(&mut rng);
            }
        }
        p
    }

    #[test]
    fn zero_output_layer_predicts_the_input_light() {
        let (img, n) = small_corpus(1).remove(0);
        let emb = BuiltinEmbedder::default();
        for variant in [Variant::Static, Variant::Dynamic] {
            let p = AdvLNetParams::init_scaled(variant, 16, 128, 1, 0.0).unwrap();
            let (out, light) = predict(&img, &n, &p, &emb).unwrap();
            assert_eq!(light, estimate_light(&img, &n).unwrap());
            let diff = out
                .luminance()
                .iter()
                .zip(img.luminance())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-9, "{diff}");
        }
    }

    #[test]
    fn dynamic_contains_static() {
        let s = perturbed(AdvLNetParams::init(Variant::Static, 8, 0, 2).unwrap(), 3);
        let mut d = AdvLNetParams::init(Variant::Dynamic, 8, 16, 2).unwrap();
        assert!(d.parameter_count() > s.parameter_count());
        d.w1 = s.w1.clone();
        d.b1 = s.b1.clone();
        d.w2 = s.w2.clone();
        d.b2 = s.b2.clone();
        d.w3 = s.w3.clone();
        d.b3 = s.b3.clone();
        d.gen.iter_mut().for_each(|v| *v = 0.0);
        let light = SHLight([0.7, 0.1, 0.2, -0.1, 0.05, 0.0, -0.02, 0.03, 0.01]);
        let e = Embedding::axis(16, 3);
        let a = predict_light(&s, &light, &Embedding::axis(2, 0)).unwrap();
        let b = predict_light(&d, &light, &e).unwrap();
        assert!(a.linf_distance(&b) < 1e-12);
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    fn flat(p: &AdvLNetParams) -> Vec<f64> {
        p.flatten()
    }

    fn set_flat(p: &mut AdvLNetParams, k: usize, v: f64) {
        let mut theta = p.flatten();
        theta[k] = v;
        p.assign_flat(&theta).unwrap();
    }

    #[test]
    fn network_backward_matches_finite_differences() {
        for variant in [Variant::Static, Variant::Dynamic] {
            let p = perturbed(AdvLNetParams::init(variant, 8, 6, 4).unwrap(), 5);
            let e = Embedding::normalize(vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2]).unwrap();
            let light = SHLight([0.7, 0.1, 0.2, -0.1, 0.05, 0.0, -0.02, 0.03, 0.01]);
            let up = [0.3, -1.0, 0.2, 0.5, -0.7, 0.1, 0.9, -0.2, 0.4];
            let f = |q: &AdvLNetParams| -> f64 {
                let (o, _) = forward(q, &light, e.values()).unwrap();
                o.iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let (_, tape) = forward(&p, &light, e.values()).unwrap();
            let mut g = p.zeros_like();
            backward(&p, &tape, e.values(), &up, &mut g);
            let theta = flat(&p);
            let h = 1e-6;
            let fd: Vec<f64> = (0..theta.len())
                .map(|k| {
                    let mut a = p.clone();
                    set_flat(&mut a, k, theta[k] + h);
                    let mut b = p.clone();
                    set_flat(&mut b, k, theta[k] - h);
                    (f(&a) - f(&b)) / (2.0 * h)
                })
                .collect();
            let err = rel_err(&flat(&g), &fd);
            assert!(err < 1e-4, "{variant:?}: {err}");
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let corpus = small_corpus(1);
        let emb = BuiltinEmbedder::default();
        let cfg = TrainConfig::default();
        for variant in [Variant::Static, Variant::Dynamic] {
            let p = perturbed(AdvLNetParams::init(variant, 8, 128, 6).unwrap(), 7);
            let s = prepare(&corpus[0].0, &corpus[0].1, &emb).unwrap();
            let (_, g) = sample_gradient(&p, &s, &emb, &cfg).unwrap();
            let f = |q: &AdvLNetParams| -> f64 {
                let src = *s.relighter.source_light();
                let l = predict_light(q, &src, &s.embedding).unwrap();
                sample_loss(&s, &l, &emb).unwrap().0
            };
            let theta = flat(&p);
            // The generator has 8·8·128 entries; a strided subset suffices.
            let ks: Vec<usize> = (0..theta.len()).step_by(if variant == Variant::Static { 1 } else { 17 }).collect();
            let h = 1e-6;
            let fd: Vec<f64> = ks
                .iter()
                .map(|&k| {
                    let mut a = p.clone();
                    set_flat(&mut a, k, theta[k] + h);
                    let mut b = p.clone();
                    set_flat(&mut b, k, theta[k] - h);
                    (f(&a) - f(&b)) / (2.0 * h)
                })
                .collect();
            let gf = flat(&g);
            let an: Vec<f64> = ks.iter().map(|&k| gf[k]).collect();
            let err = rel_err(&an, &fd);
            assert!(err < 1e-4, "{variant:?}: {err}");
        }
    }

    #[test]
    fn loss_of_identical_images_is_one() {
        let (img, _) = small_corpus(1).remove(0);
        assert_eq!(loss(&img, &img, &BuiltinEmbedder::default()).unwrap(), 1.0);
    }

    struct Constant;

    impl Embedder for Constant {
        fn descriptor(&self) -> EmbedderDescriptor {
            EmbedderDescriptor {
                name: "constant".into(),
                dimension: 2,
                differentiable: true,
            }
        }

        fn embed(&self, _: &FaceImage) -> Result<Embedding> {
            Ok(Embedding::axis(2, 0))
        }

        fn input_gradient(&self, image: &FaceImage, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; image.pixel_count()])
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        // With the output layer at zero the relit image equals the input, so
        // the absolute-change term contributes nothing either.
        let corpus = small_corpus(8);
        let init = AdvLNetParams::init_scaled(Variant::Static, 8, 0, 9, 0.0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let out = train(&corpus, &Constant, init.clone(), &cfg).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let corpus = small_corpus(16);
        let emb = BuiltinEmbedder::default();
        let init = AdvLNetParams::init(Variant::Static, 16, 0, 1).unwrap();
        let cfg = TrainConfig::default();
        let a = train(&corpus, &emb, init.clone(), &cfg).unwrap();
        let b = train(&corpus, &emb, init, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert!(a.history.last().unwrap() < a.history.first().unwrap(), "{:?}", a.history);
    }

    #[test]
    fn parameter_file_round_trip() {
        for variant in [Variant::Static, Variant::Dynamic] {
            let p = perturbed(AdvLNetParams::init(variant, 4, 8, 1).unwrap(), 2);
            let q = AdvLNetParams::from_json(&p.to_json().unwrap()).unwrap();
            assert_eq!(p, q);
        }
        assert!(AdvLNetParams::from_json(r#"{"format":"other","version":1,"variant":"static","hidden":2,"embed_dim":0,"tensors":[]}"#).is_err());
    }
}
