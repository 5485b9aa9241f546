//! Verification-attack evaluation: reference/target splits, attack suites,
//! similarity matrices, ROC/AUC and the light-sensitivity histogram.

mod hex;
mod roc;

pub use hex::{clustered_pairs, hex_cell, hex_center, sensitivity_analysis, HexCell, SensitivityHistogram};
pub use roc::{roc_auc, GroundTruth, Roc, RocPoint, SimilarityMatrix};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ap::{predict, AdvLNetParams};
use crate::aq::{attack, AttackConfig};
use crate::embedder::{similarity, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::image::{mean_abs_change, FaceImage};
use crate::io::{read_image, read_normals, Manifest};
use crate::relight::{estimate_light, random_relight};
use crate::report::{roc_svg, sig6};
use crate::sh::{NormalMap, SHLight};
use crate::synth::{generate_corpus, CorpusConfig};

#[derive(Debug, Clone)]
pub struct Face {
    pub image: FaceImage,
    pub normals: NormalMap,
}

#[derive(Debug, Clone)]
pub struct DatasetIdentity {
    pub id: String,
    pub faces: Vec<Face>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Images per reference (and per target) subset.
    pub k: usize,
    pub identities: Vec<DatasetIdentity>,
}

impl Dataset {
    pub fn synthetic(cfg: &CorpusConfig, k: usize) -> Self {
        let identities = generate_corpus(cfg)
            .into_iter()
            .map(|id| DatasetIdentity {
                id: id.id,
                faces: id
                    .samples
                    .into_iter()
                    .map(|s| Face {
                        image: s.image,
                        normals: s.normals,
                    })
                    .collect(),
            })
            .collect();
        Dataset { k, identities }
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        m.validate()?;
        let identities = m
            .identities
            .iter()
            .map(|id| {
                let faces = id
                    .images
                    .par_iter()
                    .zip(id.normals.par_iter())
                    .map(|(i, n)| {
                        let image = read_image(&m.resolve(i))?;
                        let normals = read_normals(&m.resolve(n))?;
                        if image.width() != normals.width() || image.height() != normals.height() {
                            return Err(Error::Manifest(format!(
                                "{} and {} differ in size",
                                i.display(),
                                n.display()
                            )));
                        }
                        Ok(Face { image, normals })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(DatasetIdentity { id: id.id.clone(), faces })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { k: m.k, identities })
    }

    pub fn face(&self, item: &SplitItem) -> &Face {
        &self.identities[item.identity].faces[item.index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitItem {
    pub identity: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub reference: Vec<SplitItem>,
    pub target: Vec<SplitItem>,
}

impl Split {
    pub fn reference_labels(&self) -> Vec<usize> {
        self.reference.iter().map(|i| i.identity).collect()
    }

    pub fn target_labels(&self) -> Vec<usize> {
        self.target.iter().map(|i| i.identity).collect()
    }
}

/// Shuffles each identity's `2k` faces under `seed` and gives the first `k`
/// to the reference set, the rest to the target set.
pub fn build_split(dataset: &Dataset, seed: u64) -> Result<Split> {
    let k = dataset.k;
    if k == 0 {
        return Err(Error::Manifest("k must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = Vec::new();
    let mut target = Vec::new();
    for (i, id) in dataset.identities.iter().enumerate() {
        if id.faces.len() != 2 * k {
            return Err(Error::Manifest(format!(
                "identity `{}` has {} images, expected 2k = {}",
                id.id,
                id.faces.len(),
                2 * k
            )));
        }
        let mut order: Vec<usize> = (0..2 * k).collect();
        order.shuffle(&mut rng);
        reference.extend(order[..k].iter().map(|&index| SplitItem { identity: i, index }));
        target.extend(order[k..].iter().map(|&index| SplitItem { identity: i, index }));
    }
    Ok(Split { reference, target })
}

#[derive(Debug, Clone)]
pub enum AttackMethod {
    None,
    Random { epsilon: f64 },
    Aq { config: AttackConfig },
    Ap { params: Box<AdvLNetParams> },
}

impl AttackMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::None => "none",
            AttackMethod::Random { .. } => "random",
            AttackMethod::Aq { .. } => "aq",
            AttackMethod::Ap { .. } => "ap",
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            AttackMethod::Random { epsilon } => Some(*epsilon),
            AttackMethod::Aq { config } => Some(config.epsilon),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackedFace {
    pub image: FaceImage,
    /// Estimated light of the target face, if estimation succeeded.
    pub light: Option<SHLight>,
    pub adversarial_light: Option<SHLight>,
    /// Every light visited by an iterative attack, start included.
    pub iterates: Vec<SHLight>,
    pub mean_abs_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackFailure {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub faces: Vec<AttackedFace>,
    /// Faces whose attack failed; they enter the evaluation unchanged.
    pub failures: Vec<AttackFailure>,
}

impl AttackOutcome {
    pub fn mean_abs_change(&self) -> f64 {
        if self.faces.is_empty() {
            return 0.0;
        }
        self.faces.iter().map(|f| f.mean_abs_change).sum::<f64>() / self.faces.len() as f64
    }

    pub fn light_pairs(&self) -> Vec<(SHLight, SHLight)> {
        self.faces
            .iter()
            .filter_map(|f| Some((f.light?, f.adversarial_light?)))
            .collect()
    }
}

fn per_image_seed(seed: u64, position: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(position as u64)
}

fn attack_one(face: &Face, method: &AttackMethod, embedder: &dyn Embedder, seed: u64) -> Result<AttackedFace> {
    let mut iterates = Vec::new();
    let (image, light, adv) = match method {
        AttackMethod::None => {
            let light = estimate_light(&face.image, &face.normals).ok();
            (face.image.clone(), light, light)
        }
        AttackMethod::Random { epsilon } => {
            let light = estimate_light(&face.image, &face.normals)?;
            let r = random_relight(&face.image, &face.normals, &light, *epsilon, seed)?;
            (r.image, Some(light), Some(r.new_light))
        }
        AttackMethod::Aq { config } => {
            let t = attack(&face.image, &face.normals, None, embedder, config)?;
            iterates = t.steps.iter().map(|s| s.light).collect();
            (t.image, Some(t.source_light), Some(t.adversarial_light))
        }
        AttackMethod::Ap { params } => {
            let light = estimate_light(&face.image, &face.normals)?;
            let (image, adv) = predict(&face.image, &face.normals, params, embedder)?;
            (image, Some(light), Some(adv))
        }
    };
    Ok(AttackedFace {
        mean_abs_change: mean_abs_change(&face.image, &image),
        image,
        light,
        adversarial_light: adv,
        iterates,
    })
}

/// Attacks every listed face independently. Failures are recorded and the
/// face is kept unchanged.
pub fn run_attack_suite(
    dataset: &Dataset,
    items: &[SplitItem],
    method: &AttackMethod,
    embedder: &dyn Embedder,
    seed: u64,
) -> AttackOutcome {
    let results: Vec<Result<AttackedFace>> = items
        .par_iter()
        .enumerate()
        .map(|(pos, item)| attack_one(dataset.face(item), method, embedder, per_image_seed(seed, pos)))
        .collect();
    let mut faces = Vec::with_capacity(items.len());
    let mut failures = Vec::new();
    for (pos, (r, item)) in results.into_iter().zip(items).enumerate() {
        match r {
            Ok(f) => faces.push(f),
            Err(e) => {
                failures.push(AttackFailure {
                    position: pos,
                    message: e.to_string(),
                });
                faces.push(AttackedFace {
                    image: dataset.face(item).image.clone(),
                    light: None,
                    adversarial_light: None,
                    iterates: Vec::new(),
                    mean_abs_change: 0.0,
                });
            }
        }
    }
    AttackOutcome { faces, failures }
}

pub fn embed_all(images: &[&FaceImage], embedder: &dyn Embedder) -> Result<Vec<Embedding>> {
    images.par_iter().map(|img| embedder.embed(img)).collect()
}

pub fn similarity_from_embeddings(reference: &[Embedding], attacked: &[Embedding]) -> Result<SimilarityMatrix> {
    if reference.is_empty() || attacked.is_empty() {
        return Err(Error::precondition("similarity matrix needs nonempty sets"));
    }
    let values = reference
        .par_iter()
        .map(|r| attacked.iter().map(|a| similarity(r, a)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<Vec<f64>>>>()?
        .concat();
    SimilarityMatrix::new(reference.len(), attacked.len(), values)
}

/// `S(i, j) = sim(φ(R_i), φ(A_j))`.
pub fn similarity_matrix(reference: &[&FaceImage], attacked: &[&FaceImage], embedder: &dyn Embedder) -> Result<SimilarityMatrix> {
    let r = embed_all(reference, embedder)?;
    let a = embed_all(attacked, embedder)?;
    similarity_from_embeddings(&r, &a)
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub method: &'static str,
    pub epsilon: Option<f64>,
    pub roc: Roc,
    pub mean_abs_change: f64,
    pub outcome: AttackOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Columns `method, epsilon, auc, mean_abs_change, failures`; the last
    /// but one is a stand-in for no-reference image-quality scores.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,epsilon,auc,mean_abs_change,failures\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                r.epsilon.map(sig6).unwrap_or_default(),
                sig6(r.roc.auc),
                sig6(r.mean_abs_change),
                r.outcome.failures.len()
            ));
        }
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("method,epsilon,fpr,tpr,threshold\n");
        for r in &self.rows {
            let eps = r.epsilon.map(sig6).unwrap_or_default();
            for p in &r.roc.points {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.method,
                    eps,
                    sig6(p.fpr),
                    sig6(p.tpr),
                    sig6(p.threshold)
                ));
            }
        }
        out
    }

    /// Columns `method, epsilon, position, l0..l8, adv0..adv8`.
    pub fn lights_csv(&self) -> String {
        let mut out = String::from("method,epsilon,position");
        for p in ["l", "adv"] {
            for j in 0..9 {
                out.push_str(&format!(",{p}{j}"));
            }
        }
        out.push('\n');
        for r in &self.rows {
            let eps = r.epsilon.map(sig6).unwrap_or_default();
            for (pos, f) in r.outcome.faces.iter().enumerate() {
                let (Some(l), Some(a)) = (f.light, f.adversarial_light) else {
                    continue;
                };
                out.push_str(&format!("{},{},{}", r.method, eps, pos));
                for c in l.0.iter().chain(a.0.iter()) {
                    out.push(',');
                    out.push_str(&sig6(*c));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn roc_svg(&self) -> String {
        let curves: Vec<(String, Vec<(f64, f64)>)> = self
            .rows
            .iter()
            .map(|r| {
                let label = match r.epsilon {
                    Some(e) => format!("{} ε={} AUC={}", r.method, sig6(e), sig6(r.roc.auc)),
                    None => format!("{} AUC={}", r.method, sig6(r.roc.auc)),
                };
                (label, r.roc.points.iter().map(|p| (p.fpr, p.tpr)).collect())
            })
            .collect();
        roc_svg(&curves)
    }

    pub fn auc(&self, method: &str, epsilon: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.epsilon == epsilon)
            .map(|r| r.roc.auc)
    }
}

/// Split → attack each method on the target set → similarity against the
/// reference set under `eval_embedder` → ROC/AUC.
pub fn evaluate(
    dataset: &Dataset,
    methods: &[AttackMethod],
    attack_embedder: &dyn Embedder,
    eval_embedder: &dyn Embedder,
    seed: u64,
) -> Result<EvalReport> {
    let split = build_split(dataset, seed)?;
    let refs: Vec<&FaceImage> = split.reference.iter().map(|i| &dataset.face(i).image).collect();
    let ref_emb = embed_all(&refs, eval_embedder)?;
    let truth = GroundTruth::from_labels(&split.reference_labels(), &split.target_labels());
    let mut report = EvalReport::default();
    for method in methods {
        let outcome = run_attack_suite(dataset, &split.target, method, attack_embedder, seed);
        let attacked: Vec<&FaceImage> = outcome.faces.iter().map(|f| &f.image).collect();
        let att_emb = embed_all(&attacked, eval_embedder)?;
        let s = similarity_from_embeddings(&ref_emb, &att_emb)?;
        let roc = roc_auc(&s, &truth)?;
        report.rows.push(EvalRow {
            method: method.name(),
            epsilon: method.epsilon(),
            mean_abs_change: outcome.mean_abs_change(),
            roc,
            outcome,
        });
    }
    Ok(report)
}

/// Reference-set faces of a split, as training pairs for the predictive
/// attack.
pub fn training_faces(dataset: &Dataset, split: &Split) -> Vec<(FaceImage, NormalMap)> {
    split
        .reference
        .iter()
        .map(|i| {
            let f = dataset.face(i);
            (f.image.clone(), f.normals.clone())
        })
        .collect()
}
