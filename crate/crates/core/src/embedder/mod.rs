//! Face-embedding interface, cosine similarity and the bundled embedders.

mod builtin;
mod external;
pub mod protocol;

use std::sync::Arc;

pub use builtin::{BuiltinEmbedder, BUILTIN_DIMENSION, BUILTIN_SIDE};
pub use external::{ExternalEmbedder, DEFAULT_TIMEOUT};

use crate::error::{Error, Result};
use crate::image::FaceImage;

/// Relative norm deviation tolerated (and corrected) on embeddings received
/// from outside the process.
pub const RENORMALIZE_TOLERANCE: f64 = 0.01;

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit length.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        let norm = l2(&values);
        if norm == 0.0 {
            return Err(Error::precondition("cannot normalize a zero vector"));
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Accepts vectors within 1% of unit length, renormalizing them.
    pub fn from_near_unit(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        let norm = l2(&values);
        if (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(Error::Protocol(format!(
                "embedding norm {norm} outside 1 ± {RENORMALIZE_TOLERANCE}"
            )));
        }
        Embedding::normalize(values)
    }

    /// Canonical axis `e_k` of a `dim`-dimensional space.
    pub fn axis(dim: usize, k: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        Embedding(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> Self {
        Embedding(self.0.iter().map(|v| -v).collect())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding".into()));
    }
    Ok(())
}

/// Cosine similarity of two unit embeddings, clamped to `[-1, 1]`.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("dimension {}", a.dim()),
            actual: format!("dimension {}", b.dim()),
        });
    }
    if a.0 == b.0 {
        return Ok(1.0);
    }
    if a.0.iter().zip(b.0.iter()).all(|(x, y)| *x == -*y) {
        return Ok(-1.0);
    }
    let dot: f64 = a.0.iter().zip(b.0.iter()).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedderDescriptor {
    pub name: String,
    pub dimension: usize,
    /// Whether [`Embedder::input_gradient`] is available.
    pub differentiable: bool,
}

/// A face-recognition feature extractor.
pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> EmbedderDescriptor;

    fn embed(&self, image: &FaceImage) -> Result<Embedding>;

    /// Gradient of `⟨embed(image), upstream⟩` with respect to each luminance
    /// pixel of `image`, row-major.
    fn input_gradient(&self, image: &FaceImage, upstream: &[f64]) -> Result<Vec<f64>> {
        let _ = (image, upstream);
        Err(Error::NotDifferentiable(self.descriptor().name))
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn descriptor(&self) -> EmbedderDescriptor {
        (**self).descriptor()
    }

    fn embed(&self, image: &FaceImage) -> Result<Embedding> {
        (**self).embed(image)
    }

    fn input_gradient(&self, image: &FaceImage, upstream: &[f64]) -> Result<Vec<f64>> {
        (**self).input_gradient(image, upstream)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn descriptor(&self) -> EmbedderDescriptor {
        (**self).descriptor()
    }

    fn embed(&self, image: &FaceImage) -> Result<Embedding> {
        (**self).embed(image)
    }

    fn input_gradient(&self, image: &FaceImage, upstream: &[f64]) -> Result<Vec<f64>> {
        (**self).input_gradient(image, upstream)
    }
}

/// Parses `builtin`, `builtin:<seed>` or `external:<command>`.
pub fn from_spec(spec: &str) -> Result<Arc<dyn Embedder>> {
    from_spec_pooled(spec, 1)
}

/// As [`from_spec`], starting `pool_size` processes for external embedders.
pub fn from_spec_pooled(spec: &str, pool_size: usize) -> Result<Arc<dyn Embedder>> {
    if spec == "builtin" {
        return Ok(Arc::new(BuiltinEmbedder::default()));
    }
    if let Some(seed) = spec.strip_prefix("builtin:") {
        let seed = seed
            .parse()
            .map_err(|_| Error::Parse(format!("bad builtin embedder seed `{seed}`")))?;
        return Ok(Arc::new(BuiltinEmbedder::new(seed)));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        if cmd.trim().is_empty() {
            return Err(Error::Parse("empty external embedder command".into()));
        }
        return Ok(Arc::new(ExternalEmbedder::spawn(cmd, pool_size, DEFAULT_TIMEOUT)?));
    }
    Err(Error::Parse(format!(
        "unknown embedder `{spec}` (expected `builtin`, `builtin:<seed>` or `external:<command>`)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_basics() {
        let e = Embedding::normalize(vec![0.3, -0.4, 1.2]).unwrap();
        assert_eq!(similarity(&e, &e).unwrap(), 1.0);
        assert_eq!(similarity(&e, &e.negated()).unwrap(), -1.0);
        let x = Embedding::axis(3, 0);
        let y = Embedding::axis(3, 1);
        assert_eq!(similarity(&x, &y).unwrap(), 0.0);
        assert!(similarity(&x, &Embedding::axis(4, 0)).is_err());
    }

    #[test]
    fn near_unit_tolerance() {
        let ok = Embedding::from_near_unit(vec![1.005, 0.0]).unwrap();
        assert_eq!(ok.values(), &[1.0, 0.0]);
        assert!(Embedding::from_near_unit(vec![1.2, 0.0]).is_err());
        assert!(Embedding::from_near_unit(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(from_spec("builtin").unwrap().descriptor().dimension, BUILTIN_DIMENSION);
        assert!(from_spec("onnx:foo").is_err());
        assert!(from_spec("builtin:x").is_err());
        assert!(from_spec("external:").is_err());
        let a = BuiltinEmbedder::default().descriptor();
        let b = from_spec("builtin:7").unwrap().descriptor();
        assert_eq!(a.dimension, b.dimension);
        assert_ne!(a.name, b.name);
    }
}
