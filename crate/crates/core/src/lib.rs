//! Adversarial relighting against face embedders under a second-order
//! spherical-harmonics Lambertian model.

pub mod ap;
pub mod aq;
pub mod embedder;
pub mod error;
pub mod harness;
pub mod image;
pub mod io;
pub mod phy;
pub mod relight;
pub mod report;
pub mod sh;
pub mod synth;

pub use embedder::{similarity, Embedder, EmbedderDescriptor, Embedding};
pub use error::{Error, Result};
pub use image::FaceImage;
pub use sh::{LightingMap, LuminanceImage, NormalMap, SHLight};
