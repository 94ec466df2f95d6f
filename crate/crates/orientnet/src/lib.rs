//! Detects and corrects the canonical orientation of photographs
//! (0, 90, 180 or 270 degrees clockwise) with a small trainable CNN.
//!
//! The crate is organized bottom-up:
//! - [`tensor`]: dense arrays and the raw kernels with gradients
//! - [`layers`]: stateful layers, network composition, softmax/cross-entropy
//! - [`netspec`]: declarative architectures, init, checkpoint format
//! - [`datapipe`]: manifests, rotation labeling, augmentation, protocols,
//!   synthetic scenes
//! - [`trainer`]: SGD with momentum, schedules, the train loop, fine-tuning
//! - [`evaluator`]: accuracy / recall / confusion reports per protocol
//! - [`saliency`]: Grad-CAM maps and heatmap overlays
//! - [`imageio`]: PPM/PNG/JPEG decode-encode and the EXIF orientation tag

pub mod datapipe;
pub mod error;
pub mod evaluator;
pub mod imageio;
pub mod layers;
pub mod netspec;
pub mod saliency;
pub mod tensor;
pub mod threads;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
