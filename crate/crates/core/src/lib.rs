//! Visual-linguistic face representation learning at desk scale.
//!
//! The crate bundles the image/text Transformer towers, the two
//! pre-training objectives (image-text contrastive and masked image
//! modeling), face geometry preprocessing, the downstream parsing /
//! alignment / attribute heads, the evaluation metrics, the dataset
//! curation pipeline and Grad-CAM saliency.

pub mod data;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod heads;
pub mod image;
pub mod interpret;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pretraining;
pub mod synthetic;

pub use candle_core::DType;
pub use error::{Error, Result};
