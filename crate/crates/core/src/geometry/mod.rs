//! Face alignment, augmentation, tanh-warping and landmark heatmaps.

pub mod heatmap;
pub mod io;
pub mod similarity;
pub mod template;
pub mod warp;

pub use heatmap::{decode_channel, decode_heatmap, decode_logits, render_heatmap, DecodedLandmark, Heatmap, HEATMAP_SIZE};
pub use similarity::{augment_transform, estimate_similarity, AugmentConfig, Augmentation, Point, SimilarityTransform};
pub use template::{average_landmarks, MeanFace};
pub use warp::{
    inverse_transform_points, resize_image, tanh_alpha, tanh_alpha_inverse, transform_points, warp_image,
    warp_label_map, WarpConfig,
};
