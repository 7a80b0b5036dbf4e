//! Downstream task heads over multi-level backbone features.

pub mod alignment;
pub mod attributes;
pub mod features;
pub mod fusion;
pub mod parsing;
pub mod train;

pub use alignment::{decode_landmarks, rescale_point, soft_label_ce, AlignmentHead, SoftLabelLoss};
pub use attributes::{attribute_bce, predict_attributes, AttributeHead, VECTORS_PER_LEVEL};
pub use features::{LayerSelection, MultiLevelFeatures, NUM_LEVELS};
pub use fusion::{FusionConfig, FusionTrunk};
pub use parsing::{pixel_accuracy, pixel_cross_entropy, predict_labels, ParsingHead};
pub use train::{cosine_to_zero, DownstreamHead, HeadConfig, HeadTrainer, Prediction, TaskSpec, TaskTargets, TrainMode, HEAD_PREFIX};

#[cfg(test)]
pub(crate) mod testing {
    use candle_core::{Device, Tensor, Var};

    use super::MultiLevelFeatures;

    /// Random four-level features held in variables so gradients reach them.
    pub fn random_features(b: usize, grid: usize, dim: usize) -> (MultiLevelFeatures, Vec<(String, Var)>) {
        let mut vars = Vec::new();
        let mut cls = Vec::new();
        let mut tokens = Vec::new();
        for i in 0..4 {
            let c = Var::from_tensor(&Tensor::randn(0f64, 1.0, (b, dim), &Device::Cpu).unwrap()).unwrap();
            let t = Var::from_tensor(&Tensor::randn(0f64, 1.0, (b, grid * grid, dim), &Device::Cpu).unwrap()).unwrap();
            cls.push(c.as_tensor().clone());
            tokens.push(t.as_tensor().clone());
            vars.push((format!("cls.{i}"), c));
            vars.push((format!("tokens.{i}"), t));
        }
        (MultiLevelFeatures { cls, tokens, grid }, vars)
    }
}
