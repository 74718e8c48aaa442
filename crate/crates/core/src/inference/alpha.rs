use crate::corpus::ImageRecord;

use super::ModelConfig;

/// Per-image Dirichlet parameter over topics; zeros mark clamped-off classes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector(pub Vec<f64>);

impl AlphaVector {
    pub fn is_active(&self, topic: usize) -> bool {
        self.0[topic] > 0.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weak labels switch foreground topics on (1) or off (0); unlabeled images
/// get `ssl_alpha` on every foreground topic. Background entries are always 1.
pub fn make_alpha(image: &ImageRecord, config: &ModelConfig) -> AlphaVector {
    let mut alpha = vec![1.0; config.num_topics()];
    for class in 0..config.num_classes {
        let value = if image.unlabeled {
            config.ssl_alpha
        } else if image.labels.contains(&class) {
            1.0
        } else {
            0.0
        };
        for topic in config.topics_of(class) {
            alpha[topic] = value;
        }
    }
    AlphaVector(alpha)
}
