use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::GroundTruthBox;
use crate::{Error, Result};

use super::{iou, BoundingBox};

/// A scored box for one image and class, pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, class_id: usize, b: &BoundingBox) -> Self {
        Detection {
            image_id: image_id.into(),
            class_id,
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
            score: b.score,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x_min, self.y_min, self.x_max, self.y_max, self.score)
    }
}

/// `>` 0.5 (the default) or `≥` 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapRule {
    #[default]
    Strict,
    Inclusive,
}

impl OverlapRule {
    fn accepts(self, overlap: f64) -> bool {
        match self {
            OverlapRule::Strict => overlap > 0.5,
            OverlapRule::Inclusive => overlap >= 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorlocReport {
    /// Percentage per class; `None` when the class has no evaluated image.
    pub per_class: Vec<Option<f64>>,
    pub evaluated: Vec<usize>,
    pub correct: Vec<usize>,
    /// Unweighted mean over classes with at least one evaluated image.
    pub mean: f64,
}

/// Percentage of images whose best box for a class overlaps any ground-truth
/// instance of that class. Images are evaluated for a class when they carry
/// at least one ground-truth instance of it; a missing detection counts as a
/// miss. Boxes and ground truth must share a coordinate frame (IoU is
/// invariant to per-axis scaling, so pixel and normalised frames agree).
pub fn corloc(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    num_classes: usize,
    rule: OverlapRule,
) -> CorlocReport {
    if detections.is_empty() {
        log::warn!("no detections supplied; every evaluated image counts as a miss");
    }
    let mut best: HashMap<(&str, usize), &Detection> = HashMap::new();
    for d in detections {
        best.entry((d.image_id.as_str(), d.class_id))
            .and_modify(|cur| {
                if d.score > cur.score {
                    *cur = d;
                }
            })
            .or_insert(d);
    }
    let mut instances: HashMap<(&str, usize), Vec<BoundingBox>> = HashMap::new();
    for g in ground_truth {
        instances
            .entry((g.image_id.as_str(), g.class_id))
            .or_default()
            .push(BoundingBox::new(g.x_min, g.y_min, g.x_max, g.y_max, 0.0));
    }
    let mut evaluated = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&(image, class), gts) in &instances {
        if class >= num_classes {
            continue;
        }
        evaluated[class] += 1;
        if let Some(d) = best.get(&(image, class)) {
            let b = d.bbox();
            if gts.iter().any(|g| rule.accepts(iou(&b, g))) {
                correct[class] += 1;
            }
        }
    }
    let per_class: Vec<Option<f64>> = evaluated
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| (n > 0).then(|| 100.0 * c as f64 / n as f64))
        .collect();
    for (c, p) in per_class.iter().enumerate() {
        if p.is_none() {
            log::warn!("class {c} has no evaluated images; excluded from the mean");
        }
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    CorlocReport {
        per_class,
        evaluated,
        correct,
        mean,
    }
}

pub fn save_detections_csv(detections: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    if detections.is_empty() {
        writer
            .write_record([
                "image_id", "class_id", "x_min", "y_min", "x_max", "y_max", "score",
            ])
            .map_err(|e| Error::io(path, e.into()))?;
    }
    for d in detections {
        writer.serialize(d).map_err(|e| Error::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn load_detections_csv(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(i + 2, e)))
        .collect()
}
