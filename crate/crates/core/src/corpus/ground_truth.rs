use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An annotated object instance in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class_id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl GroundTruthBox {
    pub fn validate(&self, width: Option<u32>, height: Option<u32>) -> Result<()> {
        let ctx = || format!("ground truth for image {}", self.image_id);
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::validation(ctx(), "box has non-positive extent"));
        }
        if self.x_min < 0.0 || self.y_min < 0.0 {
            return Err(Error::validation(ctx(), "box starts outside the image"));
        }
        if width.is_some_and(|w| self.x_max > w as f64)
            || height.is_some_and(|h| self.y_max > h as f64)
        {
            return Err(Error::validation(
                ctx(),
                "box extends past the image bounds",
            ));
        }
        Ok(())
    }
}

/// CSV with header `image_id,class_id,x_min,y_min,x_max,y_max`.
pub fn load_ground_truth_csv(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let gt: GroundTruthBox = row.map_err(|e| Error::parse(i + 2, e))?;
        gt.validate(None, None)?;
        out.push(gt);
    }
    Ok(out)
}

pub fn save_ground_truth_csv(boxes: &[GroundTruthBox], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for b in boxes {
        writer.serialize(b).map_err(|e| Error::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
