//! Bounding boxes from fitted posteriors, and CorLoc evaluation.
//!
//! Two strategies are provided. The Gaussian strategy aligns a box with the
//! two-standard-deviation ellipse of a class's location posterior. The
//! sampling strategy rasterises the class responsibilities into a heat map,
//! proposes thresholded connected components and prunes them with greedy
//! non-maximum suppression.

mod corloc;
mod heatmap;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::corpus::ImageRecord;
use crate::inference::{ImagePosterior, Model, NormalWishart};
use crate::{Error, Result};

pub use corloc::{
    corloc, load_detections_csv, save_detections_csv, CorlocReport, Detection, OverlapRule,
};
pub use heatmap::{boxes_from_heatmap, heat_map, non_maximum_suppression, HeatMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, score: f64) -> Self {
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
            score,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    /// Scale from normalised to pixel coordinates.
    pub fn to_pixels(&self, width: u32, height: u32) -> BoundingBox {
        let (w, h) = (width as f64, height as f64);
        BoundingBox::new(
            self.x_min * w,
            self.y_min * h,
            self.x_max * w,
            self.y_max * h,
            self.score,
        )
    }

    pub fn to_normalized(&self, width: u32, height: u32) -> BoundingBox {
        let (w, h) = (width as f64, height as f64);
        BoundingBox::new(
            self.x_min / w,
            self.y_min / h,
            self.x_max / w,
            self.y_max / h,
            self.score,
        )
    }

    fn clipped(mut self) -> BoundingBox {
        self.x_min = self.x_min.clamp(0.0, 1.0);
        self.y_min = self.y_min.clamp(0.0, 1.0);
        self.x_max = self.x_max.clamp(0.0, 1.0);
        self.y_max = self.y_max.clamp(0.0, 1.0);
        self
    }
}

/// Intersection over union; 0 when either box is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Axis-aligned rectangle around the ellipse `(x − μ)ᵀ Σ⁻¹ (x − μ) = 4`,
/// clipped to the unit square. The half-extent along axis `d` is
/// `2 sqrt(Σ_dd)` whether or not `Σ` is diagonal.
pub fn box_from_covariance(
    mean: Vector2<f64>,
    covariance: Matrix2<f64>,
    score: f64,
) -> BoundingBox {
    let hx = 2.0 * covariance[(0, 0)].sqrt();
    let hy = 2.0 * covariance[(1, 1)].sqrt();
    BoundingBox::new(mean.x - hx, mean.y - hy, mean.x + hx, mean.y + hy, score).clipped()
}

/// Box for a location posterior using the expected precision `ν̃ Λ̃`.
pub fn gaussian_box(nw: &NormalWishart, mass: f64) -> Result<BoundingBox> {
    nw.validate()?;
    let covariance = nw
        .expected_precision()
        .try_inverse()
        .ok_or_else(|| Error::Domain("expected precision is singular".into()))?;
    Ok(box_from_covariance(nw.mean, covariance, mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Gaussian,
    Sampling,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Strategy::Gaussian),
            "sampling" => Ok(Strategy::Sampling),
            other => Err(Error::validation(
                "strategy",
                format!("unknown strategy {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatMapOptions {
    pub grid: (usize, usize),
    pub blur: bool,
    pub threshold_frac: f64,
    pub nms_iou: f64,
}

impl Default for HeatMapOptions {
    fn default() -> Self {
        HeatMapOptions {
            grid: (64, 64),
            blur: false,
            threshold_frac: 0.5,
            nms_iou: 0.5,
        }
    }
}

/// Boxes for class `class` of one image, normalised coordinates, best first.
pub fn localise_image(
    model: &Model,
    posterior: &ImagePosterior,
    image: &ImageRecord,
    strategy: Strategy,
    class: usize,
    heat: &HeatMapOptions,
) -> Result<Vec<BoundingBox>> {
    let cfg = &model.config;
    if class >= cfg.num_classes {
        return Err(Error::validation(
            "class",
            format!("class {class} >= {}", cfg.num_classes),
        ));
    }
    let topics = cfg.topics_of(class);
    match strategy {
        Strategy::Gaussian => {
            let sums = posterior.responsibilities.column_sums();
            // With several topics per class, use the one carrying the most mass.
            let best = topics
                .clone()
                .max_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(b.cmp(&a)))
                .expect("class owns at least one topic");
            Ok(vec![gaussian_box(&posterior.locations[best], sums[best])?])
        }
        Strategy::Sampling => {
            let map = heat_map(
                image,
                &posterior.responsibilities,
                topics,
                heat.grid,
                heat.blur,
            );
            Ok(boxes_from_heatmap(&map, heat.threshold_frac, heat.nms_iou))
        }
    }
}
