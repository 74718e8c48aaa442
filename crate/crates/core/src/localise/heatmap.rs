use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::corpus::ImageRecord;
use crate::inference::Responsibilities;
use crate::{Error, Result};

use super::{iou, BoundingBox};

/// Per-cell class responsibility on a regular grid over the unit square.
/// Row-major with `height` rows of `width` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn cell_box(&self, x0: usize, y0: usize, x1: usize, y1: usize, score: f64) -> BoundingBox {
        BoundingBox::new(
            x0 as f64 / self.width as f64,
            y0 as f64 / self.height as f64,
            (x1 + 1) as f64 / self.width as f64,
            (y1 + 1) as f64 / self.height as f64,
            score,
        )
    }

    fn blurred(&self) -> HeatMap {
        let mut values = vec![0.0; self.values.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let (mut sum, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(1)..(y + 2).min(self.height) {
                    for xx in x.saturating_sub(1)..(x + 2).min(self.width) {
                        sum += self.get(xx, yy);
                        n += 1.0;
                    }
                }
                values[y * self.width + x] = sum / n;
            }
        }
        HeatMap { values, ..*self }
    }

    /// Binary PGM (P5), 8-bit, values scaled by 255/max; the max goes in a comment.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.max();
        let mut out = Vec::with_capacity(self.values.len() + 64);
        write!(
            out,
            "P5\n# max {max:e}\n{} {}\n255\n",
            self.width, self.height
        )
        .unwrap();
        for &v in &self.values {
            let scaled = if max > 0.0 {
                (v / max * 255.0).round()
            } else {
                0.0
            };
            out.push(scaled.clamp(0.0, 255.0) as u8);
        }
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Deposit each token's responsibility for `topics` (summed) into the cell
/// containing it; a cell holds the mean over its tokens, 0 if it has none.
pub fn heat_map(
    image: &ImageRecord,
    responsibilities: &Responsibilities,
    topics: Range<usize>,
    grid: (usize, usize),
    blur: bool,
) -> HeatMap {
    let (w, h) = grid;
    let mut sums = vec![0.0; w * h];
    let mut counts = vec![0usize; w * h];
    for (i, token) in image.tokens.iter().enumerate() {
        let cx = ((token.location[0] * w as f64) as usize).min(w - 1);
        let cy = ((token.location[1] * h as f64) as usize).min(h - 1);
        sums[cy * w + cx] += responsibilities.mass(i, topics.clone());
        counts[cy * w + cx] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let map = HeatMap {
        width: w,
        height: h,
        values,
    };
    if blur {
        map.blurred()
    } else {
        map
    }
}

/// Greedy NMS: best score first (ties: smaller area, then input order);
/// drop any box whose IoU with a kept box exceeds `max_iou`.
pub fn non_maximum_suppression(boxes: &[BoundingBox], max_iou: f64) -> Vec<BoundingBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .total_cmp(&boxes[a].score)
            .then(boxes[a].area().total_cmp(&boxes[b].area()))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<BoundingBox> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(k, &boxes[i]) <= max_iou) {
            kept.push(boxes[i]);
        }
    }
    kept
}

/// Candidate boxes from 4-connected components of cells at or above
/// `threshold_frac × max`, scored by the mean heat inside each rectangle,
/// then pruned by NMS. Empty for an all-zero map.
pub fn boxes_from_heatmap(map: &HeatMap, threshold_frac: f64, nms_iou: f64) -> Vec<BoundingBox> {
    let max = map.max();
    if max <= 0.0 {
        return Vec::new();
    }
    let threshold = threshold_frac * max;
    let (w, h) = (map.width, map.height);
    let mut seen = vec![false; w * h];
    let mut candidates = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || map.values[start] < threshold {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(cell) = queue.pop_front() {
            let (x, y) = (cell % w, cell / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |n: usize| {
                if !seen[n] && map.values[n] >= threshold {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(cell - 1);
            }
            if x + 1 < w {
                visit(cell + 1);
            }
            if y > 0 {
                visit(cell - w);
            }
            if y + 1 < h {
                visit(cell + w);
            }
        }
        let mut sum = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                sum += map.get(x, y);
            }
        }
        let score = sum / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        candidates.push(map.cell_box(x0, y0, x1, y1, score));
    }
    non_maximum_suppression(&candidates, nms_iou)
}
