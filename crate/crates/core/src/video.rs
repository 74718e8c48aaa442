//! Temporal smoothing of per-frame boxes with a linear-Gaussian state-space
//! model: `z_t = A z_{t−1} + ε_t`, `c_t = O z_t + σ_t`.
//!
//! The state is `(x, y, ẋ, ẏ)` for one box corner; the two diagonal corners
//! are smoothed as independent tracks. Frames without an observation are
//! predict-only steps.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, SymmetricEigen, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::localise::BoundingBox;
use crate::{Error, Result};

pub const DEFAULT_PROCESS_NOISE: f64 = 1e-4;
pub const DEFAULT_OBSERVATION_NOISE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceConfig {
    pub transition: Matrix4<f64>,
    pub observation: Matrix2x4<f64>,
    pub process_noise: Matrix4<f64>,
    pub observation_noise: Matrix2<f64>,
    /// `None`: the first observed position with zero velocity.
    pub initial_mean: Option<Vector4<f64>>,
    pub initial_covariance: Matrix4<f64>,
}

impl Default for StateSpaceConfig {
    fn default() -> Self {
        StateSpaceConfig::constant_velocity(DEFAULT_PROCESS_NOISE, DEFAULT_OBSERVATION_NOISE)
    }
}

impl StateSpaceConfig {
    /// Constant velocity with one-frame steps, `Q = q·I`, `R = r·I`, `P₀ = I`.
    pub fn constant_velocity(q: f64, r: f64) -> Self {
        #[rustfmt::skip]
        let transition = Matrix4::new(
            1.0, 0.0, 1.0, 0.0,
            0.0, 1.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        StateSpaceConfig {
            transition,
            observation: Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
            process_noise: Matrix4::identity() * q,
            observation_noise: Matrix2::identity() * r,
            initial_mean: None,
            initial_covariance: Matrix4::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_psd("process noise Q", &self.process_noise)?;
        check_psd("initial covariance", &self.initial_covariance)?;
        let r = self.observation_noise;
        check_psd("observation noise R", &r)?;
        if r.determinant() <= 0.0 && self.initial_covariance.determinant() <= 0.0 {
            return Err(Error::Domain(
                "observation noise and initial covariance are both singular".into(),
            ));
        }
        Ok(())
    }
}

fn check_psd<const N: usize>(name: &str, m: &nalgebra::SMatrix<f64, N, N>) -> Result<()> {
    let m = DMatrix::from_column_slice(N, N, m.as_slice());
    let scale = m.abs().max().max(1.0);
    if !m.iter().all(|x| x.is_finite()) || (&m - m.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "{name} must be finite and symmetric"
        )));
    }
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&e| e < -1e-12 * scale) {
        return Err(Error::Domain(format!(
            "{name} is not positive semi-definite"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

fn symmetrize(m: Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Filtered marginals `p(z_t | c_0..c_t)` for every frame.
pub fn kalman_filter(
    observations: &[Option<Vector2<f64>>],
    config: &StateSpaceConfig,
) -> Result<Vec<GaussianState>> {
    config.validate()?;
    let first = observations
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Domain("track has no observations".into()))?;
    let mean = config
        .initial_mean
        .unwrap_or_else(|| Vector4::new(first.x, first.y, 0.0, 0.0));
    let (a, o) = (&config.transition, &config.observation);
    let mut state = GaussianState {
        mean,
        covariance: config.initial_covariance,
    };
    let mut out = Vec::with_capacity(observations.len());
    for (t, obs) in observations.iter().enumerate() {
        if t > 0 {
            state = GaussianState {
                mean: a * state.mean,
                covariance: symmetrize(a * state.covariance * a.transpose() + config.process_noise),
            };
        }
        if let Some(c) = obs {
            let s = o * state.covariance * o.transpose() + config.observation_noise;
            let s_inv = s.try_inverse().ok_or_else(|| {
                Error::Domain(format!("innovation covariance singular at frame {t}"))
            })?;
            let gain = state.covariance * o.transpose() * s_inv;
            let innovation = c - o * state.mean;
            let i_kh = Matrix4::identity() - gain * o;
            state = GaussianState {
                mean: state.mean + gain * innovation,
                // Joseph form keeps the covariance symmetric PSD.
                covariance: symmetrize(
                    i_kh * state.covariance * i_kh.transpose()
                        + gain * config.observation_noise * gain.transpose(),
                ),
            };
        }
        out.push(state);
    }
    Ok(out)
}

/// Smoothed marginals `p(z_t | c_0..c_{T−1})` by the Rauch–Tung–Striebel
/// backward pass. The last frame equals its filtered marginal.
pub fn kalman_smooth(
    observations: &[Option<Vector2<f64>>],
    config: &StateSpaceConfig,
) -> Result<Vec<GaussianState>> {
    let filtered = kalman_filter(observations, config)?;
    let a = &config.transition;
    let mut smoothed = filtered.clone();
    for t in (0..filtered.len().saturating_sub(1)).rev() {
        let f = &filtered[t];
        let predicted_cov = a * f.covariance * a.transpose() + config.process_noise;
        let chol = predicted_cov
            .cholesky()
            .ok_or_else(|| Error::Domain(format!("predicted covariance singular at frame {t}")))?;
        let gain = chol.solve(&(a * f.covariance)).transpose();
        let next = smoothed[t + 1];
        let i_ga = Matrix4::identity() - gain * a;
        smoothed[t] = GaussianState {
            mean: f.mean + gain * (next.mean - a * f.mean),
            // P − G P⁻ Gᵀ + G Pₛ Gᵀ as a sum of PSD terms; the direct form
            // cancels badly when velocity variance dwarfs position variance.
            covariance: symmetrize(
                i_ga * f.covariance * i_ga.transpose()
                    + gain * (config.process_noise + next.covariance) * gain.transpose(),
            ),
        };
    }
    Ok(smoothed)
}

/// One frame of a box track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: i64,
    pub bbox: BoundingBox,
}

/// One smoothed frame; `predicted` marks frames absent from the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedFrame {
    pub frame: i64,
    pub bbox: BoundingBox,
    pub predicted: bool,
}

/// Smooth both box corners over every frame from the first to the last
/// observed one. Observed frames keep their score; predicted frames get 0.
/// Corners are swapped per axis if smoothing crosses them.
pub fn smooth_track(track: &[TrackFrame], config: &StateSpaceConfig) -> Result<Vec<SmoothedFrame>> {
    let (Some(first), Some(last)) = (track.first(), track.last()) else {
        return Ok(Vec::new());
    };
    if track.windows(2).any(|w| w[0].frame >= w[1].frame) {
        return Err(Error::validation(
            "track",
            "frame indices must be strictly increasing",
        ));
    }
    let len = (last.frame - first.frame + 1) as usize;
    let mut slots: Vec<Option<&TrackFrame>> = vec![None; len];
    for f in track {
        slots[(f.frame - first.frame) as usize] = Some(f);
    }
    let corner = |pick: fn(&BoundingBox) -> Vector2<f64>| -> Vec<Option<Vector2<f64>>> {
        slots.iter().map(|s| s.map(|f| pick(&f.bbox))).collect()
    };
    let top_left = kalman_smooth(&corner(|b| Vector2::new(b.x_min, b.y_min)), config)?;
    let bottom_right = kalman_smooth(&corner(|b| Vector2::new(b.x_max, b.y_max)), config)?;
    Ok((0..len)
        .map(|t| {
            let (p, q) = (top_left[t].mean, bottom_right[t].mean);
            SmoothedFrame {
                frame: first.frame + t as i64,
                bbox: BoundingBox::new(
                    p.x.min(q.x),
                    p.y.min(q.y),
                    p.x.max(q.x),
                    p.y.max(q.y),
                    slots[t].map_or(0.0, |f| f.bbox.score),
                ),
                predicted: slots[t].is_none(),
            }
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    frame: i64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    score: f64,
}

#[derive(Debug, Serialize)]
struct SmoothedRow {
    frame: i64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    score: f64,
    predicted: bool,
}

/// CSV `frame,x_min,y_min,x_max,y_max,score`; missing frames are allowed.
pub fn load_track_csv(path: impl AsRef<Path>) -> Result<Vec<TrackFrame>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<TrackRow>().enumerate() {
        let r = row.map_err(|e| Error::parse(i + 2, e))?;
        out.push(TrackFrame {
            frame: r.frame,
            bbox: BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max, r.score),
        });
    }
    Ok(out)
}

/// CSV of [`load_track_csv`] plus a `predicted` column.
pub fn save_smoothed_csv(frames: &[SmoothedFrame], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for f in frames {
        writer
            .serialize(SmoothedRow {
                frame: f.frame,
                x_min: f.bbox.x_min,
                y_min: f.bbox.y_min,
                x_max: f.bbox.x_max,
                y_max: f.bbox.y_max,
                score: f.bbox.score,
                predicted: f.predicted,
            })
            .map_err(|e| Error::io(path, e.into()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
