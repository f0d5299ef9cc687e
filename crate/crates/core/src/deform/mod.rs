//! Deformable step: optimize a dense displacement field so the warped
//! moving image matches the fixed image under mean squared error, with a
//! diffusion regularizer, Adam updates and a cosine-annealed learning rate.
//!
//! The field is optimized per image pair over a coarse-to-fine pyramid.
//! Adam runs on the field expressed in normalized grid units (one unit is
//! half the larger grid dimension of the current level), which makes the
//! learning rate resolution independent: a step of `lr` moves a vector by
//! `lr * max(width, height) / 2` pixels at most.

mod field;
mod optim;

pub use field::DisplacementField;
pub use optim::{adam_step, cosine_lr, AdamState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{bilinear_sample, bilinear_sample_with_gradient, downsample, GrayImage};

#[derive(Debug, Error, PartialEq)]
pub enum DeformError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("objective or gradient became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid deform config: {0}")]
    InvalidConfig(String),
    #[error("invalid displacement field: {0}")]
    InvalidField(String),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DeformError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    pub lr0: f64,
    pub iterations: usize,
    pub lambda_smooth: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eta_min: f64,
    pub levels: usize,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            iterations: 500,
            lambda_smooth: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eta_min: 0.0,
            levels: 3,
        }
    }
}

impl DeformConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DeformError::InvalidConfig(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.lambda_smooth >= 0.0 && self.lambda_smooth.is_finite()) {
            return fail(format!(
                "lambda_smooth must be >= 0, got {}",
                self.lambda_smooth
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return fail("epsilon must be positive".into());
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.lr0) {
            return fail("eta_min must lie in [0, lr0]".into());
        }
        if self.levels == 0 {
            return fail("levels must be >= 1".into());
        }
        Ok(())
    }
}

/// One optimizer step: objective terms at the parameters the step started
/// from, and the learning rate it used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub mse: f64,
    pub smooth: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    /// CSV with header `iter,mse,smooth,total,lr`; floats use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,mse,smooth,total,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter, r.mse, r.smooth, r.total, r.lr
            ));
        }
        out
    }
}

fn check_same_grid(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(DeformError::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Resamples `moving` through `field`. The field must live on the moving
/// image's grid, which after the rigid step is the fixed grid.
pub fn warp(moving: &GrayImage, field: &DisplacementField) -> Result<GrayImage> {
    check_same_grid(
        (field.width(), field.height()),
        (moving.width(), moving.height()),
        "field vs image grid",
    )?;
    let mut data = Vec::with_capacity(moving.len());
    for y in 0..field.height() {
        for x in 0..field.width() {
            let [u, v] = field.get(x, y);
            data.push(bilinear_sample(moving, x as f64 + u, y as f64 + v));
        }
    }
    Ok(GrayImage::from_parts(
        moving.width(),
        moving.height(),
        data,
        moving.spacing_um(),
    ))
}

/// One-directional mean squared error between the fixed and warped images.
pub fn mse_loss(fixed: &GrayImage, warped: &GrayImage) -> Result<f64> {
    check_same_grid(
        (fixed.width(), fixed.height()),
        (warped.width(), warped.height()),
        "mse inputs",
    )?;
    let sum: f64 = fixed
        .data()
        .iter()
        .zip(warped.data())
        .map(|(f, w)| (f - w) * (f - w))
        .sum();
    Ok(sum / fixed.len() as f64)
}

/// Number of horizontal and vertical forward-difference pairs.
fn pair_counts(width: usize, height: usize) -> (usize, usize) {
    ((width - 1) * height, width * (height - 1))
}

/// Diffusion regularizer: mean squared forward difference of `(u, v)` along
/// x plus the same along y, i.e. the grid average of `|grad u|^2 + |grad v|^2`.
/// An axis with no pairs contributes zero.
pub fn smoothness_loss(field: &DisplacementField) -> f64 {
    let (w, h) = (field.width(), field.height());
    let (px, py) = pair_counts(w, h);
    let sq = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let here = field.get(x, y);
            if x + 1 < w {
                sx += sq(here, field.get(x + 1, y));
            }
            if y + 1 < h {
                sy += sq(here, field.get(x, y + 1));
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    mean(sx, px) + mean(sy, py)
}

/// Objective value and its gradient with respect to every field component.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub mse: f64,
    pub smooth: f64,
    pub total: f64,
    pub gradient: Vec<[f64; 2]>,
}

/// Evaluates `mse + lambda * smoothness` and its analytic gradient.
///
/// The MSE part is `(2/N)(warped - fixed)` times the bilinear derivative of
/// the moving image at the sample point. The smoothness part is
/// `2 lambda / P_axis` times the difference to each neighbour along that
/// axis, where `P_axis` counts the forward-difference pairs on the axis.
pub fn evaluate_objective(
    fixed: &GrayImage,
    moving: &GrayImage,
    field: &DisplacementField,
    lambda_smooth: f64,
) -> Result<Objective> {
    check_same_grid(
        (fixed.width(), fixed.height()),
        (moving.width(), moving.height()),
        "fixed vs moving",
    )?;
    check_same_grid(
        (fixed.width(), fixed.height()),
        (field.width(), field.height()),
        "fixed vs field",
    )?;
    let (w, h) = (fixed.width(), fixed.height());
    let n = fixed.len() as f64;
    let mut gradient = vec![[0.0; 2]; fixed.len()];

    let mut sq_sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let [u, v] = field.get(x, y);
            let (value, gx, gy) = bilinear_sample_with_gradient(moving, x as f64 + u, y as f64 + v);
            let r = value - fixed.data()[i];
            sq_sum += r * r;
            let scale = 2.0 * r / n;
            gradient[i] = [scale * gx, scale * gy];
        }
    }
    let mse = sq_sum / n;

    let smooth = smoothness_loss(field);
    let (px, py) = pair_counts(w, h);
    if lambda_smooth > 0.0 {
        let kx = if px > 0 {
            2.0 * lambda_smooth / px as f64
        } else {
            0.0
        };
        let ky = if py > 0 {
            2.0 * lambda_smooth / py as f64
        } else {
            0.0
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let here = field.get(x, y);
                let neighbours = [(x + 1 < w, i + 1, kx), (y + 1 < h, i + w, ky)];
                for (present, j, k) in neighbours {
                    if !present {
                        continue;
                    }
                    let there = field.vectors()[j];
                    for c in 0..2 {
                        let d = k * (here[c] - there[c]);
                        gradient[i][c] += d;
                        gradient[j][c] -= d;
                    }
                }
            }
        }
    }

    Ok(Objective {
        mse,
        smooth,
        total: mse + lambda_smooth * smooth,
        gradient,
    })
}

/// Gradient of `mse + lambda * smoothness` with respect to `(u, v)` at every
/// grid point.
pub fn loss_gradient(
    fixed: &GrayImage,
    moving: &GrayImage,
    field: &DisplacementField,
    lambda_smooth: f64,
) -> Result<Vec<[f64; 2]>> {
    Ok(evaluate_objective(fixed, moving, field, lambda_smooth)?.gradient)
}

/// Output of [`optimize_deformation`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeformResult {
    pub field: DisplacementField,
    pub trace: LossTrace,
    /// Objective terms of the zero field on the finest grid.
    pub initial_mse: f64,
    pub initial_total: f64,
    /// Objective terms of the returned field on the finest grid.
    pub final_mse: f64,
    pub final_total: f64,
    /// Pyramid levels actually used (may be fewer than configured for
    /// small images).
    pub levels_used: usize,
}

/// Smallest side a pyramid level may have.
const MIN_LEVEL_SIDE: usize = 8;

fn pyramid(img: &GrayImage, levels: usize) -> Vec<GrayImage> {
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.width().div_ceil(2) < MIN_LEVEL_SIDE || last.height().div_ceil(2) < MIN_LEVEL_SIDE {
            break;
        }
        out.push(downsample(last, 2));
    }
    out
}

/// Splits `total` steps over `levels`, coarsest first; the finest level
/// takes the remainder.
fn step_budgets(total: usize, levels: usize) -> Vec<usize> {
    let mut budgets = vec![total / levels; levels];
    *budgets.last_mut().unwrap() += total % levels;
    budgets
}

/// Optimizes a displacement field aligning `moving_rigid` to `fixed`.
///
/// Runs coarse to fine. Each level starts from the previous level's field
/// (zero at the coarsest), upsampled with vectors doubled, and gets its own
/// Adam state and cosine schedule. The returned field is the lowest-objective
/// iterate seen on the finest grid, so the final objective never exceeds the
/// zero-field objective.
pub fn optimize_deformation(
    fixed: &GrayImage,
    moving_rigid: &GrayImage,
    cfg: &DeformConfig,
) -> Result<DeformResult> {
    cfg.validate()?;
    check_same_grid(
        (fixed.width(), fixed.height()),
        (moving_rigid.width(), moving_rigid.height()),
        "fixed vs moving",
    )?;

    let fixed_levels = pyramid(fixed, cfg.levels);
    let moving_levels = pyramid(moving_rigid, fixed_levels.len());
    let levels_used = fixed_levels.len();
    let budgets = step_budgets(cfg.iterations, levels_used);

    let (w, h) = (fixed.width(), fixed.height());
    let zero = DisplacementField::zeros(w, h);
    let initial = evaluate_objective(fixed, moving_rigid, &zero, cfg.lambda_smooth)?;
    if !initial.total.is_finite() {
        return Err(DeformError::NonFiniteLoss { iteration: 0 });
    }

    let mut trace = LossTrace::default();
    let mut field: Option<DisplacementField> = None;
    let mut best = (initial.total, initial.mse, zero);
    let mut iter = 0;

    for level in (0..levels_used).rev() {
        let f_img = &fixed_levels[level];
        let m_img = &moving_levels[level];
        let (lw, lh) = (f_img.width(), f_img.height());
        let mut current = match field.take() {
            None => DisplacementField::zeros(lw, lh),
            Some(coarse) => coarse.upsample2(lw, lh),
        };
        let budget = budgets[levels_used - 1 - level];
        let finest = level == 0;
        let unit = lw.max(lh) as f64 / 2.0;

        let mut params: Vec<f64> = current
            .vectors()
            .as_flattened()
            .iter()
            .map(|c| c / unit)
            .collect();
        let mut state = AdamState::new(params.len());

        for step in 0..budget {
            let obj = evaluate_objective(f_img, m_img, &current, cfg.lambda_smooth)?;
            if !obj.total.is_finite() || obj.gradient.iter().flatten().any(|g| !g.is_finite()) {
                return Err(DeformError::NonFiniteLoss { iteration: iter });
            }
            if finest && obj.total < best.0 {
                best = (obj.total, obj.mse, current.clone());
            }
            let lr = cosine_lr(cfg.lr0, step, budget, cfg.eta_min);
            trace.records.push(LossRecord {
                iter,
                mse: obj.mse,
                smooth: obj.smooth,
                total: obj.total,
                lr,
            });
            let grads: Vec<f64> = obj
                .gradient
                .as_flattened()
                .iter()
                .map(|g| g * unit)
                .collect();
            adam_step(&mut state, &mut params, &grads, lr, cfg);
            for (c, p) in current.components_mut().iter_mut().zip(&params) {
                *c = p * unit;
            }
            iter += 1;
        }

        if finest {
            let obj = evaluate_objective(f_img, m_img, &current, cfg.lambda_smooth)?;
            if !obj.total.is_finite() {
                return Err(DeformError::NonFiniteLoss { iteration: iter });
            }
            if obj.total < best.0 {
                best = (obj.total, obj.mse, current.clone());
            }
        }
        field = Some(current);
    }

    let (final_total, final_mse, field) = best;
    Ok(DeformResult {
        field,
        trace,
        initial_mse: initial.mse,
        initial_total: initial.total,
        final_mse,
        final_total,
        levels_used,
    })
}
