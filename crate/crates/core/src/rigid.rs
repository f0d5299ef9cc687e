//! Rigid step: exhaustive zero-normalized cross-correlation template
//! matching over integer translations and the 0°/180° orientations.
//!
//! The moving image is slid over the fixed image. Every placement is scored
//! by ZNCC over the overlap of the two frames, so images of different extent
//! can be matched. Offsets follow the convention that moving pixel `(x, y)`
//! lands on fixed pixel `(x + dx, y + dy)` after the optional 180° rotation.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{rotate180, GrayImage};

/// Per-sample variance below which a signal counts as constant.
const VARIANCE_FLOOR: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum RigidError {
    #[error("inputs must have equal length >= 2 (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("zero variance: the correlation is undefined")]
    ZeroVariance,
    #[error("overlap of {overlap} px is below the required {required} px")]
    InsufficientOverlap { overlap: usize, required: usize },
    #[error("no placement satisfies the overlap constraint")]
    NoValidPlacement,
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, RigidError>;

/// Orientation and integer translation relating the moving image to the
/// fixed image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidEstimate {
    pub rotated_180: bool,
    pub dx: i64,
    pub dy: i64,
    pub score: f64,
}

impl RigidEstimate {
    pub fn identity() -> Self {
        Self {
            rotated_180: false,
            dx: 0,
            dy: 0,
            score: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Step of the coarse offset grid, in pixels.
    pub stride: usize,
    /// Half-width of the stride-1 window searched around the best coarse hit.
    pub refine_radius: usize,
    /// Minimum overlap, as a fraction of the smaller of the two image areas.
    pub min_overlap_frac: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            refine_radius: 8,
            min_overlap_frac: 0.25,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(RigidError::InvalidConfig("stride must be >= 1".into()));
        }
        if !(self.min_overlap_frac > 0.0 && self.min_overlap_frac <= 1.0) {
            return Err(RigidError::InvalidConfig(format!(
                "min_overlap_frac must lie in (0, 1], got {}",
                self.min_overlap_frac
            )));
        }
        Ok(())
    }
}

/// Two-pass ZNCC over a re-iterable sequence of sample pairs. Both the
/// vector form and the image-overlap form go through here so that they
/// produce bit-identical scores for the same samples in the same order.
fn zncc<I, F>(pairs: F) -> Result<f64>
where
    F: Fn() -> I,
    I: Iterator<Item = (f64, f64)>,
{
    let mut n = 0usize;
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    for (a, b) in pairs() {
        sum_a += a;
        sum_b += b;
        n += 1;
    }
    let mean_a = sum_a / n as f64;
    let mean_b = sum_b / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs() {
        let da = a - mean_a;
        let db = b - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let floor = VARIANCE_FLOOR * n as f64;
    if saa <= floor || sbb <= floor {
        return Err(RigidError::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Zero-normalized cross-correlation of two equal-length signals.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(RigidError::LengthMismatch(a.len(), b.len()));
    }
    zncc(|| a.iter().copied().zip(b.iter().copied()))
}

/// Overlap, in fixed-image coordinates, of a `tw x th` template placed at
/// `(dx, dy)`: `(x_begin, x_end, y_begin, y_end)`, half-open.
fn overlap_window(
    fixed: (usize, usize),
    template: (usize, usize),
    dx: i64,
    dy: i64,
) -> Option<(usize, usize, usize, usize)> {
    let x0 = dx.max(0);
    let x1 = (dx + template.0 as i64).min(fixed.0 as i64);
    let y0 = dy.max(0);
    let y1 = (dy + template.1 as i64).min(fixed.1 as i64);
    (x1 > x0 && y1 > y0).then_some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Pixels of overlap a placement needs: `min_overlap_frac` of the smaller
/// image area, and never fewer than two.
pub fn required_overlap(fixed: &GrayImage, template: &GrayImage, min_overlap_frac: f64) -> usize {
    let area = fixed.len().min(template.len());
    ((min_overlap_frac * area as f64).ceil() as usize).max(2)
}

fn overlap_count(fixed: &GrayImage, template: &GrayImage, dx: i64, dy: i64) -> usize {
    overlap_window(
        (fixed.width(), fixed.height()),
        (template.width(), template.height()),
        dx,
        dy,
    )
    .map_or(0, |(x0, x1, y0, y1)| (x1 - x0) * (y1 - y0))
}

/// ZNCC between `template` placed at `(dx, dy)` on `fixed` and the fixed
/// pixels it covers.
pub fn ncc_at(
    fixed: &GrayImage,
    template: &GrayImage,
    dx: i64,
    dy: i64,
    min_overlap_frac: f64,
) -> Result<f64> {
    let required = required_overlap(fixed, template, min_overlap_frac);
    let overlap = overlap_count(fixed, template, dx, dy);
    if overlap < required {
        return Err(RigidError::InsufficientOverlap { overlap, required });
    }
    let (x0, x1, y0, y1) = overlap_window(
        (fixed.width(), fixed.height()),
        (template.width(), template.height()),
        dx,
        dy,
    )
    .expect("non-empty overlap");
    let tx0 = (x0 as i64 - dx) as usize;
    let ty0 = (y0 as i64 - dy) as usize;
    let cols = x1 - x0;
    zncc(|| {
        (y0..y1).flat_map(move |y| {
            let frow = &fixed.row(y)[x0..x1];
            let trow = &template.row(y - y0 + ty0)[tx0..tx0 + cols];
            frow.iter().copied().zip(trow.iter().copied())
        })
    })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    rotated: bool,
    dx: i64,
    dy: i64,
    score: f64,
}

impl Candidate {
    /// Total order where `Less` means "better": higher score, then the
    /// un-rotated orientation, then smaller |dx|+|dy|, then smaller (dx, dy).
    fn rank(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.rotated.cmp(&other.rotated))
            .then((self.dx.abs() + self.dy.abs()).cmp(&(other.dx.abs() + other.dy.abs())))
            .then((self.dx, self.dy).cmp(&(other.dx, other.dy)))
    }

    fn best(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(a), Some(b)) => Some(if b.rank(&a) == Ordering::Less { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        }
    }
}

struct Search<'a> {
    fixed: &'a GrayImage,
    template: &'a GrayImage,
    rotated: bool,
    required: usize,
    min_overlap_frac: f64,
}

impl Search<'_> {
    fn dx_range(&self) -> (i64, i64) {
        (
            1 - self.template.width() as i64,
            self.fixed.width() as i64 - 1,
        )
    }

    fn dy_range(&self) -> (i64, i64) {
        (
            1 - self.template.height() as i64,
            self.fixed.height() as i64 - 1,
        )
    }

    fn score(&self, dx: i64, dy: i64) -> Option<Candidate> {
        if overlap_count(self.fixed, self.template, dx, dy) < self.required {
            return None;
        }
        ncc_at(self.fixed, self.template, dx, dy, self.min_overlap_frac)
            .ok()
            .map(|score| Candidate {
                rotated: self.rotated,
                dx,
                dy,
                score,
            })
    }

    /// Best placement over the grid `xs x ys`. Rows are scored in parallel;
    /// the reduction uses a total order, so the result does not depend on
    /// evaluation order.
    fn best_over(&self, xs: &[i64], ys: &[i64]) -> Option<Candidate> {
        ys.par_iter()
            .map(|&dy| {
                xs.iter()
                    .fold(None, |acc, &dx| Candidate::best(acc, self.score(dx, dy)))
            })
            .reduce(|| None, Candidate::best)
    }

    fn run(&self, cfg: &MatchConfig) -> Option<Candidate> {
        let (x_lo, x_hi) = self.dx_range();
        let (y_lo, y_hi) = self.dy_range();
        let grid =
            |lo: i64, hi: i64, step: usize| -> Vec<i64> { (lo..=hi).step_by(step).collect() };
        let coarse = self.best_over(&grid(x_lo, x_hi, cfg.stride), &grid(y_lo, y_hi, cfg.stride));
        if cfg.stride == 1 {
            return coarse;
        }
        let Some(hit) = coarse else {
            // The coarse grid can step over a narrow band of valid offsets.
            return self.best_over(&grid(x_lo, x_hi, 1), &grid(y_lo, y_hi, 1));
        };
        let r = cfg.refine_radius as i64;
        let xs = grid((hit.dx - r).max(x_lo), (hit.dx + r).min(x_hi), 1);
        let ys = grid((hit.dy - r).max(y_lo), (hit.dy + r).min(y_hi), 1);
        Candidate::best(Some(hit), self.best_over(&xs, &ys))
    }
}

/// Finds the orientation and translation maximizing ZNCC between the
/// moving image (or its 180° rotation) and the fixed image.
pub fn template_match(
    fixed: &GrayImage,
    moving: &GrayImage,
    cfg: &MatchConfig,
) -> Result<RigidEstimate> {
    cfg.validate()?;
    let rotated = rotate180(moving);
    let required = required_overlap(fixed, moving, cfg.min_overlap_frac);
    let best = [(false, moving), (true, &rotated)]
        .into_iter()
        .map(|(is_rotated, template)| {
            Search {
                fixed,
                template,
                rotated: is_rotated,
                required,
                min_overlap_frac: cfg.min_overlap_frac,
            }
            .run(cfg)
        })
        .fold(None, Candidate::best)
        .ok_or(RigidError::NoValidPlacement)?;
    Ok(RigidEstimate {
        rotated_180: best.rotated,
        dx: best.dx,
        dy: best.dy,
        score: best.score,
    })
}

/// Resamples the moving image onto an `out_width x out_height` fixed grid:
/// rotation first, then translation. Uncovered pixels repeat the nearest
/// border pixel of the moving image.
pub fn apply_rigid(
    moving: &GrayImage,
    est: &RigidEstimate,
    out_width: usize,
    out_height: usize,
) -> GrayImage {
    let oriented;
    let source = if est.rotated_180 {
        oriented = rotate180(moving);
        &oriented
    } else {
        moving
    };
    let max_x = source.width() as i64 - 1;
    let max_y = source.height() as i64 - 1;
    let mut data = Vec::with_capacity(out_width * out_height);
    for y in 0..out_height as i64 {
        let sy = (y - est.dy).clamp(0, max_y) as usize;
        let row = source.row(sy);
        for x in 0..out_width as i64 {
            data.push(row[(x - est.dx).clamp(0, max_x) as usize]);
        }
    }
    GrayImage::from_parts(out_width, out_height, data, moving.spacing_um())
}
