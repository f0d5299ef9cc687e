//! Landmark ingestion, point mapping through the estimated transforms, and
//! the cohort metric: the median over image pairs of each pair's 90th
//! percentile landmark distance, in micrometers.
//!
//! Points are mapped from the fixed image into the moving image, the same
//! direction the image resampling pulls pixels. Distances are therefore
//! measured in moving-image coordinates at working scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deform::DisplacementField;
use crate::rigid::RigidEstimate;

pub const CSV_HEADER: [&str; 5] = ["id", "fixed_x", "fixed_y", "moving_x", "moving_y"];

#[derive(Debug, Error, PartialEq)]
pub enum LandmarkError {
    #[error("landmark csv row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("no landmarks to evaluate")]
    EmptyLandmarks,
    #[error("statistic of an empty input")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, LandmarkError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPair {
    pub id: String,
    pub fixed_xy: [f64; 2],
    pub moving_xy: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub pair_id: String,
    pub p90_um: f64,
    pub distances_um: Vec<f64>,
}

/// A pair that could not be registered or evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPair {
    pub pair_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEval {
    pub median_p90_um: f64,
    #[serde(rename = "images")]
    pub per_image: Vec<ImageEval>,
    #[serde(default)]
    pub failures: Vec<FailedPair>,
}

/// Parses `id,fixed_x,fixed_y,moving_x,moving_y` CSV text. Rows are
/// numbered from 1 for the header; blank lines are skipped.
pub fn parse_landmarks(csv_text: &str) -> Result<Vec<LandmarkPair>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(r) => r.map_err(|e| LandmarkError::Parse {
            row: 1,
            message: e.to_string(),
        })?,
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(LandmarkError::Parse {
            row: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut out = Vec::new();
    for record in records {
        let record = record.map_err(|e| LandmarkError::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 5 {
            return Err(LandmarkError::Parse {
                row,
                message: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LandmarkError::Parse {
                    row,
                    message: format!("{} is not a finite number: {:?}", CSV_HEADER[i], &record[i]),
                })
        };
        out.push(LandmarkPair {
            id: record[0].to_string(),
            fixed_xy: [num(1)?, num(2)?],
            moving_xy: [num(3)?, num(4)?],
        });
    }
    Ok(out)
}

pub fn landmarks_to_csv(pairs: &[LandmarkPair]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for p in pairs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.id, p.fixed_xy[0], p.fixed_xy[1], p.moving_xy[0], p.moving_xy[1]
        ));
    }
    out
}

/// Predicted location in the original moving image of fixed-grid point `p`.
///
/// Applies the displacement field first (`q = p + field(p)`), then undoes the
/// rigid placement: subtract the translation, then mirror through the
/// moving image when the estimate is rotated by 180°.
pub fn map_fixed_to_moving(
    p: [f64; 2],
    est: &RigidEstimate,
    field: &DisplacementField,
    moving_dims: (usize, usize),
) -> Result<[f64; 2]> {
    let (fw, fh) = (field.width() as f64, field.height() as f64);
    if !(p[0] >= -0.5 && p[0] <= fw - 0.5 && p[1] >= -0.5 && p[1] <= fh - 0.5) {
        return Err(LandmarkError::ShapeMismatch(format!(
            "point ({}, {}) lies outside the {}x{} field grid",
            p[0],
            p[1],
            field.width(),
            field.height()
        )));
    }
    let [u, v] = field.sample(p[0], p[1]);
    let qx = p[0] + u - est.dx as f64;
    let qy = p[1] + v - est.dy as f64;
    Ok(if est.rotated_180 {
        [
            (moving_dims.0 as f64 - 1.0) - qx,
            (moving_dims.1 as f64 - 1.0) - qy,
        ]
    } else {
        [qx, qy]
    })
}

/// Distances between predicted and annotated moving-image landmarks, in
/// micrometers, with their 90th percentile.
pub fn landmark_distances(
    pair_id: &str,
    pairs: &[LandmarkPair],
    est: &RigidEstimate,
    field: &DisplacementField,
    moving_dims: (usize, usize),
    spacing_um: f64,
) -> Result<ImageEval> {
    if pairs.is_empty() {
        return Err(LandmarkError::EmptyLandmarks);
    }
    let distances_um = pairs
        .iter()
        .map(|lm| {
            let q = map_fixed_to_moving(lm.fixed_xy, est, field, moving_dims)?;
            Ok(spacing_um * (q[0] - lm.moving_xy[0]).hypot(q[1] - lm.moving_xy[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let p90_um = percentile_90(&distances_um)?;
    Ok(ImageEval {
        pair_id: pair_id.to_string(),
        p90_um,
        distances_um,
    })
}

/// 90th percentile with linear interpolation between order statistics at
/// rank `0.9 (n - 1)`.
pub fn percentile_90(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(LandmarkError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = 0.9 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    Ok(match sorted.get(lo + 1) {
        Some(&next) => sorted[lo] + frac * (next - sorted[lo]),
        None => sorted[lo],
    })
}

/// Aggregates per-image results into the cohort metric. Images are ordered
/// by pair id; an even count takes the mean of the two central values.
pub fn median_p90(mut per_image: Vec<ImageEval>) -> Result<CohortEval> {
    if per_image.is_empty() {
        return Err(LandmarkError::EmptyInput);
    }
    per_image.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    let mut p90s: Vec<f64> = per_image.iter().map(|e| e.p90_um).collect();
    p90s.sort_by(f64::total_cmp);
    let n = p90s.len();
    let median = if n % 2 == 1 {
        p90s[n / 2]
    } else {
        (p90s[n / 2 - 1] + p90s[n / 2]) / 2.0
    };
    Ok(CohortEval {
        median_p90_um: median,
        per_image,
        failures: Vec::new(),
    })
}
