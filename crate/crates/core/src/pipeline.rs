//! End-to-end commands: register a pair, evaluate a cohort, write a
//! synthetic pair. Every failure carries the stage it happened in and maps
//! to a process exit code.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deform::{optimize_deformation, warp, DeformConfig, DeformError, DeformResult};
use crate::landmarks::{
    landmark_distances, landmarks_to_csv, median_p90, parse_landmarks, CohortEval, FailedPair,
    ImageEval, LandmarkError, LandmarkPair,
};
use crate::raster::{
    downsample, encode_png, load_gray, trim_black_border, CropRect, GrayImage, RasterError,
    DEFAULT_TRIM_THRESHOLD,
};
use crate::rigid::{apply_rigid, template_match, MatchConfig, RigidError, RigidEstimate};
use crate::synth::{make_pair, SynthError, SynthSpec};

/// NCC score below which a rigid estimate is flagged in the report.
pub const LOW_SCORE_WARNING: f64 = 0.2;

/// Side count of the checkerboard overlay.
const CHECKER_TILES: usize = 8;

pub const RIGID_FILE: &str = "rigid.json";
pub const FIELD_FILE: &str = "field.dfld";
pub const TRACE_FILE: &str = "trace.csv";
pub const WARPED_FILE: &str = "warped.png";
pub const CHECKERBOARD_FILE: &str = "checkerboard.png";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub downsample_factor: usize,
    pub trim_threshold: f64,
    #[serde(rename = "match")]
    pub match_cfg: MatchConfig,
    pub deform: DeformConfig,
    pub spacing_um_at_full_res: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            downsample_factor: 32,
            trim_threshold: DEFAULT_TRIM_THRESHOLD,
            match_cfg: MatchConfig::default(),
            deform: DeformConfig::default(),
            spacing_um_at_full_res: 0.23,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.downsample_factor < 1 {
            return Err("downsample_factor must be >= 1".into());
        }
        if !(self.trim_threshold >= 0.0 && self.trim_threshold < 1.0) {
            return Err("trim_threshold must lie in [0, 1)".into());
        }
        if !(self.spacing_um_at_full_res.is_finite() && self.spacing_um_at_full_res > 0.0) {
            return Err("spacing_um_at_full_res must be positive".into());
        }
        self.match_cfg.validate().map_err(|e| e.to_string())?;
        self.deform.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Pixel spacing after downsampling.
    pub fn working_spacing_um(&self) -> f64 {
        self.spacing_um_at_full_res * self.downsample_factor as f64
    }

    /// Reads a JSON config; absent fields take their defaults.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = read_text(path, Stage::Config)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| {
            PipelineError::new(
                Stage::Config,
                ErrorKind::Usage(format!("{}: {e}", path.display())),
            )
        })?;
        cfg.validate()
            .map_err(|m| PipelineError::new(Stage::Config, ErrorKind::Usage(m)))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Preprocess,
    Rigid,
    Deform,
    Evaluate,
    Synth,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Rigid => "rigid",
            Stage::Deform => "deform",
            Stage::Evaluate => "evaluate",
            Stage::Synth => "synth",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum ErrorKind {
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Rigid(#[from] RigidError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("the manifest lists no pairs")]
    EmptyCohort,
    #[error("every pair failed ({0} failures)")]
    AllPairsFailed(usize),
}

#[derive(Debug, Error)]
#[error("{stage}: {kind}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub kind: ErrorKind,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: impl Into<ErrorKind>) -> Self {
        Self {
            stage,
            kind: kind.into(),
        }
    }

    /// 1 for usage or configuration problems, 2 for file access and
    /// decoding, 3 for failures inside the pipeline.
    pub fn exit_code(&self) -> i32 {
        match &self.kind {
            ErrorKind::Usage(_) | ErrorKind::Synth(SynthError::InvalidSpec(_)) => 1,
            ErrorKind::Io { .. }
            | ErrorKind::Raster(RasterError::Io { .. } | RasterError::Decode { .. })
            | ErrorKind::Deform(DeformError::Io(_) | DeformError::Format(_)) => 2,
            ErrorKind::Rigid(RigidError::InvalidConfig(_))
            | ErrorKind::Deform(DeformError::InvalidConfig(_)) => 1,
            _ => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_error(stage: Stage, path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::new(
        stage,
        ErrorKind::Io {
            path: path.display().to_string(),
            source,
        },
    )
}

fn read_text(path: &Path, stage: Stage) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(stage, path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T> {
    let text = read_text(path, stage)?;
    serde_json::from_str(&text).map_err(|e| {
        PipelineError::new(stage, ErrorKind::Usage(format!("{}: {e}", path.display())))
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

/// Intermediate products of one registration.
#[derive(Debug, Clone)]
pub struct Registration {
    /// Trimmed working-scale images.
    pub fixed: GrayImage,
    pub moving: GrayImage,
    pub fixed_crop: CropRect,
    pub moving_crop: CropRect,
    pub rigid: RigidEstimate,
    /// Moving image resampled onto the trimmed fixed grid by `rigid`.
    pub rigid_aligned: GrayImage,
    pub deform: DeformResult,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Downsamples and trims one loaded image.
pub fn preprocess(img: &GrayImage, cfg: &PipelineConfig) -> Result<(GrayImage, CropRect)> {
    let small = downsample(img, cfg.downsample_factor);
    trim_black_border(&small, cfg.trim_threshold)
        .map_err(|e| PipelineError::new(Stage::Preprocess, e))
}

/// Runs both registration steps on decoded full-resolution images. A
/// `rigid_override` replaces template matching.
pub fn register_images(
    fixed_raw: &GrayImage,
    moving_raw: &GrayImage,
    cfg: &PipelineConfig,
    rigid_override: Option<RigidEstimate>,
) -> Result<Registration> {
    cfg.validate()
        .map_err(|m| PipelineError::new(Stage::Config, ErrorKind::Usage(m)))?;
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let (fixed, fixed_crop) = preprocess(fixed_raw, cfg)?;
    let (moving, moving_crop) = preprocess(moving_raw, cfg)?;
    timings.insert(Stage::Preprocess.to_string(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let rigid = match rigid_override {
        Some(est) => est,
        None => template_match(&fixed, &moving, &cfg.match_cfg)
            .map_err(|e| PipelineError::new(Stage::Rigid, e))?,
    };
    let rigid_aligned = apply_rigid(&moving, &rigid, fixed.width(), fixed.height());
    timings.insert(Stage::Rigid.to_string(), t.elapsed().as_secs_f64());
    log::info!(
        "rigid: rotated_180={} dx={} dy={} score={:.4}",
        rigid.rotated_180,
        rigid.dx,
        rigid.dy,
        rigid.score
    );

    let t = Instant::now();
    let deform = optimize_deformation(&fixed, &rigid_aligned, &cfg.deform)
        .map_err(|e| PipelineError::new(Stage::Deform, e))?;
    timings.insert(Stage::Deform.to_string(), t.elapsed().as_secs_f64());
    log::info!(
        "deform: mse {:.6} -> {:.6} over {} levels",
        deform.initial_mse,
        deform.final_mse,
        deform.levels_used
    );

    Ok(Registration {
        fixed,
        moving,
        fixed_crop,
        moving_crop,
        rigid,
        rigid_aligned,
        deform,
        timings,
    })
}

/// Alternates fixed and warped tiles on an 8x8 grid.
pub fn checkerboard(fixed: &GrayImage, warped: &GrayImage) -> GrayImage {
    assert_eq!(
        (fixed.width(), fixed.height()),
        (warped.width(), warped.height())
    );
    let tw = fixed.width().div_ceil(CHECKER_TILES);
    let th = fixed.height().div_ceil(CHECKER_TILES);
    GrayImage::from_fn(fixed.width(), fixed.height(), fixed.spacing_um(), |x, y| {
        if (x / tw + y / th).is_multiple_of(2) {
            fixed.get(x, y)
        } else {
            warped.get(x, y)
        }
    })
    .expect("tiles copy valid intensities")
}

/// Converts a point from input-image pixels to trimmed working-scale pixels.
/// Pixel centers map onto the centers of the averaged boxes.
pub fn to_working(p: [f64; 2], factor: usize, crop: &CropRect) -> [f64; 2] {
    let f = factor as f64;
    [
        (p[0] + 0.5) / f - 0.5 - crop.x0 as f64,
        (p[1] + 0.5) / f - 0.5 - crop.y0 as f64,
    ]
}

/// Landmark distances for a finished registration. Landmarks are given in
/// input-image pixels; distances are measured at working scale.
pub fn evaluate_registration(
    pair_id: &str,
    reg: &Registration,
    landmarks: &[LandmarkPair],
    cfg: &PipelineConfig,
) -> std::result::Result<ImageEval, LandmarkError> {
    let local: Vec<LandmarkPair> = landmarks
        .iter()
        .map(|lm| LandmarkPair {
            id: lm.id.clone(),
            fixed_xy: to_working(lm.fixed_xy, cfg.downsample_factor, &reg.fixed_crop),
            moving_xy: to_working(lm.moving_xy, cfg.downsample_factor, &reg.moving_crop),
        })
        .collect();
    landmark_distances(
        pair_id,
        &local,
        &reg.rigid,
        &reg.deform.field,
        (reg.moving.width(), reg.moving.height()),
        cfg.working_spacing_um(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub fixed: PathBuf,
    pub moving: PathBuf,
    /// Rigid estimate file used instead of template matching, if any.
    pub rigid: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportCrops {
    pub fixed: CropRect,
    pub moving: CropRect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformSummary {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub initial_total: f64,
    pub final_total: f64,
    pub iterations: usize,
    pub levels_used: usize,
    pub max_displacement_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutputs {
    pub rigid: PathBuf,
    pub field: PathBuf,
    pub trace: PathBuf,
    pub warped: PathBuf,
    pub checkerboard: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub config: PipelineConfig,
    pub working_spacing_um: f64,
    pub inputs: ReportInputs,
    pub crops: ReportCrops,
    pub working_size: [usize; 2],
    pub rigid: RigidEstimate,
    pub deform: DeformSummary,
    pub outputs: ReportOutputs,
    /// Wall-clock seconds per stage.
    pub timings_s: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Writes every file or none: on failure the files written so far are
/// removed, along with `dir` when this call created it.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    let created = !dir.exists();
    fs::create_dir_all(dir).map_err(|e| io_error(Stage::Write, dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created {
                let _ = fs::remove_dir_all(dir);
            }
            return Err(io_error(Stage::Write, &path, e));
        }
        written.push(path);
    }
    Ok(())
}

fn load(path: &Path, cfg: &PipelineConfig) -> Result<GrayImage> {
    load_gray(path, cfg.spacing_um_at_full_res).map_err(|e| PipelineError::new(Stage::Load, e))
}

/// Registers `moving` onto `fixed` and writes all artifacts into `out_dir`.
/// When `rigid_path` is given, step one is skipped and the saved estimate
/// is used.
pub fn cmd_register(
    fixed_path: &Path,
    moving_path: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
    rigid_path: Option<&Path>,
) -> Result<RegistrationReport> {
    let rigid_override = rigid_path
        .map(|p| read_json::<RigidEstimate>(p, Stage::Load))
        .transpose()?;

    let t = Instant::now();
    let fixed_raw = load(fixed_path, cfg)?;
    let moving_raw = load(moving_path, cfg)?;
    let load_s = t.elapsed().as_secs_f64();

    let reg = register_images(&fixed_raw, &moving_raw, cfg, rigid_override)?;
    let t = Instant::now();
    let warped = warp(&reg.rigid_aligned, &reg.deform.field)
        .map_err(|e| PipelineError::new(Stage::Deform, e))?;
    let overlay = checkerboard(&reg.fixed, &warped);

    let mut warnings = Vec::new();
    if rigid_override.is_none() && reg.rigid.score < LOW_SCORE_WARNING {
        let msg = format!(
            "rigid NCC score {:.4} is below {LOW_SCORE_WARNING}; the alignment may be wrong",
            reg.rigid.score
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut timings = reg.timings.clone();
    timings.insert(Stage::Load.to_string(), load_s);
    let d = &reg.deform;
    let mut report = RegistrationReport {
        config: *cfg,
        working_spacing_um: cfg.working_spacing_um(),
        inputs: ReportInputs {
            fixed: fixed_path.to_path_buf(),
            moving: moving_path.to_path_buf(),
            rigid: rigid_path.map(Path::to_path_buf),
        },
        crops: ReportCrops {
            fixed: reg.fixed_crop,
            moving: reg.moving_crop,
        },
        working_size: [reg.fixed.width(), reg.fixed.height()],
        rigid: reg.rigid,
        deform: DeformSummary {
            initial_mse: d.initial_mse,
            final_mse: d.final_mse,
            initial_total: d.initial_total,
            final_total: d.final_total,
            iterations: d.trace.records.len(),
            levels_used: d.levels_used,
            max_displacement_px: d.field.max_norm(),
        },
        outputs: ReportOutputs {
            rigid: out_dir.join(RIGID_FILE),
            field: out_dir.join(FIELD_FILE),
            trace: out_dir.join(TRACE_FILE),
            warped: out_dir.join(WARPED_FILE),
            checkerboard: out_dir.join(CHECKERBOARD_FILE),
            report: out_dir.join(REPORT_FILE),
        },
        timings_s: timings,
        warnings,
    };

    let mut files = vec![
        (RIGID_FILE, to_json(&reg.rigid)),
        (FIELD_FILE, d.field.to_dfld_bytes()),
        (TRACE_FILE, d.trace.to_csv().into_bytes()),
        (WARPED_FILE, encode_png(&warped)),
        (CHECKERBOARD_FILE, encode_png(&overlay)),
    ];
    report
        .timings_s
        .insert(Stage::Write.to_string(), t.elapsed().as_secs_f64());
    files.push((REPORT_FILE, to_json(&report)));
    write_all(out_dir, &files)?;
    Ok(report)
}

/// One entry of an evaluation manifest. Relative paths resolve against the
/// manifest's directory; `landmarks` resolves against `landmarks_dir` when
/// that is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    pub id: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub landmarks: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub landmarks_dir: Option<PathBuf>,
    pub pairs: Vec<ManifestPair>,
}

fn evaluate_pair(
    pair: &ManifestPair,
    base: &Path,
    landmarks_base: &Path,
    cfg: &PipelineConfig,
) -> Result<ImageEval> {
    let landmarks_path = landmarks_base.join(&pair.landmarks);
    let landmarks = parse_landmarks(&read_text(&landmarks_path, Stage::Load)?)
        .map_err(|e| PipelineError::new(Stage::Load, e))?;
    let fixed = load(&base.join(&pair.fixed), cfg)?;
    let moving = load(&base.join(&pair.moving), cfg)?;
    let reg = register_images(&fixed, &moving, cfg, None)?;
    evaluate_registration(&pair.id, &reg, &landmarks, cfg)
        .map_err(|e| PipelineError::new(Stage::Evaluate, e))
}

/// Registers every manifest pair, writes the cohort metric to `out_path`
/// and returns it. Failed pairs are recorded and left out of the median.
/// `workers` bounds concurrent registrations; `None` uses all cores.
pub fn cmd_evaluate(
    manifest_path: &Path,
    out_path: &Path,
    workers: Option<usize>,
) -> Result<CohortEval> {
    let manifest: Manifest = read_json(manifest_path, Stage::Load)?;
    manifest
        .config
        .validate()
        .map_err(|m| PipelineError::new(Stage::Config, ErrorKind::Usage(m)))?;
    if manifest.pairs.is_empty() {
        return Err(PipelineError::new(Stage::Evaluate, ErrorKind::EmptyCohort));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let landmarks_base = manifest
        .landmarks_dir
        .as_ref()
        .map_or_else(|| base.to_path_buf(), |d| base.join(d));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::new(Stage::Config, ErrorKind::Usage(e.to_string())))?;
    let outcomes: Vec<Result<ImageEval>> = pool.install(|| {
        manifest
            .pairs
            .par_iter()
            .map(|p| evaluate_pair(p, base, &landmarks_base, &manifest.config))
            .collect()
    });

    let mut evals = Vec::new();
    let mut failures = Vec::new();
    for (pair, outcome) in manifest.pairs.iter().zip(outcomes) {
        match outcome {
            Ok(eval) => evals.push(eval),
            Err(e) => {
                log::warn!("pair {} failed at {}: {}", pair.id, e.stage, e.kind);
                failures.push(FailedPair {
                    pair_id: pair.id.clone(),
                    stage: e.stage.to_string(),
                    error: e.kind.to_string(),
                });
            }
        }
    }
    if evals.is_empty() {
        return Err(PipelineError::new(
            Stage::Evaluate,
            ErrorKind::AllPairsFailed(failures.len()),
        ));
    }
    let mut cohort = median_p90(evals).map_err(|e| PipelineError::new(Stage::Evaluate, e))?;
    failures.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    cohort.failures = failures;

    let out_dir = out_path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| io_error(Stage::Write, dir, e))?;
    }
    fs::write(out_path, to_json(&cohort)).map_err(|e| io_error(Stage::Write, out_path, e))?;
    Ok(cohort)
}

pub const SYNTH_FILES: [&str; 6] = [
    "fixed.png",
    "moving.png",
    "landmarks.csv",
    "true_field.dfld",
    "true_rigid.json",
    "spec.json",
];

/// Generates the pair described by the JSON spec at `spec_path` and writes
/// its artifacts into `out_dir`. Returns the written paths.
pub fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let spec: SynthSpec = read_json(spec_path, Stage::Load)?;
    let pair = make_pair(&spec).map_err(|e| PipelineError::new(Stage::Synth, e))?;
    let contents = [
        encode_png(&pair.fixed),
        encode_png(&pair.moving),
        landmarks_to_csv(&pair.landmarks).into_bytes(),
        pair.true_field.to_dfld_bytes(),
        to_json(&pair.true_rigid),
        to_json(&spec),
    ];
    let files: Vec<(&str, Vec<u8>)> = SYNTH_FILES.into_iter().zip(contents).collect();
    write_all(out_dir, &files)?;
    Ok(SYNTH_FILES.iter().map(|f| out_dir.join(f)).collect())
}
