//! Deterministic synthetic image pairs with known ground-truth transforms.
//!
//! A pair is built from a procedural texture (the fixed image) and a true
//! fixed-to-moving point map
//!
//! ```text
//! T(p) = R(S(p + f(p) - d))
//! ```
//!
//! where `f` is a smooth displacement field, `d` an integer shift, `S` an
//! isotropic scale about the image center and `R` the optional 180° index
//! flip. The moving image is the fixed image pulled through `T^-1`, then
//! blurred and perturbed with noise. The scale is folded into the reported
//! ground-truth field so that `(true_rigid, true_field)` reproduce `T`
//! exactly through [`crate::landmarks::map_fixed_to_moving`].
//!
//! Randomness comes from a local splitmix64 generator (Steele, Lea and
//! Flood constants), so pairs are reproducible from the seed alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deform::DisplacementField;
use crate::landmarks::LandmarkPair;
use crate::raster::{gaussian_blur, GrayImage};
use crate::rigid::RigidEstimate;

/// Working-scale spacing: 0.23 µm/px at 40X, downsampled by 32.
pub const WORKING_SPACING_UM: f64 = 0.23 * 32.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

/// splitmix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
    const MIX2: u64 = 0x94D0_49BB_1331_11EB;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(Self::MIX1);
        z = (z ^ (z >> 27)).wrapping_mul(Self::MIX2);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (one draw per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Independent stream derived from this seed and a label.
    fn fork(seed: u64, label: u64) -> Self {
        let mut s = Self::new(seed ^ label.wrapping_mul(Self::MIX1));
        s.next_u64();
        s
    }
}

const TEXTURE_STREAM: u64 = 1;
const FIELD_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Continuous band-limited texture: four oriented sinusoids (wavelengths
/// 10 to 40 px) plus lattice value noise on a 4 px grid with quintic
/// smoothing, defined on the whole plane and affinely
/// normalized so the samples on the `width x height` grid span
/// `[0.05, 0.95]`.
#[derive(Debug, Clone)]
pub struct TextureModel {
    seed: u64,
    waves: Vec<(f64, f64, f64)>,
    wave_weight: f64,
    noise_cell: f64,
    offset: f64,
    gain: f64,
}

impl TextureModel {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::fork(seed, TEXTURE_STREAM);
        let waves = (0..4)
            .map(|_| {
                let wavelength = rng.uniform(10.0, 40.0);
                let angle = rng.uniform(0.0, std::f64::consts::PI);
                let phase = rng.uniform(0.0, std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                (k * angle.cos(), k * angle.sin(), phase)
            })
            .collect();
        let mut model = Self {
            seed,
            waves,
            wave_weight: 0.1,
            noise_cell: 4.0,
            offset: 0.0,
            gain: 1.0,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in 0..height {
            for x in 0..width {
                let v = model.raw(x as f64, y as f64);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        model.gain = 0.9 / (hi - lo).max(1e-12);
        model.offset = 0.05 - lo * model.gain;
        model
    }

    fn lattice(&self, ix: i64, iy: i64) -> f64 {
        let key = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ self.seed.rotate_left(17);
        SplitMix64::new(key).next_f64() * 2.0 - 1.0
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.noise_cell, y / self.noise_cell);
        let (fx, fy) = (gx.floor(), gy.floor());
        let (ix, iy) = (fx as i64, fy as i64);
        let smooth = |t: f64| t * t * t * (t * (6.0 * t - 15.0) + 10.0);
        let (tx, ty) = (smooth(gx - fx), smooth(gy - fy));
        let a = self.lattice(ix, iy);
        let b = self.lattice(ix + 1, iy);
        let c = self.lattice(ix, iy + 1);
        let d = self.lattice(ix + 1, iy + 1);
        let top = a + tx * (b - a);
        let bottom = c + tx * (d - c);
        top + ty * (bottom - top)
    }

    fn raw(&self, x: f64, y: f64) -> f64 {
        let wave: f64 = self
            .waves
            .iter()
            .map(|(kx, ky, ph)| (kx * x + ky * y + ph).sin())
            .sum();
        self.wave_weight * wave + self.noise(x, y)
    }

    /// Intensity at a real-valued position, clamped to `[0, 1]`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.offset + self.gain * self.raw(x, y)).clamp(0.0, 1.0)
    }
}

/// Deterministic texture for synthetic pairs; see [`TextureModel`].
pub fn make_texture(width: usize, height: usize, seed: u64) -> GrayImage {
    assert!(
        width >= 16 && height >= 16,
        "texture must be at least 16x16"
    );
    let model = TextureModel::new(width, height, seed);
    let data = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| model.eval(x as f64, y as f64))
        .collect();
    GrayImage::from_parts(width, height, data, WORKING_SPACING_UM)
}

/// Continuous smooth displacement model: windowed sums of oriented
/// sinusoids with wavelengths in `[1.25, 2] x wavelength`, vanishing on the
/// image border and bounded in length by `amplitude`.
#[derive(Debug, Clone)]
pub struct SmoothFieldModel {
    width: usize,
    height: usize,
    scale: f64,
    terms: [Vec<(f64, f64, f64, f64)>; 2],
}

impl SmoothFieldModel {
    pub fn new(width: usize, height: usize, amplitude: f64, wavelength: f64, seed: u64) -> Self {
        let mut rng = SplitMix64::fork(seed, FIELD_STREAM);
        let mut component = || {
            (0..3)
                .map(|_| {
                    let lambda = rng.uniform(1.25 * wavelength, 2.0 * wavelength);
                    let angle = rng.uniform(0.0, std::f64::consts::TAU);
                    let phase = rng.uniform(0.0, std::f64::consts::TAU);
                    let weight = rng.uniform(0.5, 1.0);
                    let k = std::f64::consts::TAU / lambda;
                    (k * angle.cos(), k * angle.sin(), phase, weight)
                })
                .collect::<Vec<_>>()
        };
        let terms = [component(), component()];
        Self {
            width,
            height,
            // Each component is bounded by amplitude / sqrt(2).
            scale: amplitude / std::f64::consts::SQRT_2,
            terms,
        }
    }

    fn window(&self, x: f64, y: f64) -> f64 {
        if self.width < 2 || self.height < 2 {
            return 0.0;
        }
        let wx = (std::f64::consts::PI * x / (self.width - 1) as f64).sin();
        let wy = (std::f64::consts::PI * y / (self.height - 1) as f64).sin();
        if (0.0..=(self.width - 1) as f64).contains(&x)
            && (0.0..=(self.height - 1) as f64).contains(&y)
        {
            wx * wy
        } else {
            0.0
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        if self.scale == 0.0 {
            return [0.0; 2];
        }
        let w = self.window(x, y);
        self.terms.clone().map(|terms| {
            let total: f64 = terms.iter().map(|t| t.3).sum();
            let s: f64 = terms
                .iter()
                .map(|(kx, ky, ph, c)| c * (kx * x + ky * y + ph).sin())
                .sum();
            self.scale * w * s / total
        })
    }

    pub fn sample_grid(&self) -> DisplacementField {
        DisplacementField::from_fn(self.width, self.height, |x, y| {
            self.eval(x as f64, y as f64)
        })
        .expect("model values are finite")
    }
}

pub fn make_smooth_field(
    width: usize,
    height: usize,
    amplitude: f64,
    wavelength: f64,
    seed: u64,
) -> DisplacementField {
    assert!(amplitude >= 0.0 && wavelength > 0.0);
    SmoothFieldModel::new(width, height, amplitude, wavelength, seed).sample_grid()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Integer translation `(dx, dy)`: moving pixel `m` shows fixed pixel
    /// `m + shift` (before rotation).
    pub shift: [i64; 2],
    pub rotate_180: bool,
    pub scale: f64,
    pub blur_sigma: f64,
    pub field_amplitude: f64,
    pub field_wavelength: f64,
    pub noise_sigma: f64,
    pub spacing_um: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 128,
            height: 128,
            shift: [0, 0],
            rotate_180: false,
            scale: 1.0,
            blur_sigma: 0.0,
            field_amplitude: 0.0,
            field_wavelength: 32.0,
            noise_sigma: 0.0,
            spacing_um: WORKING_SPACING_UM,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.width < 16 || self.height < 16 {
            return fail("width and height must be at least 16");
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return fail("scale must be positive");
        }
        if !(self.field_wavelength.is_finite() && self.field_wavelength > 0.0) {
            return fail("field_wavelength must be positive");
        }
        for (name, v) in [
            ("blur_sigma", self.blur_sigma),
            ("field_amplitude", self.field_amplitude),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::InvalidSpec(format!("{name} must be >= 0")));
            }
        }
        if !(self.spacing_um.is_finite() && self.spacing_um > 0.0) {
            return fail("spacing_um must be positive");
        }
        if self.shift[0].unsigned_abs() as usize >= self.width
            || self.shift[1].unsigned_abs() as usize >= self.height
        {
            return fail("shift must be smaller than the image");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub fixed: GrayImage,
    pub moving: GrayImage,
    pub true_rigid: RigidEstimate,
    pub true_field: DisplacementField,
    pub landmarks: Vec<LandmarkPair>,
}

/// Geometry of one synthetic pair.
struct TrueMap<'a> {
    spec: &'a SynthSpec,
    field: &'a SmoothFieldModel,
    center: [f64; 2],
}

impl TrueMap<'_> {
    fn shift(&self) -> [f64; 2] {
        [self.spec.shift[0] as f64, self.spec.shift[1] as f64]
    }

    /// `S(b) - b`, exactly zero when the scale is one.
    fn scale_offset(&self, b: [f64; 2]) -> [f64; 2] {
        let s = self.spec.scale - 1.0;
        [s * (b[0] - self.center[0]), s * (b[1] - self.center[1])]
    }

    fn flip(&self, q: [f64; 2]) -> [f64; 2] {
        if self.spec.rotate_180 {
            [
                (self.spec.width - 1) as f64 - q[0],
                (self.spec.height - 1) as f64 - q[1],
            ]
        } else {
            q
        }
    }

    /// Ground-truth field on the fixed grid: smooth part plus the scale
    /// expressed as a displacement.
    fn composed_field(&self, x: usize, y: usize) -> [f64; 2] {
        let [u, v] = self.field.eval(x as f64, y as f64);
        let d = self.shift();
        let b = [x as f64 + u - d[0], y as f64 + v - d[1]];
        let ds = self.scale_offset(b);
        [u + ds[0], v + ds[1]]
    }

    fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let [u, v] = self.field.eval(p[0], p[1]);
        let d = self.shift();
        let b = [p[0] + u - d[0], p[1] + v - d[1]];
        let ds = self.scale_offset(b);
        self.flip([b[0] + ds[0], b[1] + ds[1]])
    }

    /// Fixed-image point that lands on moving pixel `m`.
    fn inverse(&self, m: [f64; 2]) -> [f64; 2] {
        let c = self.flip(m);
        let b = if self.spec.scale == 1.0 {
            c
        } else {
            [
                self.center[0] + (c[0] - self.center[0]) / self.spec.scale,
                self.center[1] + (c[1] - self.center[1]) / self.spec.scale,
            ]
        };
        let d = self.shift();
        let a = [b[0] + d[0], b[1] + d[1]];
        if self.spec.field_amplitude == 0.0 {
            return a;
        }
        // p + f(p) = a; the field is a contraction for the supported
        // amplitude/wavelength ratios.
        let mut p = a;
        for _ in 0..100 {
            let [u, v] = self.field.eval(p[0], p[1]);
            let next = [a[0] - u, a[1] - v];
            let step = (next[0] - p[0]).abs().max((next[1] - p[1]).abs());
            p = next;
            if step < 1e-12 {
                break;
            }
        }
        p
    }
}

/// Builds a synthetic pair from `spec`.
pub fn make_pair(spec: &SynthSpec) -> Result<SynthPair, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let texture = TextureModel::new(w, h, spec.seed);
    let fixed = make_texture(w, h, spec.seed)
        .with_spacing(spec.spacing_um)
        .expect("validated spacing");
    let model = SmoothFieldModel::new(w, h, spec.field_amplitude, spec.field_wavelength, spec.seed);
    let map = TrueMap {
        spec,
        field: &model,
        center: [(w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0],
    };

    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = map.inverse([x as f64, y as f64]);
            data.push(texture.eval(p[0], p[1]));
        }
    }
    let mut moving = GrayImage::new(w, h, data, spec.spacing_um).expect("samples lie in [0, 1]");
    if spec.blur_sigma > 0.0 {
        moving = gaussian_blur(&moving, spec.blur_sigma);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = SplitMix64::fork(spec.seed, NOISE_STREAM);
        let noisy = moving
            .data()
            .iter()
            .map(|v| (v + spec.noise_sigma * rng.normal()).clamp(0.0, 1.0))
            .collect();
        moving = GrayImage::new(w, h, noisy, spec.spacing_um).expect("clamped");
    }

    let true_field =
        DisplacementField::from_fn(w, h, |x, y| map.composed_field(x, y)).expect("finite field");

    let step = (w.min(h) / 8).max(4);
    let margin = 2.0;
    let mut landmarks = Vec::new();
    for y in (step / 2..h).step_by(step) {
        for x in (step / 2..w).step_by(step) {
            let q = map.forward([x as f64, y as f64]);
            let inside = q[0] >= margin
                && q[1] >= margin
                && q[0] <= (w - 1) as f64 - margin
                && q[1] <= (h - 1) as f64 - margin;
            if inside {
                landmarks.push(LandmarkPair {
                    id: format!("L{:03}", landmarks.len()),
                    fixed_xy: [x as f64, y as f64],
                    moving_xy: q,
                });
            }
        }
    }

    Ok(SynthPair {
        fixed,
        moving,
        true_rigid: RigidEstimate {
            rotated_180: spec.rotate_180,
            dx: spec.shift[0],
            dy: spec.shift[1],
            score: 1.0,
        },
        true_field,
        landmarks,
    })
}
