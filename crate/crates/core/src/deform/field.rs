//! Dense displacement fields and their binary serialization.

use std::path::Path;

use super::{DeformError, Result};

const MAGIC: &[u8; 4] = b"DFLD";

/// Per-pixel displacement on the fixed-image grid, pull semantics: output
/// pixel `(x, y)` samples the source at `(x + u, y + v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    vectors: Vec<[f64; 2]>,
}

impl DisplacementField {
    pub fn new(width: usize, height: usize, vectors: Vec<[f64; 2]>) -> Result<Self> {
        if width == 0 || height == 0 || vectors.len() != width * height {
            return Err(DeformError::InvalidField(format!(
                "{} vectors for a {width}x{height} grid",
                vectors.len()
            )));
        }
        if vectors.iter().flatten().any(|c| !c.is_finite()) {
            return Err(DeformError::InvalidField("non-finite component".into()));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vectors: vec![[0.0; 2]; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 2],
    ) -> Result<Self> {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vectors.push(f(x, y));
            }
        }
        Self::new(width, height, vectors)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.vectors[y * self.width + x]
    }

    /// Bilinear interpolation of both components, clamped at the grid edge.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        let cx = x.clamp(0.0, (self.width - 1) as f64);
        let cy = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (cx.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (cy.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = cx - x0 as f64;
        let fy = cy - y0 as f64;
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let a = self.get(x0, y0)[c];
            let b = self.get(x1, y0)[c];
            let cc = self.get(x0, y1)[c];
            let d = self.get(x1, y1)[c];
            let top = a + fx * (b - a);
            let bottom = cc + fx * (d - cc);
            *o = top + fy * (bottom - top);
        }
        out
    }

    /// Largest vector length on the grid.
    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|[u, v]| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            vectors: self
                .vectors
                .iter()
                .map(|[u, v]| [u * factor, v * factor])
                .collect(),
        }
    }

    /// Resamples a field defined on a 2x coarser grid onto a
    /// `width x height` grid. Coarse pixel `j` covers fine pixels `2j` and
    /// `2j + 1`, so fine coordinate `x` sits at coarse `(x - 0.5) / 2`.
    /// Vector lengths are doubled to stay in fine-grid pixels.
    pub fn upsample2(&self, width: usize, height: usize) -> Self {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let [u, v] = self.sample((x as f64 - 0.5) / 2.0, (y as f64 - 0.5) / 2.0);
                vectors.push([2.0 * u, 2.0 * v]);
            }
        }
        Self {
            width,
            height,
            vectors,
        }
    }

    pub(crate) fn components_mut(&mut self) -> &mut [f64] {
        self.vectors.as_flattened_mut()
    }

    /// Little-endian `DFLD` encoding: magic, u32 width, u32 height, then
    /// row-major `(f32 u, f32 v)` pairs.
    pub fn to_dfld_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.vectors.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for [u, v] in &self.vectors {
            out.extend_from_slice(&(*u as f32).to_le_bytes());
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_dfld_bytes(bytes: &[u8]) -> Result<Self> {
        let format = |m: &str| DeformError::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(format("missing DFLD header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let width = word(4) as usize;
        let height = word(8) as usize;
        let body = &bytes[12..];
        if body.len() != width * height * 8 {
            return Err(format(&format!(
                "expected {} payload bytes for {width}x{height}, found {}",
                width * height * 8,
                body.len()
            )));
        }
        let vectors = body
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
                ]
            })
            .collect();
        Self::new(width, height, vectors)
    }

    pub fn write_dfld(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_dfld_bytes()).map_err(|e| DeformError::Io(e.to_string()))
    }

    pub fn read_dfld(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DeformError::Io(e.to_string()))?;
        Self::from_dfld_bytes(&bytes)
    }
}
