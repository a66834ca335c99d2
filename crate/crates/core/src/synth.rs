//! Deterministic synthetic two-region instances with known ground truth.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`. Uniforms take
//! the top 53 bits of `next_u64`; normals use the cosine branch of
//! Box-Muller on two consecutive uniforms. Nothing else draws from the
//! stream, so a given seed reproduces the same instance anywhere the same
//! generator is available.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::fields::{BinaryMask, FeatureField, Tsdf};
use crate::tsdf;

/// Seeded uniform and normal variates.
pub struct SynthRng(ChaCha8Rng);

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Disk,
    RoundedRect,
    TwoBlobs,
    Annulus,
}

impl ShapeFamily {
    /// Expected `(components, holes)` of the generated mask.
    pub fn topology(&self) -> (usize, usize) {
        match self {
            ShapeFamily::Disk | ShapeFamily::RoundedRect => (1, 0),
            ShapeFamily::TwoBlobs => (2, 0),
            ShapeFamily::Annulus => (1, 1),
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Disk => "disk",
            ShapeFamily::RoundedRect => "rounded-rect",
            ShapeFamily::TwoBlobs => "two-blobs",
            ShapeFamily::Annulus => "annulus",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeFamily::Disk),
            "rounded-rect" | "rounded-rectangle" => Ok(ShapeFamily::RoundedRect),
            "two-blobs" | "two-component" => Ok(ShapeFamily::TwoBlobs),
            "annulus" => Ok(ShapeFamily::Annulus),
            other => Err(Error::Parameter(format!("unknown shape family `{other}`"))),
        }
    }
}

/// Parameters of one synthetic instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub shape: ShapeFamily,
    /// Per-channel Gaussian noise standard deviation.
    pub noise: f64,
    pub channels: usize,
    /// Feature centroid inside the object.
    pub inside: Vec<f64>,
    /// Feature centroid outside the object.
    pub outside: Vec<f64>,
    /// Peak-to-peak amplitude of a left-to-right ramp added to every channel.
    pub illumination: f64,
}

impl SynthSpec {
    /// Single-channel image with object intensity 1 on background 0.
    pub fn intensity(seed: u64, size: usize, shape: ShapeFamily, noise: f64) -> Self {
        Self {
            seed,
            height: size,
            width: size,
            shape,
            noise,
            channels: 1,
            inside: vec![1.0],
            outside: vec![0.0],
            illumination: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Dimension("synthetic grid must be nonempty".into()));
        }
        if self.channels == 0 {
            return Err(Error::Dimension("synthetic field needs at least one channel".into()));
        }
        if self.inside.len() != self.channels || self.outside.len() != self.channels {
            return Err(Error::Dimension(format!(
                "centroids have {}/{} entries for {} channels",
                self.inside.len(),
                self.outside.len(),
                self.channels
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter(format!("noise must be nonnegative, got {}", self.noise)));
        }
        if !self.illumination.is_finite() || self.inside.iter().chain(&self.outside).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("synthetic parameters must be finite".into()));
        }
        let sep: f64 = self.inside.iter().zip(&self.outside).map(|(a, b)| (a - b).powi(2)).sum();
        if sep == 0.0 {
            return Err(Error::Parameter("inside and outside centroids coincide".into()));
        }
        Ok(())
    }
}

/// A generated instance and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthInstance {
    pub features: FeatureField,
    pub mask: BinaryMask,
    pub tsdf: Tsdf,
}

fn shape_mask(spec: &SynthSpec, rng: &mut SynthRng) -> BinaryMask {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let m = h.min(w);
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    let inside: Box<dyn Fn(f64, f64) -> bool> = match spec.shape {
        ShapeFamily::Disk => {
            let radius = m * rng.range(0.22, 0.30);
            let oy = cy + m * rng.range(-0.08, 0.08);
            let ox = cx + m * rng.range(-0.08, 0.08);
            Box::new(move |y, x| (y - oy).powi(2) + (x - ox).powi(2) <= radius * radius)
        }
        ShapeFamily::RoundedRect => {
            let hy = m * rng.range(0.18, 0.30);
            let hx = m * rng.range(0.18, 0.30);
            let round = 0.3 * hx.min(hy);
            let oy = cy + m * rng.range(-0.06, 0.06);
            let ox = cx + m * rng.range(-0.06, 0.06);
            Box::new(move |y, x| {
                let dy = ((y - oy).abs() - (hy - round)).max(0.0);
                let dx = ((x - ox).abs() - (hx - round)).max(0.0);
                (y - oy).abs() <= hy && (x - ox).abs() <= hx && dy * dy + dx * dx <= round * round
            })
        }
        ShapeFamily::TwoBlobs => {
            let r1 = m * rng.range(0.12, 0.16);
            let r2 = m * rng.range(0.12, 0.16);
            let y1 = cy + m * rng.range(-0.1, 0.1);
            let y2 = cy + m * rng.range(-0.1, 0.1);
            let (x1, x2) = (cx - 0.22 * m, cx + 0.22 * m);
            Box::new(move |y, x| {
                (y - y1).powi(2) + (x - x1).powi(2) <= r1 * r1 || (y - y2).powi(2) + (x - x2).powi(2) <= r2 * r2
            })
        }
        ShapeFamily::Annulus => {
            let outer = m * rng.range(0.26, 0.32);
            let inner = outer * rng.range(0.45, 0.55);
            let oy = cy + m * rng.range(-0.06, 0.06);
            let ox = cx + m * rng.range(-0.06, 0.06);
            Box::new(move |y, x| {
                let d2 = (y - oy).powi(2) + (x - ox).powi(2);
                d2 <= outer * outer && d2 > inner * inner
            })
        }
    };
    BinaryMask::from_fn(spec.height, spec.width, |r, c| inside(r as f64, c as f64)).expect("validated dims")
}

/// Draws the feature field, ground-truth mask and ground-truth TSDF.
pub fn generate(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let mut rng = SynthRng::new(spec.seed);
    let mask = shape_mask(spec, &mut rng);
    if mask.is_empty() {
        return Err(Error::Generation(format!("{} on a {}x{} grid produced an empty mask", spec.shape, spec.height, spec.width)));
    }
    let (h, w) = (spec.height, spec.width);
    let denom = if w > 1 { (w - 1) as f64 } else { 1.0 };
    let mut data = Vec::with_capacity(spec.channels * h * w);
    for k in 0..spec.channels {
        for r in 0..h {
            for c in 0..w {
                let base = if mask.get(r, c) { spec.inside[k] } else { spec.outside[k] };
                let ramp = spec.illumination * (c as f64 / denom - 0.5);
                let noise = if spec.noise > 0.0 { spec.noise * rng.normal() } else { 0.0 };
                data.push(base + ramp + noise);
            }
        }
    }
    let features = FeatureField::from_vec(spec.channels, h, w, data)?;
    let tsdf = tsdf::mask_to_tsdf(&mask, None)?;
    Ok(SynthInstance { features, mask, tsdf })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Bounding box of the mask, padded by `amount` pixels.
    Box,
    /// Grow the mask by `amount` pixels.
    Dilate,
    /// Shrink the mask by `amount` pixels.
    Erode,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(InitMode::Box),
            "dilate" => Ok(InitMode::Dilate),
            "erode" => Ok(InitMode::Erode),
            other => Err(Error::Parameter(format!("unknown init mode `{other}`"))),
        }
    }
}

/// Coarse mask derived from ground truth.
///
/// Dilation keeps pixels whose signed distance exceeds `-amount`, erosion
/// those above `amount`; both are exact for `amount = 0`.
pub fn coarse_mask(gt: &BinaryMask, mode: InitMode, amount: f64) -> Result<BinaryMask> {
    if gt.is_empty() {
        return Err(Error::Generation("coarse initialization needs a nonempty mask".into()));
    }
    if !(amount >= 0.0 && amount.is_finite()) {
        return Err(Error::Parameter(format!("amount must be nonnegative, got {amount}")));
    }
    let (h, w) = gt.shape();
    match mode {
        InitMode::Box => {
            let (r0, c0, r1, c1) = gt.bounding_box().expect("nonempty");
            let pad = amount.floor() as usize;
            let (r0, c0) = (r0.saturating_sub(pad), c0.saturating_sub(pad));
            let (r1, c1) = ((r1 + pad).min(h - 1), (c1 + pad).min(w - 1));
            BinaryMask::from_fn(h, w, |r, c| (r0..=r1).contains(&r) && (c0..=c1).contains(&c))
        }
        InitMode::Dilate | InitMode::Erode => {
            let sd = tsdf::signed_distance(gt);
            let cut = if mode == InitMode::Dilate { -amount } else { amount };
            BinaryMask::from_vec(h, w, sd.data().iter().map(|&d| (d > cut) as u8).collect())
        }
    }
}

/// TSDF (default truncation) of [`coarse_mask`].
pub fn coarse_init(gt: &BinaryMask, mode: InitMode, amount: f64) -> Result<Tsdf> {
    tsdf::mask_to_tsdf(&coarse_mask(gt, mode, amount)?, None)
}
