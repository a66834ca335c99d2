//! Raster grid value types.
//!
//! All grids are row-major. Multi-channel grids store each channel as a
//! contiguous row-major plane, channels in order. Values are `f64`.
//!
//! Resizing follows the align-corners-false convention: output pixel `i`
//! samples source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the
//! source extent.

use crate::error::{dim_err, Error, Result};

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return dim_err(format!("grid dimensions must be positive, got {height}x{width}"));
    }
    Ok(())
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} value at index {i} is {}", data[i]))),
        None => Ok(()),
    }
}

/// A single-channel real-valued grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, fill: f64) -> Result<Self> {
        check_dims(height, width)?;
        if !fill.is_finite() {
            return Err(Error::NonFinite(format!("fill value {fill}")));
        }
        Ok(Self { height, width, data: vec![fill; height * width] })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return dim_err(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            ));
        }
        check_finite(&data, "scalar field")?;
        Ok(Self { height, width, data })
    }

    /// Builds a field by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_vec(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// A `C`-channel real-valued grid, stored channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureField {
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return dim_err("feature field needs at least one channel");
        }
        check_dims(height, width)?;
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Dimension("feature field size overflows".into()))?;
        if data.len() != expected {
            return dim_err(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            ));
        }
        check_finite(&data, "feature field")?;
        Ok(Self { channels, height, width, data })
    }

    pub fn from_channels(planes: &[ScalarField]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Dimension("feature field needs at least one channel".into()))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.shape() != (h, w) {
                return dim_err("channel planes have mismatched shapes");
            }
            data.extend_from_slice(p.data());
        }
        Self::from_vec(planes.len(), h, w, data)
    }

    /// Treats a single-channel image as a `C = 1` feature field.
    pub fn from_scalar(f: &ScalarField) -> Self {
        Self { channels: 1, height: f.height, width: f.width, data: f.data.clone() }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_field(&self, k: usize) -> ScalarField {
        ScalarField { height: self.height, width: self.width, data: self.channel(k).to_vec() }
    }

    /// Per-pixel mean over channels.
    pub fn mean_projection(&self) -> ScalarField {
        let n = self.height * self.width;
        let mut out = vec![0.0; n];
        for k in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.channel(k)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        ScalarField { height: self.height, width: self.width, data: out }
    }
}

/// A binary raster mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self { height, width, data: vec![0; height * width] })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return dim_err(format!(
                "mask length {} does not match {height}x{width}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Parameter(format!("mask value {} at index {i} is not 0 or 1", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Inclusive bounding box `(row0, col0, row1, col1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    bb = Some(match bb {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        bb
    }
}

/// A truncated signed distance function normalized to `[-1, 1]`,
/// positive inside the object.
#[derive(Clone, Debug, PartialEq)]
pub struct Tsdf {
    field: ScalarField,
    tau: f64,
}

impl Tsdf {
    /// Wraps a field whose values already lie in `[-1, 1]`.
    pub fn new(field: ScalarField, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("truncation radius must be positive, got {tau}")));
        }
        if let Some(v) = field.data().iter().find(|v| v.abs() > 1.0) {
            return Err(Error::Parameter(format!("TSDF value {v} outside [-1, 1]")));
        }
        Ok(Self { field, tau })
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn shape(&self) -> (usize, usize) {
        self.field.shape()
    }
}

/// Bilinear resize with the align-corners-false pixel-center convention.
pub fn bilinear_resize(f: &ScalarField, out_h: usize, out_w: usize) -> Result<ScalarField> {
    check_dims(out_h, out_w)?;
    let (in_h, in_w) = f.shape();
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(in_h, out_h);
    let cols = axis(in_w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, tr) in &rows {
        for &(c0, c1, tc) in &cols {
            let top = lerp(f.get(r0, c0), f.get(r0, c1), tc);
            let bot = lerp(f.get(r1, c0), f.get(r1, c1), tc);
            out.push(lerp(top, bot, tr));
        }
    }
    ScalarField::from_vec(out_h, out_w, out)
}

// Exact at both ends and for equal endpoints, so constants stay bit-identical.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        a
    } else {
        (a + t * (b - a)).clamp(a.min(b), a.max(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_fill() {
        let f = ScalarField::new(2, 2, 0.0).unwrap();
        assert_eq!(f.data(), &[0.0; 4]);
        let g = ScalarField::new(1, 3, -1.0).unwrap();
        assert_eq!(g.data(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(ScalarField::new(0, 5, 0.0), Err(Error::Dimension(_))));
        assert!(matches!(BinaryMask::new(3, 0), Err(Error::Dimension(_))));
        assert!(matches!(FeatureField::from_vec(0, 1, 1, vec![]), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ScalarField::from_vec(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ScalarField::new(1, 1, f64::INFINITY).is_err());
    }

    #[test]
    fn tsdf_rejects_out_of_range() {
        let f = ScalarField::from_vec(1, 2, vec![0.5, 1.0 + 1e-12]).unwrap();
        assert!(Tsdf::new(f, 1.0).is_err());
        let ok = ScalarField::from_vec(1, 2, vec![-1.0, 1.0]).unwrap();
        assert!(Tsdf::new(ok, 1.0).is_ok());
    }

    #[test]
    fn resize_two_by_one() {
        // Source centers at 0.5 and 1.5 in a 2-pixel column; output centers at
        // 0.25, 0.75, 1.25, 1.75 map to source coords -0.25, 0.25, 0.75, 1.25.
        let f = ScalarField::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let g = bilinear_resize(&f, 4, 1).unwrap();
        assert_eq!(g.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn resize_upsamples_28_to_112() {
        let f = ScalarField::from_fn(28, 28, |r, c| (r * 28 + c) as f64 / 784.0).unwrap();
        let g = bilinear_resize(&f, 112, 112).unwrap();
        assert_eq!(g.shape(), (112, 112));
    }

    #[test]
    fn resize_constant_is_exact() {
        let f = ScalarField::new(5, 7, 0.1234567).unwrap();
        let g = bilinear_resize(&f, 13, 3).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.1234567));
    }

    #[test]
    fn mean_projection_averages_channels() {
        let f = FeatureField::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(f.mean_projection().data(), &[2.0, 4.0]);
    }
}
