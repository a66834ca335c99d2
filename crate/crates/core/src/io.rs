//! File formats and configuration parsing.
//!
//! # Field files
//!
//! A field file stores a [`FeatureField`] as raw little-endian doubles
//! behind a fixed 20-byte header:
//!
//! | offset | size | content                           |
//! |--------|------|-----------------------------------|
//! | 0      | 4    | magic `LSF1`                      |
//! | 4      | 2    | version, `u16` LE (currently 1)   |
//! | 6      | 2    | dtype code, `u16` LE (1 = f64 LE) |
//! | 8      | 4    | channels, `u32` LE                |
//! | 12     | 4    | height, `u32` LE                  |
//! | 16     | 4    | width, `u32` LE                   |
//! | 20     | 8CHW | payload, channel-major, row-major |
//!
//! # Key-value configuration
//!
//! One `key = value` pair per line. Blank lines and lines starting with `#`
//! are ignored; a repeated key overrides the earlier one. Lists are
//! comma-separated.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::chanvese::InstanceHypers;
use crate::error::{Error, Result};
use crate::fields::{BinaryMask, FeatureField, ScalarField};
use crate::metrics::LossWeights;
use crate::synth::{ShapeFamily, SynthSpec};

pub const FIELD_MAGIC: &[u8; 4] = b"LSF1";
pub const FIELD_VERSION: u16 = 1;
pub const DTYPE_F64_LE: u16 = 1;
pub const FIELD_HEADER_LEN: usize = 20;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub fn encode_field_file(f: &FeatureField) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * f.data().len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64_LE.to_le_bytes());
    for d in [f.channels(), f.height(), f.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field_file(bytes: &[u8]) -> Result<FeatureField> {
    if bytes.len() < FIELD_HEADER_LEN {
        return Err(Error::Format(format!("field file too short: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != FIELD_MAGIC {
        return Err(Error::Format("bad field file magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let version = u16_at(4);
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported field file version {version}")));
    }
    let dtype = u16_at(6);
    if dtype != DTYPE_F64_LE {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let (c, h, w) = (u32_at(8), u32_at(12), u32_at(16));
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Format(format!("zero dimension in field file: {c}x{h}x{w}")));
    }
    let payload = &bytes[FIELD_HEADER_LEN..];
    let expected = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format("field file dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!("payload is {} bytes, expected {expected}", payload.len())));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    FeatureField::from_vec(c, h, w, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_field_file(path: &Path) -> Result<FeatureField> {
    decode_field_file(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_field_file(path: &Path, f: &FeatureField) -> Result<()> {
    fs::write(path, encode_field_file(f)).map_err(io_err(path))
}

pub fn write_scalar_field_file(path: &Path, f: &ScalarField) -> Result<()> {
    write_field_file(path, &FeatureField::from_scalar(f))
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.to_path_buf(), source }
}

/// Grayscale intensities in `[0, 1]` from PNG or PNM bytes.
pub fn decode_grayscale(bytes: &[u8]) -> Result<ScalarField> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Format(format!("cannot decode image: {e}")))?;
    luma_to_field(img)
}

fn luma_to_field(img: image::DynamicImage) -> Result<ScalarField> {
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let data = luma.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    ScalarField::from_vec(h as usize, w as usize, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_grayscale(path: &Path) -> Result<ScalarField> {
    let img = image::ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(image_err(path))?;
    luma_to_field(img)
}

/// A mask from image bytes: pixels at or above mid-gray are set.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    field_to_mask(&decode_grayscale(bytes)?)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    field_to_mask(&read_grayscale(path)?)
}

fn field_to_mask(f: &ScalarField) -> Result<BinaryMask> {
    BinaryMask::from_vec(f.height(), f.width(), f.data().iter().map(|&v| (v >= 0.5) as u8).collect())
}

/// 8-bit grayscale PNG bytes with 0/255 values.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    encode_gray_png(mask.width(), mask.height(), pixels)
}

fn encode_gray_png(width: usize, height: usize, pixels: Vec<u8>) -> Result<Vec<u8>> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels).expect("buffer sized to dims");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    fs::write(path, encode_mask_png(mask)?).map_err(io_err(path))
}

/// Writes `f` clamped to `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, f: &ScalarField) -> Result<()> {
    let pixels = f.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    fs::write(path, encode_gray_png(f.width(), f.height(), pixels)?).map_err(io_err(path))
}

/// Per-step energies as `step,energy` CSV.
pub fn energies_csv(energies: &[f64]) -> String {
    let mut s = String::from("step,energy\n");
    for (i, e) in energies.iter().enumerate() {
        writeln!(s, "{i},{e}").expect("writing to a String");
    }
    s
}

/// Splits key-value text into ordered pairs.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", lineno + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Format(format!("line {}: empty key", lineno + 1)));
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Format(format!("{key}: cannot parse `{v}`")))
}

fn parse_real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(Error::Format(format!("{key}: value must be finite")));
    }
    Ok(x)
}

/// Comma-separated finite reals.
pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_real(key, s.trim())).collect()
}

/// Inclusive box `row0,col0,row1,col1`.
pub fn parse_box(v: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|s| parse_num::<usize>("box", s.trim()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [r0, c0, r1, c1] if r0 <= r1 && c0 <= c1 => Ok((r0, c0, r1, c1)),
        [_, _, _, _] => Err(Error::Format(format!("box `{v}` has inverted corners"))),
        _ => Err(Error::Format(format!("box `{v}` needs four comma-separated integers"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Grayscale intensity as a single channel.
    Classic,
    /// Multi-channel feature field.
    Feature,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Mode::Classic),
            "feature" => Ok(Mode::Feature),
            other => Err(Error::Format(format!("unknown mode `{other}`"))),
        }
    }
}

/// Settings of one segmentation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub steps: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    /// One value broadcast to every step, or exactly `steps` values.
    pub eps: Option<Vec<f64>>,
    pub dt: Option<Vec<f64>>,
    pub tau: Option<f64>,
    pub loss_weights: LossWeights,
    pub input: Option<PathBuf>,
    pub init_mask: Option<PathBuf>,
    pub init_box: Option<(usize, usize, usize, usize)>,
    pub out: PathBuf,
    pub seed: u64,
}

pub const DEFAULT_STEPS: usize = 3;
pub const DEFAULT_EPS: f64 = 1.0;
pub const DEFAULT_DT: f64 = 0.5;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Classic,
            steps: DEFAULT_STEPS,
            lambda1: 1.0,
            lambda2: 1.0,
            mu: 0.05,
            eps: None,
            dt: None,
            tau: None,
            loss_weights: LossWeights::CITYSCAPES,
            input: None,
            init_mask: None,
            init_box: None,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one setting; flags and config files share this path.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let path = |v: &str| -> Result<PathBuf> {
            if v.is_empty() {
                return Err(Error::Format(format!("{key}: path must be nonempty")));
            }
            Ok(PathBuf::from(v))
        };
        match key {
            "mode" => self.mode = v.parse()?,
            "steps" => self.steps = parse_num(key, v)?,
            "lambda1" => self.lambda1 = parse_real(key, v)?,
            "lambda2" => self.lambda2 = parse_real(key, v)?,
            "mu" => self.mu = parse_real(key, v)?,
            "eps" => self.eps = Some(parse_list(key, v)?),
            "dt" => self.dt = Some(parse_list(key, v)?),
            "tau" => self.tau = Some(parse_real(key, v)?),
            "w_initial" => self.loss_weights.w_initial = parse_real(key, v)?,
            "w_final" => self.loss_weights.w_final = parse_real(key, v)?,
            "input" => self.input = Some(path(v)?),
            "init_mask" => self.init_mask = Some(path(v)?),
            "init_box" => self.init_box = Some(parse_box(v)?),
            "out" => self.out = path(v)?,
            "seed" => self.seed = parse_num(key, v)?,
            other => return Err(Error::Format(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    fn schedule(&self, name: &str, values: &Option<Vec<f64>>, default: f64) -> Result<Vec<f64>> {
        match values.as_deref() {
            None => Ok(vec![default; self.steps]),
            Some([v]) => Ok(vec![*v; self.steps]),
            Some(v) if v.len() == self.steps => Ok(v.to_vec()),
            Some(v) => Err(Error::Parameter(format!(
                "{name} schedule has {} entries for {} steps",
                v.len(),
                self.steps
            ))),
        }
    }

    pub fn hypers(&self) -> Result<InstanceHypers> {
        InstanceHypers::new(
            self.lambda1,
            self.lambda2,
            self.mu,
            self.schedule("eps", &self.eps, DEFAULT_EPS)?,
            self.schedule("dt", &self.dt, DEFAULT_DT)?,
        )
    }
}

/// Parses a synthetic-instance description.
///
/// Keys: `seed`, `size` (sets both sides), `height`, `width`, `shape`,
/// `noise`, `channels`, `inside`, `outside`, `illumination`.
pub fn parse_synth_spec(text: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::intensity(0, 128, ShapeFamily::Disk, 0.1);
    for (k, v) in parse_key_values(text)? {
        match k.as_str() {
            "seed" => spec.seed = parse_num(&k, &v)?,
            "size" => {
                let s: usize = parse_num(&k, &v)?;
                spec.height = s;
                spec.width = s;
            }
            "height" => spec.height = parse_num(&k, &v)?,
            "width" => spec.width = parse_num(&k, &v)?,
            "shape" => spec.shape = v.parse().map_err(|e: Error| Error::Format(e.to_string()))?,
            "noise" => spec.noise = parse_real(&k, &v)?,
            "channels" => spec.channels = parse_num(&k, &v)?,
            "inside" => spec.inside = parse_list(&k, &v)?,
            "outside" => spec.outside = parse_list(&k, &v)?,
            "illumination" => spec.illumination = parse_real(&k, &v)?,
            other => return Err(Error::Format(format!("unknown synth key `{other}`"))),
        }
    }
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(spec)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn synth_spec_to_text(spec: &SynthSpec) -> String {
    format!(
        "seed = {}\nheight = {}\nwidth = {}\nshape = {}\nnoise = {}\nchannels = {}\ninside = {}\noutside = {}\nillumination = {}\n",
        spec.seed,
        spec.height,
        spec.width,
        spec.shape,
        spec.noise,
        spec.channels,
        join(&spec.inside),
        join(&spec.outside),
        spec.illumination
    )
}
