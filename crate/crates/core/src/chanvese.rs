//! Region-based level-set energy and its alternating minimization.
//!
//! For a feature field `F` with `C` channels and a level set `phi`
//! (positive inside), the energy is
//!
//! ```text
//! E = l1 * sum |F - c1|^2 H(phi) + l2 * sum |F - c2|^2 (1 - H(phi)) + mu * sum delta(phi) |grad phi|
//! ```
//!
//! with sums over pixels (unit area), Sobel gradients and the soft step
//! functions of [`crate::tsdf`]. `1 - H(phi)` is evaluated as `H(-phi)`.
//!
//! Each solver step first recomputes the closed-form region means from the
//! current `phi`, then takes one explicit Euler step along
//! `delta(phi) * (mu * kappa - l1 |F - c1|^2 + l2 |F - c2|^2)`.
//! `phi` is never re-truncated during evolution.

use crate::diffops::{self, CurvatureParts, DEFAULT_ETA};
use crate::error::{dim_err, Error, Result};
use crate::exec::Exec;
use crate::fields::{BinaryMask, FeatureField, ScalarField, Tsdf};
use crate::tsdf::{self, SoftParams};

/// Guard added to the soft region areas before dividing.
pub const DEFAULT_ETA_DIV: f64 = 1e-8;

/// Per-instance energy weights and per-step optimization schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceHypers {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub eps: Vec<f64>,
    pub dt: Vec<f64>,
}

impl InstanceHypers {
    pub fn new(lambda1: f64, lambda2: f64, mu: f64, eps: Vec<f64>, dt: Vec<f64>) -> Result<Self> {
        let h = Self { lambda1, lambda2, mu, eps, dt };
        h.validate()?;
        Ok(h)
    }

    /// Same `eps` and `dt` at every one of `steps` iterations.
    pub fn constant(steps: usize, lambda1: f64, lambda2: f64, mu: f64, eps: f64, dt: f64) -> Result<Self> {
        Self::new(lambda1, lambda2, mu, vec![eps; steps], vec![dt; steps])
    }

    pub fn steps(&self) -> usize {
        self.eps.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Err(Error::Parameter(format!("{name} = {v} is out of range")));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, v);
            }
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu", self.mu);
        }
        if self.eps.len() != self.dt.len() {
            return Err(Error::Parameter(format!(
                "eps schedule has {} entries but dt schedule has {}",
                self.eps.len(),
                self.dt.len()
            )));
        }
        for &e in &self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad("eps", e);
            }
        }
        for &t in &self.dt {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("dt", t);
            }
        }
        Ok(())
    }

    /// Values a sigmoid-times-two head could not have produced.
    pub fn outside_head_range(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut check = |name: String, v: f64| {
            if !(v > 0.0 && v < 2.0) {
                out.push((name, v));
            }
        };
        check("lambda1".into(), self.lambda1);
        check("lambda2".into(), self.lambda2);
        check("mu".into(), self.mu);
        for (i, &e) in self.eps.iter().enumerate() {
            check(format!("eps[{i}]"), e);
        }
        for (i, &t) in self.dt.iter().enumerate() {
            check(format!("dt[{i}]"), t);
        }
        out
    }

    fn warn_outside_head_range(&self) {
        for (name, v) in self.outside_head_range() {
            log::warn!("hyperparameter {name} = {v} lies outside (0, 2)");
        }
    }
}

/// Inside and outside means, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionConstants {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Curvature regularizer.
    pub eta: f64,
    /// Area guard in the region means.
    pub eta_div: f64,
    /// Treat the region means as constants in the reverse pass.
    pub detach_constants: bool,
    /// Worker threads for pixelwise maps; 0 or 1 runs serially.
    pub threads: usize,
    /// Relaxation used for the single recorded energy of a zero-step run.
    pub fallback_eps: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA, eta_div: DEFAULT_ETA_DIV, detach_constants: false, threads: 0, fallback_eps: 1.0 }
    }
}

/// Output of an `N`-step evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionResult {
    /// Raw final level set; may leave `[-1, 1]`.
    pub phi_final: ScalarField,
    /// Energy before the first step and after each step (`N + 1` values).
    pub energies: Vec<f64>,
    /// Region means used by each step (`N` values).
    pub constants: Vec<RegionConstants>,
}

impl EvolutionResult {
    pub fn mask(&self) -> BinaryMask {
        tsdf::mask_from_field(&self.phi_final)
    }

    /// The final level set clamped back into `[-1, 1]`.
    pub fn normalized(&self, tau: f64) -> Result<Tsdf> {
        Tsdf::new(self.phi_final.map(|v| v.clamp(-1.0, 1.0))?, tau)
    }
}

fn check_shapes(f: &FeatureField, phi: &ScalarField) -> Result<()> {
    if f.shape() != phi.shape() {
        return dim_err(format!("feature field is {:?} but phi is {:?}", f.shape(), phi.shape()));
    }
    Ok(())
}

fn check_constants(f: &FeatureField, c: &RegionConstants) -> Result<()> {
    if c.c1.len() != f.channels() || c.c2.len() != f.channels() {
        return dim_err(format!(
            "region constants have {}/{} entries for {} channels",
            c.c1.len(),
            c.c2.len(),
            f.channels()
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Slice-level kernels shared with the reverse pass.

pub(crate) struct Weights {
    pub inside: Vec<f64>,
    pub outside: Vec<f64>,
}

pub(crate) fn soft_weights(phi: &[f64], eps: f64) -> Weights {
    Weights {
        inside: phi.iter().map(|&z| tsdf::heaviside(z, eps)).collect(),
        outside: phi.iter().map(|&z| tsdf::heaviside(-z, eps)).collect(),
    }
}

/// Region means plus the guarded areas used as denominators.
pub(crate) fn constants_from_weights(f: &FeatureField, w: &Weights, eta_div: f64) -> (RegionConstants, f64, f64) {
    let area_in = w.inside.iter().sum::<f64>() + eta_div;
    let area_out = w.outside.iter().sum::<f64>() + eta_div;
    let mut c1 = Vec::with_capacity(f.channels());
    let mut c2 = Vec::with_capacity(f.channels());
    for k in 0..f.channels() {
        let ch = f.channel(k);
        let s1: f64 = ch.iter().zip(&w.inside).map(|(a, b)| a * b).sum();
        let s2: f64 = ch.iter().zip(&w.outside).map(|(a, b)| a * b).sum();
        c1.push(s1 / area_in);
        c2.push(s2 / area_out);
    }
    (RegionConstants { c1, c2 }, area_in, area_out)
}

/// Squared feature residuals `|F - c|^2` at pixel `i`.
#[inline]
pub(crate) fn residual(f: &FeatureField, c: &[f64], i: usize, n: usize) -> f64 {
    let data = f.data();
    c.iter().enumerate().map(|(k, ck)| {
        let d = data[k * n + i] - ck;
        d * d
    }).sum()
}

fn energy_raw(
    f: &FeatureField,
    phi: &[f64],
    c: &RegionConstants,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    eps: f64,
) -> f64 {
    let (h, w) = f.shape();
    let n = h * w;
    let exec = Exec::serial();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    diffops::sobel_x(phi, h, w, &mut gx, &exec);
    diffops::sobel_y(phi, h, w, &mut gy, &exec);
    let mut total = 0.0;
    for i in 0..n {
        let z = phi[i];
        let data = lambda1 * residual(f, &c.c1, i, n) * tsdf::heaviside(z, eps)
            + lambda2 * residual(f, &c.c2, i, n) * tsdf::heaviside(-z, eps);
        let length = mu * tsdf::dirac(z, eps) * (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
        total += data + length;
    }
    total
}

/// Everything one step computes that the reverse pass needs.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct StepRecord {
    pub phi_prev: Vec<f64>,
    pub eps: f64,
    pub dt: f64,
    pub constants: RegionConstants,
    pub area_in: f64,
    pub area_out: f64,
    pub curvature: CurvatureParts,
    pub direction: Vec<f64>,
}

fn direction_raw(
    f: &FeatureField,
    phi: &[f64],
    c: &RegionConstants,
    kappa: &[f64],
    h: &InstanceHypers,
    eps: f64,
    exec: &Exec,
) -> Vec<f64> {
    let (_, w) = f.shape();
    let n = phi.len();
    let mut v = vec![0.0; n];
    exec.rows(&mut v, w, |r, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let i = r * w + j;
            let bracket = h.mu * kappa[i] - h.lambda1 * residual(f, &c.c1, i, n) + h.lambda2 * residual(f, &c.c2, i, n);
            *o = tsdf::dirac(phi[i], eps) * bracket;
        }
    });
    v
}

/// One alternating iteration: region means from `phi`, then an Euler step.
pub(crate) fn step_forward(
    f: &FeatureField,
    phi: Vec<f64>,
    h: &InstanceHypers,
    n: usize,
    opts: &EvolveOptions,
    exec: &Exec,
) -> (Vec<f64>, StepRecord) {
    let (height, width) = f.shape();
    let eps = h.eps[n];
    let dt = h.dt[n];
    let weights = soft_weights(&phi, eps);
    let (constants, area_in, area_out) = constants_from_weights(f, &weights, opts.eta_div);
    let curvature = diffops::curvature_parts(&phi, height, width, opts.eta, exec);
    let direction = direction_raw(f, &phi, &constants, &curvature.kappa, h, eps, exec);
    let mut next = vec![0.0; phi.len()];
    exec.rows(&mut next, width, |r, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let i = r * width + j;
            *o = phi[i] + dt * direction[i];
        }
    });
    let record = StepRecord { phi_prev: phi, eps, dt, constants, area_in, area_out, curvature, direction };
    (next, record)
}

fn energy_at(f: &FeatureField, phi: &[f64], h: &InstanceHypers, eps: f64, eta_div: f64) -> f64 {
    let (c, _, _) = constants_from_weights(f, &soft_weights(phi, eps), eta_div);
    energy_raw(f, phi, &c, h.lambda1, h.lambda2, h.mu, eps)
}

/// Runs the full solver on a raw level set, optionally keeping step records.
pub(crate) fn run(
    f: &FeatureField,
    phi0: &ScalarField,
    h: &InstanceHypers,
    opts: &EvolveOptions,
    keep_records: bool,
) -> Result<(EvolutionResult, Vec<StepRecord>)> {
    check_shapes(f, phi0)?;
    h.validate()?;
    h.warn_outside_head_range();
    let exec = Exec::with_threads(opts.threads)?;
    let (height, width) = f.shape();
    let steps = h.steps();

    let first_eps = h.eps.first().copied().unwrap_or(opts.fallback_eps);
    let e0 = energy_at(f, phi0.data(), h, first_eps, opts.eta_div);
    if !e0.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    let mut energies = vec![e0];
    let mut constants = Vec::with_capacity(steps);
    let mut records = Vec::new();
    let mut phi = phi0.data().to_vec();
    for n in 0..steps {
        let (next, record) = step_forward(f, phi, h, n, opts, &exec);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n + 1 });
        }
        let e = energy_at(f, &next, h, h.eps[n], opts.eta_div);
        if !e.is_finite() {
            return Err(Error::Divergence { step: n + 1 });
        }
        energies.push(e);
        constants.push(record.constants.clone());
        if keep_records {
            records.push(record);
        }
        phi = next;
    }
    let phi_final = ScalarField::from_vec(height, width, phi)?;
    Ok((EvolutionResult { phi_final, energies, constants }, records))
}

// ---------------------------------------------------------------------------
// Public field-level API.

/// Closed-form soft-weighted region means.
pub fn region_constants(f: &FeatureField, phi: &ScalarField, p: SoftParams) -> Result<RegionConstants> {
    check_shapes(f, phi)?;
    Ok(constants_from_weights(f, &soft_weights(phi.data(), p.epsilon()), DEFAULT_ETA_DIV).0)
}

/// Energy of `phi` for fixed region constants; `eps` from `p`.
pub fn energy(
    f: &FeatureField,
    phi: &ScalarField,
    c: &RegionConstants,
    h: &InstanceHypers,
    p: SoftParams,
) -> Result<f64> {
    check_shapes(f, phi)?;
    check_constants(f, c)?;
    Ok(energy_raw(f, phi.data(), c, h.lambda1, h.lambda2, h.mu, p.epsilon()))
}

/// Pixelwise descent direction of step `step` (zero-based), using that
/// step's `eps` and the default curvature regularizer.
pub fn descent_direction(
    f: &FeatureField,
    phi: &ScalarField,
    c: &RegionConstants,
    h: &InstanceHypers,
    step: usize,
) -> Result<ScalarField> {
    check_shapes(f, phi)?;
    check_constants(f, c)?;
    let eps = *h
        .eps
        .get(step)
        .ok_or_else(|| Error::Parameter(format!("step {step} outside a {}-step schedule", h.steps())))?;
    let (height, width) = phi.shape();
    let exec = Exec::serial();
    let parts = diffops::curvature_parts(phi.data(), height, width, DEFAULT_ETA, &exec);
    let v = direction_raw(f, phi.data(), c, &parts.kappa, h, eps, &exec);
    ScalarField::from_vec(height, width, v)
}

/// Evolves an arbitrary starting level set.
pub fn evolve_field(
    f: &FeatureField,
    phi0: &ScalarField,
    h: &InstanceHypers,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    run(f, phi0, h, opts, false).map(|(r, _)| r)
}

/// Alternating minimization for `h.steps()` iterations from a TSDF.
pub fn evolve(f: &FeatureField, phi0: &Tsdf, h: &InstanceHypers, opts: &EvolveOptions) -> Result<EvolutionResult> {
    evolve_field(f, phi0.field(), h, opts)
}

/// Single-channel intensity segmentation.
pub fn classic_chanvese(
    image: &ScalarField,
    phi0: &Tsdf,
    h: &InstanceHypers,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    evolve(&FeatureField::from_scalar(image), phi0, h, opts)
}
