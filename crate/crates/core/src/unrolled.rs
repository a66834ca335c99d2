//! Reverse-mode differentiation of the unrolled solver.
//!
//! The forward pass records every step; [`backward`] walks the steps in
//! reverse and returns the exact adjoint of the recorded computation with
//! respect to the initial level set, the feature field and every
//! hyperparameter. The region means are differentiated as functions of
//! `phi` (numerator and denominator) unless the run was configured with
//! `detach_constants`.

use crate::chanvese::{self, EvolutionResult, EvolveOptions, InstanceHypers, StepRecord};
use crate::diffops;
use crate::error::{Error, Result};
use crate::fields::{FeatureField, ScalarField, Tsdf};
use crate::metrics::{PhiLoss, ProbeLoss};
use crate::synth::SynthRng;
use crate::tsdf;

/// Everything needed to replay or differentiate one evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionTape {
    features: FeatureField,
    phi0: ScalarField,
    hypers: InstanceHypers,
    options: EvolveOptions,
    steps: Vec<StepRecord>,
    phi_final: ScalarField,
}

impl EvolutionTape {
    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    /// `phi_0, ..., phi_N`.
    pub fn snapshots(&self) -> Vec<&[f64]> {
        let mut s: Vec<&[f64]> = self.steps.iter().map(|r| r.phi_prev.as_slice()).collect();
        s.push(self.phi_final.data());
        s
    }

    pub fn phi_final(&self) -> &ScalarField {
        &self.phi_final
    }

    pub fn hypers(&self) -> &InstanceHypers {
        &self.hypers
    }

    /// Re-runs the forward pass from the recorded inputs.
    pub fn replay(&self) -> Result<EvolutionResult> {
        chanvese::evolve_field(&self.features, &self.phi0, &self.hypers, &self.options)
    }
}

/// Forward pass that keeps the tape. The result is identical to
/// [`chanvese::evolve_field`].
pub fn evolve_recorded(
    f: &FeatureField,
    phi0: &ScalarField,
    h: &InstanceHypers,
    opts: &EvolveOptions,
) -> Result<(EvolutionResult, EvolutionTape)> {
    let (result, steps) = chanvese::run(f, phi0, h, opts, true)?;
    let tape = EvolutionTape {
        features: f.clone(),
        phi0: phi0.clone(),
        hypers: h.clone(),
        options: opts.clone(),
        steps,
        phi_final: result.phi_final.clone(),
    };
    Ok((result, tape))
}

/// Same as [`evolve_recorded`] starting from a TSDF.
pub fn evolve_recorded_tsdf(
    f: &FeatureField,
    phi0: &Tsdf,
    h: &InstanceHypers,
    opts: &EvolveOptions,
) -> Result<(EvolutionResult, EvolutionTape)> {
    evolve_recorded(f, phi0.field(), h, opts)
}

/// Gradients of a scalar loss of `phi_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_phi0: ScalarField,
    pub d_features: FeatureField,
    pub d_lambda1: f64,
    pub d_lambda2: f64,
    pub d_mu: f64,
    pub d_eps: Vec<f64>,
    pub d_dt: Vec<f64>,
}

/// Addresses one scalar input of the unrolled pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Phi0(usize),
    Feature(usize),
    Lambda1,
    Lambda2,
    Mu,
    Eps(usize),
    Dt(usize),
}

impl Component {
    /// Every component of an instance, in a fixed order.
    pub fn all(channels: usize, height: usize, width: usize, steps: usize) -> Vec<Component> {
        let n = height * width;
        let mut v: Vec<Component> = (0..n).map(Component::Phi0).collect();
        v.extend((0..channels * n).map(Component::Feature));
        v.extend([Component::Lambda1, Component::Lambda2, Component::Mu]);
        v.extend((0..steps).map(Component::Eps));
        v.extend((0..steps).map(Component::Dt));
        v
    }
}

impl GradientBundle {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Phi0(i) => self.d_phi0.data()[i],
            Component::Feature(i) => self.d_features.data()[i],
            Component::Lambda1 => self.d_lambda1,
            Component::Lambda2 => self.d_lambda2,
            Component::Mu => self.d_mu,
            Component::Eps(n) => self.d_eps[n],
            Component::Dt(n) => self.d_dt[n],
        }
    }
}

/// Exact vector-Jacobian product of the recorded evolution.
pub fn backward(tape: &EvolutionTape, d_phi_n: &ScalarField) -> Result<GradientBundle> {
    if d_phi_n.shape() != tape.phi_final.shape() {
        return Err(Error::Contract(format!(
            "cotangent is {:?} but the tape holds a {:?} level set",
            d_phi_n.shape(),
            tape.phi_final.shape()
        )));
    }
    let f = &tape.features;
    let h = &tape.hypers;
    let (height, width) = f.shape();
    let n = height * width;
    let channels = f.channels();
    let fd = f.data();
    let steps = tape.steps.len();

    let mut adj = d_phi_n.data().to_vec();
    let mut d_features = vec![0.0; channels * n];
    let (mut d_l1, mut d_l2, mut d_mu) = (0.0, 0.0, 0.0);
    let mut d_eps = vec![0.0; steps];
    let mut d_dt = vec![0.0; steps];

    for (s, rec) in tape.steps.iter().enumerate().rev() {
        let eps = rec.eps;
        let c1 = &rec.constants.c1;
        let c2 = &rec.constants.c2;
        let kappa = &rec.curvature.kappa;

        d_dt[s] = adj.iter().zip(&rec.direction).map(|(a, v)| a * v).sum();

        let mut phi_bar = adj.clone();
        let mut kappa_bar = vec![0.0; n];
        let mut c1_bar = vec![0.0; channels];
        let mut c2_bar = vec![0.0; channels];
        let mut eps_bar = 0.0;

        for i in 0..n {
            let v_bar = rec.dt * adj[i];
            if v_bar == 0.0 {
                continue;
            }
            let z = rec.phi_prev[i];
            let r1 = chanvese::residual(f, c1, i, n);
            let r2 = chanvese::residual(f, c2, i, n);
            let bracket = h.mu * kappa[i] - h.lambda1 * r1 + h.lambda2 * r2;
            let delta = tsdf::dirac(z, eps);
            let delta_bar = v_bar * bracket;
            let bracket_bar = v_bar * delta;

            phi_bar[i] += delta_bar * tsdf::dirac_dz(z, eps);
            eps_bar += delta_bar * tsdf::dirac_deps(z, eps);
            d_mu += bracket_bar * kappa[i];
            kappa_bar[i] = h.mu * bracket_bar;
            d_l1 -= bracket_bar * r1;
            d_l2 += bracket_bar * r2;
            let r1_bar = -h.lambda1 * bracket_bar;
            let r2_bar = h.lambda2 * bracket_bar;
            for k in 0..channels {
                let d1 = fd[k * n + i] - c1[k];
                let d2 = fd[k * n + i] - c2[k];
                d_features[k * n + i] += 2.0 * (r1_bar * d1 + r2_bar * d2);
                c1_bar[k] -= 2.0 * r1_bar * d1;
                c2_bar[k] -= 2.0 * r2_bar * d2;
            }
        }

        diffops::curvature_adjoint(&rec.curvature, &kappa_bar, height, width, &mut phi_bar);

        if !tape.options.detach_constants {
            // c = S / A with S_k = sum F_k w, A = sum w + eta_div.
            let s1_bar: Vec<f64> = c1_bar.iter().map(|b| b / rec.area_in).collect();
            let s2_bar: Vec<f64> = c2_bar.iter().map(|b| b / rec.area_out).collect();
            let a1_bar = -c1_bar.iter().zip(c1).map(|(b, c)| b * c).sum::<f64>() / rec.area_in;
            let a2_bar = -c2_bar.iter().zip(c2).map(|(b, c)| b * c).sum::<f64>() / rec.area_out;
            for i in 0..n {
                let z = rec.phi_prev[i];
                let w_in = tsdf::heaviside(z, eps);
                let w_out = tsdf::heaviside(-z, eps);
                let mut w_in_bar = a1_bar;
                let mut w_out_bar = a2_bar;
                for k in 0..channels {
                    let v = fd[k * n + i];
                    w_in_bar += s1_bar[k] * v;
                    w_out_bar += s2_bar[k] * v;
                    d_features[k * n + i] += s1_bar[k] * w_in + s2_bar[k] * w_out;
                }
                let dh = tsdf::heaviside_dz(z, eps);
                phi_bar[i] += (w_in_bar - w_out_bar) * dh;
                eps_bar += w_in_bar * tsdf::heaviside_deps(z, eps) + w_out_bar * tsdf::heaviside_deps(-z, eps);
            }
        }

        d_eps[s] = eps_bar;
        adj = phi_bar;
    }

    let contract = |e: Error| Error::Contract(format!("non-finite gradient: {e}"));
    let bundle = GradientBundle {
        d_phi0: ScalarField::from_vec(height, width, adj).map_err(contract)?,
        d_features: FeatureField::from_vec(channels, height, width, d_features).map_err(contract)?,
        d_lambda1: d_l1,
        d_lambda2: d_l2,
        d_mu,
        d_eps,
        d_dt,
    };
    let scalars = [bundle.d_lambda1, bundle.d_lambda2, bundle.d_mu];
    if scalars.iter().chain(&bundle.d_eps).chain(&bundle.d_dt).any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite hyperparameter gradient".into()));
    }
    Ok(bundle)
}

/// Forward evolution followed by `loss`, with one component perturbed by `delta`.
fn perturbed_loss(
    f: &FeatureField,
    phi0: &ScalarField,
    h: &InstanceHypers,
    opts: &EvolveOptions,
    loss: &dyn PhiLoss,
    component: Component,
    delta: f64,
) -> Result<f64> {
    let mut f = f.clone();
    let mut phi0 = phi0.clone();
    let mut h = h.clone();
    match component {
        Component::Phi0(i) => {
            let mut d = phi0.into_vec();
            d[i] += delta;
            phi0 = ScalarField::from_vec(f.height(), f.width(), d)?;
        }
        Component::Feature(i) => {
            let (c, hh, ww) = (f.channels(), f.height(), f.width());
            let mut d = f.into_vec();
            d[i] += delta;
            f = FeatureField::from_vec(c, hh, ww, d)?;
        }
        Component::Lambda1 => h.lambda1 += delta,
        Component::Lambda2 => h.lambda2 += delta,
        Component::Mu => h.mu += delta,
        Component::Eps(n) => h.eps[n] += delta,
        Component::Dt(n) => h.dt[n] += delta,
    }
    let result = chanvese::evolve_field(&f, &phi0, &h, opts)?;
    loss.value(&result.phi_final)
}

/// Central difference `(L(x + step) - L(x - step)) / (2 step)` of the full
/// forward pipeline in one scalar input.
pub fn finite_difference_oracle(
    f: &FeatureField,
    phi0: &ScalarField,
    h: &InstanceHypers,
    opts: &EvolveOptions,
    loss: &dyn PhiLoss,
    component: Component,
    step: f64,
) -> Result<f64> {
    let plus = perturbed_loss(f, phi0, h, opts, loss, component, step)?;
    let minus = perturbed_loss(f, phi0, h, opts, loss, component, -step)?;
    Ok((plus - minus) / (2.0 * step))
}

/// One random differentiable instance.
#[derive(Clone, Debug)]
pub struct GradcheckInstance {
    pub features: FeatureField,
    pub phi0: ScalarField,
    pub hypers: InstanceHypers,
    pub loss: ProbeLoss,
}

impl GradcheckInstance {
    /// Two noisy feature clusters split by a random oblique line, `phi0` a
    /// noisy ramp across that line, hyperparameters uniform in `(0.1, 2)`.
    ///
    /// The ramp keeps `|grad phi|` well away from zero.
    pub fn random(seed: u64, size: usize, channels: usize, steps: usize) -> Result<Self> {
        let mut rng = SynthRng::new(seed);
        let theta = rng.range(0.0, 2.0 * std::f64::consts::PI);
        let (dx, dy) = (theta.cos(), theta.sin());
        let center = (size as f64 - 1.0) / 2.0;
        let half = (size as f64 / 2.0).max(1.0);
        let signed = |r: usize, c: usize| ((c as f64 - center) * dx + (r as f64 - center) * dy) / half;

        let mut phi = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                phi.push(0.8 * signed(r, c) + rng.range(-0.01, 0.01));
            }
        }
        let phi0 = ScalarField::from_vec(size, size, phi)?;

        let inside: Vec<f64> = (0..channels).map(|_| rng.range(0.0, 1.0)).collect();
        let outside: Vec<f64> = (0..channels).map(|_| rng.range(0.0, 1.0)).collect();
        let mut feats = Vec::with_capacity(channels * size * size);
        for k in 0..channels {
            for r in 0..size {
                for c in 0..size {
                    let base = if signed(r, c) >= 0.0 { inside[k] } else { outside[k] };
                    feats.push(base + 0.1 * rng.normal());
                }
            }
        }
        let features = FeatureField::from_vec(channels, size, size, feats)?;

        let mut draw = || rng.range(0.1, 2.0);
        let (l1, l2, mu) = (draw(), draw(), draw());
        let eps: Vec<f64> = (0..steps).map(|_| draw()).collect();
        let dt: Vec<f64> = (0..steps).map(|_| draw()).collect();
        let hypers = InstanceHypers::new(l1, l2, mu, eps, dt)?;
        let weights = ScalarField::from_fn(size, size, |_, _| rng.range(-1.0, 1.0))?;
        Ok(Self { features, phi0, hypers, loss: ProbeLoss { weights } })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub size: usize,
    pub channels: usize,
    pub steps: usize,
    pub fd_step: f64,
    /// Replace the loss gradient by zero.
    pub zero_cotangent: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, instances: 20, size: 16, channels: 4, steps: 3, fd_step: 1e-5, zero_cotangent: false }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(usize, Component, f64, f64)>,
    pub components_checked: usize,
}

/// `|a - b| / max(|b|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-6)
}

/// Compares [`backward`] against [`finite_difference_oracle`] on every
/// component of `instances` random instances.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let opts = EvolveOptions::default();
    let mut report = GradcheckReport { max_rel_error: 0.0, worst: None, components_checked: 0 };
    for idx in 0..cfg.instances {
        let inst = GradcheckInstance::random(cfg.seed.wrapping_add(idx as u64), cfg.size, cfg.channels, cfg.steps)?;
        let zero_weights = ProbeLoss { weights: ScalarField::new(cfg.size, cfg.size, 0.0)? };
        let (result, tape) = evolve_recorded(&inst.features, &inst.phi0, &inst.hypers, &opts)?;
        let (cot, loss): (ScalarField, &dyn PhiLoss) = if cfg.zero_cotangent {
            (ScalarField::new(cfg.size, cfg.size, 0.0)?, &zero_weights)
        } else {
            (inst.loss.gradient(&result.phi_final)?, &inst.loss)
        };
        let grads = backward(&tape, &cot)?;
        for comp in Component::all(cfg.channels, cfg.size, cfg.size, cfg.steps) {
            let analytic = grads.get(comp);
            let numeric = if cfg.zero_cotangent {
                0.0
            } else {
                finite_difference_oracle(&inst.features, &inst.phi0, &inst.hypers, &opts, loss, comp, cfg.fd_step)?
            };
            let err = relative_error(analytic, numeric);
            report.components_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((idx, comp, analytic, numeric));
            }
        }
    }
    Ok(report)
}
