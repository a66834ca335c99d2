//! Sobel gradient, divergence and mean-curvature operators.
//!
//! The 3x3 Sobel kernels are scaled by 1/8 so a linear ramp `a*x + b*y`
//! yields exactly `(a, b)` away from the border. Borders use replicate
//! padding. `x` runs along columns, `y` along rows (downward).
//!
//! The adjoint (transpose) of each linear operator is provided for the
//! reverse pass of the unrolled solver.

use crate::error::{dim_err, Result};
use crate::exec::Exec;
use crate::fields::ScalarField;

/// Default regularizer in `sqrt(|grad phi|^2 + eta^2)`.
pub const DEFAULT_ETA: f64 = 1e-8;

const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// A 2-vector per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField2 {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField2 {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        if x.shape() != y.shape() {
            return dim_err(format!("vector components differ in shape: {:?} vs {:?}", x.shape(), y.shape()));
        }
        Ok(Self { x, y })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// `d/dx` Sobel derivative of a row-major `h x w` grid into `out`.
pub(crate) fn sobel_x(f: &[f64], h: usize, w: usize, out: &mut [f64], exec: &Exec) {
    exec.rows(out, w, |r, row| {
        for (c, o) in row.iter_mut().enumerate() {
            let cl = clamp_idx(c as isize - 1, w);
            let cr = clamp_idx(c as isize + 1, w);
            let mut acc = 0.0;
            for (k, wt) in SMOOTH.iter().enumerate() {
                let rr = clamp_idx(r as isize + k as isize - 1, h);
                acc += wt * (f[rr * w + cr] - f[rr * w + cl]);
            }
            *o = acc / 8.0;
        }
    });
}

/// `d/dy` Sobel derivative.
pub(crate) fn sobel_y(f: &[f64], h: usize, w: usize, out: &mut [f64], exec: &Exec) {
    exec.rows(out, w, |r, row| {
        let ru = clamp_idx(r as isize - 1, h);
        let rd = clamp_idx(r as isize + 1, h);
        for (c, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, wt) in SMOOTH.iter().enumerate() {
                let cc = clamp_idx(c as isize + k as isize - 1, w);
                acc += wt * (f[rd * w + cc] - f[ru * w + cc]);
            }
            *o = acc / 8.0;
        }
    });
}

/// Accumulates `Dx^T g` into `acc`.
pub(crate) fn sobel_x_adjoint(g: &[f64], h: usize, w: usize, acc: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let v = g[r * w + c] / 8.0;
            if v == 0.0 {
                continue;
            }
            let cl = clamp_idx(c as isize - 1, w);
            let cr = clamp_idx(c as isize + 1, w);
            for (k, wt) in SMOOTH.iter().enumerate() {
                let rr = clamp_idx(r as isize + k as isize - 1, h);
                acc[rr * w + cr] += wt * v;
                acc[rr * w + cl] -= wt * v;
            }
        }
    }
}

/// Accumulates `Dy^T g` into `acc`.
pub(crate) fn sobel_y_adjoint(g: &[f64], h: usize, w: usize, acc: &mut [f64]) {
    for r in 0..h {
        let ru = clamp_idx(r as isize - 1, h);
        let rd = clamp_idx(r as isize + 1, h);
        for c in 0..w {
            let v = g[r * w + c] / 8.0;
            if v == 0.0 {
                continue;
            }
            for (k, wt) in SMOOTH.iter().enumerate() {
                let cc = clamp_idx(c as isize + k as isize - 1, w);
                acc[rd * w + cc] += wt * v;
                acc[ru * w + cc] -= wt * v;
            }
        }
    }
}

/// Intermediates of the curvature computation, kept for the reverse pass.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CurvatureParts {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// `sqrt(gx^2 + gy^2 + eta^2)`
    pub norm: Vec<f64>,
    pub kappa: Vec<f64>,
}

pub(crate) fn curvature_parts(phi: &[f64], h: usize, w: usize, eta: f64, exec: &Exec) -> CurvatureParts {
    let n = h * w;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    sobel_x(phi, h, w, &mut gx, exec);
    sobel_y(phi, h, w, &mut gy, exec);
    let e2 = eta * eta;
    let norm: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b + e2).sqrt()).collect();
    let nx: Vec<f64> = gx.iter().zip(&norm).map(|(g, s)| g / s).collect();
    let ny: Vec<f64> = gy.iter().zip(&norm).map(|(g, s)| g / s).collect();
    let mut kappa = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    sobel_x(&nx, h, w, &mut kappa, exec);
    sobel_y(&ny, h, w, &mut tmp, exec);
    kappa.iter_mut().zip(&tmp).for_each(|(k, t)| *k += t);
    CurvatureParts { gx, gy, norm, kappa }
}

/// Accumulates the vector-Jacobian product of the curvature map into `acc`.
pub(crate) fn curvature_adjoint(parts: &CurvatureParts, kappa_bar: &[f64], h: usize, w: usize, acc: &mut [f64]) {
    let n = h * w;
    let mut nx_bar = vec![0.0; n];
    let mut ny_bar = vec![0.0; n];
    sobel_x_adjoint(kappa_bar, h, w, &mut nx_bar);
    sobel_y_adjoint(kappa_bar, h, w, &mut ny_bar);
    let mut gx_bar = vec![0.0; n];
    let mut gy_bar = vec![0.0; n];
    for i in 0..n {
        let (gx, gy, s) = (parts.gx[i], parts.gy[i], parts.norm[i]);
        let proj = (nx_bar[i] * gx + ny_bar[i] * gy) / (s * s * s);
        gx_bar[i] = nx_bar[i] / s - gx * proj;
        gy_bar[i] = ny_bar[i] / s - gy * proj;
    }
    sobel_x_adjoint(&gx_bar, h, w, acc);
    sobel_y_adjoint(&gy_bar, h, w, acc);
}

pub fn sobel_gradient(f: &ScalarField) -> VectorField2 {
    let (h, w) = f.shape();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let exec = Exec::serial();
    sobel_x(f.data(), h, w, &mut gx, &exec);
    sobel_y(f.data(), h, w, &mut gy, &exec);
    VectorField2 {
        x: ScalarField::from_vec(h, w, gx).expect("finite input gives finite gradient"),
        y: ScalarField::from_vec(h, w, gy).expect("finite input gives finite gradient"),
    }
}

/// `div v = d(vx)/dx + d(vy)/dy` with the same Sobel stencils.
pub fn divergence(v: &VectorField2) -> Result<ScalarField> {
    if v.x.shape() != v.y.shape() {
        return dim_err("vector components differ in shape");
    }
    let (h, w) = v.shape();
    let exec = Exec::serial();
    let mut out = vec![0.0; h * w];
    let mut tmp = vec![0.0; h * w];
    sobel_x(v.x.data(), h, w, &mut out, &exec);
    sobel_y(v.y.data(), h, w, &mut tmp, &exec);
    out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
    ScalarField::from_vec(h, w, out)
}

/// `div(grad phi / sqrt(|grad phi|^2 + eta^2))`.
///
/// Negative on convex regions of a positive-inside level set, e.g. `-1/r`
/// on circles of radius `r`.
pub fn curvature(phi: &ScalarField, eta: f64) -> ScalarField {
    let (h, w) = phi.shape();
    let parts = curvature_parts(phi.data(), h, w, eta, &Exec::serial());
    ScalarField::from_vec(h, w, parts.kappa).expect("regularized curvature is finite")
}

/// Vector-Jacobian product of [`curvature`]: `J^T cotangent`.
pub fn curvature_vjp(phi: &ScalarField, eta: f64, cotangent: &ScalarField) -> Result<ScalarField> {
    if phi.shape() != cotangent.shape() {
        return dim_err("cotangent shape differs from phi");
    }
    let (h, w) = phi.shape();
    let parts = curvature_parts(phi.data(), h, w, eta, &Exec::serial());
    let mut acc = vec![0.0; h * w];
    curvature_adjoint(&parts, cotangent.data(), h, w, &mut acc);
    ScalarField::from_vec(h, w, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_field(h: usize, w: usize, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(h, w, |_, _| uniform(&mut rng) * 2.0 - 1.0).unwrap()
    }

    // Naive correlation with an explicit kernel over the replicate-padded grid.
    fn correlate(f: &ScalarField, k: [[f64; 3]; 3]) -> Vec<f64> {
        let (h, w) = f.shape();
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0;
                for (i, krow) in k.iter().enumerate() {
                    for (j, kv) in krow.iter().enumerate() {
                        let rr = (r as isize + i as isize - 1).clamp(0, h as isize - 1) as usize;
                        let cc = (c as isize + j as isize - 1).clamp(0, w as isize - 1) as usize;
                        s += kv * f.get(rr, cc);
                    }
                }
                out[r * w + c] = s / 8.0;
            }
        }
        out
    }

    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

    #[test]
    fn constant_has_zero_gradient() {
        let g = sobel_gradient(&ScalarField::new(5, 6, 3.0).unwrap());
        assert!(g.x.data().iter().chain(g.y.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_is_exact_in_interior() {
        let f = ScalarField::from_fn(6, 7, |_, c| 2.0 * c as f64).unwrap();
        let g = sobel_gradient(&f);
        for r in 1..5 {
            for c in 1..6 {
                assert_eq!(g.x.get(r, c), 2.0);
                assert_eq!(g.y.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_naive_correlation() {
        let f = random_field(9, 11, 1);
        let g = sobel_gradient(&f);
        for (a, b) in g.x.data().iter().zip(correlate(&f, KX)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.y.data().iter().zip(correlate(&f, KY)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_examples() {
        let c = VectorField2::new(ScalarField::new(4, 4, 1.5).unwrap(), ScalarField::new(4, 4, -2.0).unwrap()).unwrap();
        assert!(divergence(&c).unwrap().data().iter().all(|&v| v == 0.0));

        let lin = VectorField2::new(
            ScalarField::from_fn(6, 6, |_, c| c as f64).unwrap(),
            ScalarField::from_fn(6, 6, |r, _| r as f64).unwrap(),
        )
        .unwrap();
        let d = divergence(&lin).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                assert_eq!(d.get(r, c), 2.0);
            }
        }

        let v = VectorField2::new(random_field(7, 8, 2), random_field(7, 8, 3)).unwrap();
        let d = divergence(&v).unwrap();
        let oracle: Vec<f64> = correlate(&v.x, KX).iter().zip(correlate(&v.y, KY)).map(|(a, b)| a + b).collect();
        for (a, b) in d.data().iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_shape_mismatch() {
        let v = VectorField2 { x: ScalarField::new(2, 2, 0.0).unwrap(), y: ScalarField::new(2, 3, 0.0).unwrap() };
        assert!(divergence(&v).is_err());
        assert!(VectorField2::new(v.x.clone(), v.y.clone()).is_err());
    }

    #[test]
    fn curvature_of_linear_and_constant_fields() {
        let f = ScalarField::from_fn(10, 10, |r, c| 0.3 * c as f64 - 0.7 * r as f64 + 0.1).unwrap();
        let k = curvature(&f, DEFAULT_ETA);
        for r in 2..8 {
            for c in 2..8 {
                assert!(k.get(r, c).abs() < 1e-9);
            }
        }
        let k = curvature(&ScalarField::new(5, 5, 0.4).unwrap(), DEFAULT_ETA);
        assert!(k.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn curvature_of_circles() {
        let n = 256;
        let center = 127.5;
        let f = ScalarField::from_fn(n, n, |r, c| {
            100.0 - ((r as f64 - center).powi(2) + (c as f64 - center).powi(2)).sqrt()
        })
        .unwrap();
        let k = curvature(&f, DEFAULT_ETA);
        for &(r, c) in &[(128usize, 200usize), (60, 128), (40, 40), (200, 170)] {
            let rho = ((r as f64 - center).powi(2) + (c as f64 - center).powi(2)).sqrt();
            let expected = -1.0 / rho;
            assert!(((k.get(r, c) - expected) / expected).abs() < 0.05, "at ({r},{c})");
        }
    }

    #[test]
    fn adjoints_are_transposes() {
        let (h, w) = (6, 9);
        let f = random_field(h, w, 4);
        let g = random_field(h, w, 5);
        let exec = Exec::serial();
        let mut df = vec![0.0; h * w];
        sobel_x(f.data(), h, w, &mut df, &exec);
        let lhs: f64 = df.iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let mut at = vec![0.0; h * w];
        sobel_x_adjoint(g.data(), h, w, &mut at);
        let rhs: f64 = at.iter().zip(f.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        sobel_y(f.data(), h, w, &mut df, &exec);
        let lhs: f64 = df.iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let mut at = vec![0.0; h * w];
        sobel_y_adjoint(g.data(), h, w, &mut at);
        let rhs: f64 = at.iter().zip(f.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn curvature_vjp_matches_directional_finite_difference() {
        let (h, w) = (12, 12);
        let base = ScalarField::from_fn(h, w, |r, c| 0.05 * c as f64 - 0.03 * r as f64).unwrap();
        let noise = random_field(h, w, 6);
        let phi = ScalarField::from_vec(
            h,
            w,
            base.data().iter().zip(noise.data()).map(|(a, b)| a + 0.01 * b).collect(),
        )
        .unwrap();
        let dir = random_field(h, w, 7);
        let cot = random_field(h, w, 8);
        let step = 1e-6;
        let shifted = |s: f64| {
            let p = ScalarField::from_vec(h, w, phi.data().iter().zip(dir.data()).map(|(a, b)| a + s * b).collect()).unwrap();
            let k = curvature(&p, DEFAULT_ETA);
            k.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
        let vjp = curvature_vjp(&phi, DEFAULT_ETA, &cot).unwrap();
        let analytic: f64 = vjp.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum();
        assert!((fd - analytic).abs() / fd.abs() < 1e-6, "fd {fd} analytic {analytic}");
    }
}
