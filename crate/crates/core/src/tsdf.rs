//! Signed distance construction, soft step relaxations and contour extraction.
//!
//! The object boundary of a binary mask is the set of pixel-edge midpoints
//! separating a set pixel from an unset 4-neighbor. Distances are measured
//! from pixel centers to the nearest such midpoint, so every pixel sits at
//! least half a pixel away from the boundary and the sign is never ambiguous.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{BinaryMask, ScalarField, Tsdf};

/// Sharpness of the soft Heaviside and Dirac relaxations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftParams {
    epsilon: f64,
}

impl SoftParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// `H_eps(z) = 1/2 (1 + 2/pi atan(z / eps))`.
#[inline]
pub fn heaviside_soft(z: f64, p: SoftParams) -> f64 {
    heaviside(z, p.epsilon)
}

/// `delta_eps(z) = 1/pi * eps^2 / (eps^2 + z^2)`.
///
/// This is the relaxation used by the evolution; note it equals
/// `eps * d/dz H_eps(z)`, not the derivative itself.
#[inline]
pub fn dirac_soft(z: f64, p: SoftParams) -> f64 {
    dirac(z, p.epsilon)
}

/// Exact derivative of [`heaviside_soft`] in `z`.
#[inline]
pub fn heaviside_soft_derivative(z: f64, p: SoftParams) -> f64 {
    heaviside_dz(z, p.epsilon)
}

#[inline]
pub(crate) fn heaviside(z: f64, eps: f64) -> f64 {
    0.5 * (1.0 + (2.0 / PI) * (z / eps).atan())
}

#[inline]
pub(crate) fn heaviside_dz(z: f64, eps: f64) -> f64 {
    eps / (PI * (eps * eps + z * z))
}

#[inline]
pub(crate) fn heaviside_deps(z: f64, eps: f64) -> f64 {
    -z / (PI * (eps * eps + z * z))
}

#[inline]
pub(crate) fn dirac(z: f64, eps: f64) -> f64 {
    let e2 = eps * eps;
    e2 / (PI * (e2 + z * z))
}

#[inline]
pub(crate) fn dirac_dz(z: f64, eps: f64) -> f64 {
    let q = eps * eps + z * z;
    -2.0 * eps * eps * z / (PI * q * q)
}

#[inline]
pub(crate) fn dirac_deps(z: f64, eps: f64) -> f64 {
    let q = eps * eps + z * z;
    2.0 * eps * z * z / (PI * q * q)
}

/// Default truncation radius: a fifth of the shorter grid side.
pub fn default_tau(height: usize, width: usize) -> f64 {
    0.2 * height.min(width) as f64
}

/// Exact Euclidean signed distance (in pixels) to the mask boundary,
/// positive inside.
///
/// Masks without a boundary (all set or all clear) map to plus or minus the
/// grid diagonal length.
pub fn signed_distance(mask: &BinaryMask) -> ScalarField {
    let (h, w) = mask.shape();
    let diag = ((h * h + w * w) as f64).sqrt();
    let inside = |r: usize, c: usize| mask.get(r, c);
    let sign = |r: usize, c: usize| if inside(r, c) { 1.0 } else { -1.0 };

    // Work on a doubled lattice so pixel centers (even, even) and edge
    // midpoints (odd on one axis) both land on integer sites.
    let gh = 2 * h - 1;
    let gw = 2 * w - 1;
    let mut grid = vec![f64::INFINITY; gh * gw];
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w && inside(r, c) != inside(r, c + 1) {
                grid[2 * r * gw + 2 * c + 1] = 0.0;
                any = true;
            }
            if r + 1 < h && inside(r, c) != inside(r + 1, c) {
                grid[(2 * r + 1) * gw + 2 * c] = 0.0;
                any = true;
            }
        }
    }
    if !any {
        return ScalarField::from_fn(h, w, |r, c| sign(r, c) * diag)
            .expect("diagonal sentinel is finite");
    }

    squared_edt_2d(&mut grid, gh, gw);
    ScalarField::from_fn(h, w, |r, c| sign(r, c) * grid[2 * r * gw + 2 * c].sqrt() / 2.0)
        .expect("finite distances")
}

// Separable exact squared distance transform (lower envelope of parabolas).
fn squared_edt_2d(grid: &mut [f64], h: usize, w: usize) {
    let mut buf_in = vec![0.0; h.max(w)];
    let mut buf_out = vec![0.0; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            buf_in[r] = grid[r * w + c];
        }
        edt_1d(&buf_in[..h], &mut buf_out[..h]);
        for r in 0..h {
            grid[r * w + c] = buf_out[r];
        }
    }
    for r in 0..h {
        buf_in[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&buf_in[..w], &mut buf_out[..w]);
        grid[r * w..(r + 1) * w].copy_from_slice(&buf_out[..w]);
    }
}

fn edt_1d(f: &[f64], out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let meet = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for &q in &sites {
        while let Some(&p) = v.last() {
            let s = meet(q, p);
            if s <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            z.clear();
            z.push(f64::NEG_INFINITY);
        } else {
            z.push(meet(q, *v.last().unwrap()));
        }
        v.push(q);
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Clamps distances to `[-tau, tau]` and scales into `[-1, 1]`.
pub fn truncate_normalize(d: &ScalarField, tau: f64) -> Result<Tsdf> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("truncation radius must be positive, got {tau}")));
    }
    let field = d.map(|v| v.clamp(-tau, tau) / tau)?;
    Tsdf::new(field, tau)
}

/// Signed distance followed by truncation with the default radius.
pub fn mask_to_tsdf(mask: &BinaryMask, tau: Option<f64>) -> Result<Tsdf> {
    let tau = tau.unwrap_or_else(|| default_tau(mask.height(), mask.width()));
    truncate_normalize(&signed_distance(mask), tau)
}

/// Pixel is set iff `phi >= 0`.
pub fn mask_from_field(phi: &ScalarField) -> BinaryMask {
    BinaryMask::from_vec(
        phi.height(),
        phi.width(),
        phi.data().iter().map(|&v| (v >= 0.0) as u8).collect(),
    )
    .expect("shape inherited from field")
}

pub fn mask_from_tsdf(phi: &Tsdf) -> BinaryMask {
    mask_from_field(phi.field())
}

/// A point in pixel coordinates: `x` is the column, `y` the row, with pixel
/// centers on integers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Identifies the grid edge a crossing lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeKey {
    /// Between `(row, col)` and `(row, col + 1)`.
    Horizontal { row: usize, col: usize },
    /// Between `(row, col)` and `(row + 1, col)`.
    Vertical { row: usize, col: usize },
}

/// One marching-squares segment of the zero level set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    pub start_edge: EdgeKey,
    pub end_edge: EdgeKey,
}

/// A chain of linked segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<Point>,
    pub closed: bool,
}

/// Marching squares on the pixel-center lattice.
///
/// Corners with `phi >= 0` are inside. Crossings are placed by linear
/// interpolation along the cell edge. Saddle cells are split according to
/// the sign of the mean of their four corners: corners whose class differs
/// from the center are cut off.
pub fn zero_crossings(phi: &ScalarField) -> Vec<Segment> {
    let (h, w) = phi.shape();
    let mut segments = Vec::new();
    if h < 2 || w < 2 {
        return segments;
    }
    let crossing = |a: (usize, usize), b: (usize, usize), key: EdgeKey| -> (Point, EdgeKey) {
        let va = phi.get(a.0, a.1);
        let vb = phi.get(b.0, b.1);
        let t = va / (va - vb);
        let p = Point {
            x: a.1 as f64 + t * (b.1 as f64 - a.1 as f64),
            y: a.0 as f64 + t * (b.0 as f64 - a.0 as f64),
        };
        (p, key)
    };
    for r in 0..h - 1 {
        for c in 0..w - 1 {
            // Corners in cyclic order: tl, tr, br, bl.
            let corners = [(r, c), (r, c + 1), (r + 1, c + 1), (r + 1, c)];
            let vals = corners.map(|(i, j)| phi.get(i, j));
            let ins = vals.map(|v| v >= 0.0);
            // Edge k joins corner k and corner k+1.
            let keys = [
                EdgeKey::Horizontal { row: r, col: c },
                EdgeKey::Vertical { row: r, col: c + 1 },
                EdgeKey::Horizontal { row: r + 1, col: c },
                EdgeKey::Vertical { row: r, col: c },
            ];
            let ends = [(0, 1), (1, 2), (3, 2), (0, 3)];
            let mut cross: [Option<(Point, EdgeKey)>; 4] = [None; 4];
            let mut n = 0;
            for k in 0..4 {
                let (a, b) = ends[k];
                if ins[a] != ins[b] {
                    cross[k] = Some(crossing(corners[a], corners[b], keys[k]));
                    n += 1;
                }
            }
            let mut emit = |e1: usize, e2: usize| {
                let (p1, k1) = cross[e1].unwrap();
                let (p2, k2) = cross[e2].unwrap();
                segments.push(Segment { start: p1, end: p2, start_edge: k1, end_edge: k2 });
            };
            match n {
                0 => {}
                2 => {
                    let idx: Vec<usize> = (0..4).filter(|&k| cross[k].is_some()).collect();
                    emit(idx[0], idx[1]);
                }
                4 => {
                    let center_inside = vals.iter().sum::<f64>() / 4.0 >= 0.0;
                    // Corner k is adjacent to edges k-1 and k.
                    for (k, &inside) in ins.iter().enumerate() {
                        if inside != center_inside {
                            emit((k + 3) % 4, k);
                        }
                    }
                }
                _ => unreachable!("a cell has an even number of sign changes"),
            }
        }
    }
    segments
}

/// Links segments that share a crossing edge into polylines.
pub fn trace_contours(segments: &[Segment]) -> Vec<Contour> {
    let mut by_edge: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        by_edge.entry(s.start_edge).or_default().push(i);
        by_edge.entry(s.end_edge).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();

    // Walk from `edge` away from segment `from`, appending points.
    let walk = |mut seg: usize, mut edge: EdgeKey, used: &mut Vec<bool>, pts: &mut Vec<Point>| -> bool {
        loop {
            let next = by_edge[&edge].iter().copied().find(|&j| j != seg);
            match next {
                Some(j) if !used[j] => {
                    used[j] = true;
                    let s = &segments[j];
                    let (p, e) = if s.start_edge == edge { (s.end, s.end_edge) } else { (s.start, s.start_edge) };
                    pts.push(p);
                    seg = j;
                    edge = e;
                }
                Some(_) => return true,
                None => return false,
            }
        }
    };

    for i in 0..segments.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let s = &segments[i];
        let mut forward = vec![s.start, s.end];
        let closed = walk(i, s.end_edge, &mut used, &mut forward);
        if closed {
            // The closing point duplicates the start.
            forward.pop();
            contours.push(Contour { points: forward, closed: true });
            continue;
        }
        let mut backward = Vec::new();
        walk(i, s.start_edge, &mut used, &mut backward);
        backward.reverse();
        backward.extend(forward);
        contours.push(Contour { points: backward, closed: false });
    }
    contours
}

/// Counts closed contours of the zero level set.
pub fn closed_contour_count(phi: &ScalarField) -> usize {
    trace_contours(&zero_crossings(phi)).iter().filter(|c| c.closed).count()
}

/// Value of `phi` linearly interpolated at a point lying on a grid edge.
pub fn interpolate_on_edge(phi: &ScalarField, p: Point, edge: EdgeKey) -> f64 {
    match edge {
        EdgeKey::Horizontal { row, col } => {
            let t = p.x - col as f64;
            phi.get(row, col) * (1.0 - t) + phi.get(row, col + 1) * t
        }
        EdgeKey::Vertical { row, col } => {
            let t = p.y - row as f64;
            phi.get(row, col) * (1.0 - t) + phi.get(row + 1, col) * t
        }
    }
}
