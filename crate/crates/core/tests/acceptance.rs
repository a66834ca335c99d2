//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use levelset::chanvese::{energy, evolve, region_constants, EvolveOptions, InstanceHypers, RegionConstants};
use levelset::diffops::curvature;
use levelset::fields::{BinaryMask, FeatureField, ScalarField};
use levelset::io;
use levelset::metrics::{boundary_f1, boundary_pixels, combined_loss, mask_iou, LossWeights};
use levelset::synth::{coarse_init, generate, InitMode, ShapeFamily, SynthRng, SynthSpec};
use levelset::tsdf::{closed_contour_count, dirac_soft, heaviside_soft, mask_to_tsdf, signed_distance, SoftParams};
use levelset::unrolled::{gradcheck, GradcheckConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// 1. Reverse-mode gradients vs central differences.
fn gradients() -> Outcome {
    let start = Instant::now();
    let report = gradcheck(&GradcheckConfig::default()).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let pass = report.max_rel_error < 1e-4 && elapsed < Duration::from_secs(60) && report.components_checked == 20 * 1289;
    outcome(
        pass,
        format!(
            "max_rel_error={:.3e} over {} components in {:.1}s; worst {:?}",
            report.max_rel_error,
            report.components_checked,
            elapsed.as_secs_f64(),
            report.worst
        ),
    )
}

// 2. The closed-form means minimize the energy for fixed phi.
fn constant_optimality() -> Outcome {
    let mut rng = SynthRng::new(7);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let (c, h, w) = (1 + (rng.uniform() * 3.0) as usize, 8, 9);
        let f = FeatureField::from_vec(c, h, w, (0..c * h * w).map(|_| rng.range(-1.0, 2.0)).collect()).unwrap();
        let phi = ScalarField::from_fn(h, w, |_, _| rng.range(-1.0, 1.0)).unwrap();
        let p = SoftParams::new(rng.range(0.1, 2.0)).unwrap();
        let hy = InstanceHypers::new(rng.range(0.1, 2.0), rng.range(0.1, 2.0), rng.range(0.0, 2.0), vec![], vec![]).unwrap();
        let best = region_constants(&f, &phi, p).unwrap();
        let e_best = energy(&f, &phi, &best, &hy, p).unwrap();
        for _ in 0..100 {
            let scale = rng.range(1e-4, 0.5);
            let perturbed = RegionConstants {
                c1: best.c1.iter().map(|v| v + scale * rng.normal()).collect(),
                c2: best.c2.iter().map(|v| v + scale * rng.normal()).collect(),
            };
            let e = energy(&f, &phi, &perturbed, &hy, p).unwrap();
            worst = worst.min(e - e_best + 1e-9);
        }
    }
    outcome(worst >= 0.0, format!("min slack E(perturbed) - E(closed form) + 1e-9 = {worst:.3e}"))
}

fn box_init_iou(spec: &SynthSpec, h: &InstanceHypers) -> (f64, BinaryMask, ScalarField) {
    let inst = generate(spec).unwrap();
    let init = coarse_init(&inst.mask, InitMode::Box, 0.0).unwrap();
    let res = evolve(&inst.features, &init, h, &EvolveOptions::default()).unwrap();
    let mask = res.mask();
    (mask_iou(&mask, &inst.mask).unwrap(), mask, res.phi_final)
}

// 3. Two-region recovery from a bounding box.
fn classic_recovery() -> Outcome {
    let start = Instant::now();
    let h = InstanceHypers::constant(200, 1.0, 1.0, 0.05, 1.0, 0.5).unwrap();
    let ious: Vec<f64> = (0..50u64)
        .map(|s| {
            let shape = if s % 2 == 0 { ShapeFamily::Disk } else { ShapeFamily::RoundedRect };
            box_init_iou(&SynthSpec::intensity(s, 128, shape, 0.1), &h).0
        })
        .collect();
    let ok = ious.iter().filter(|&&v| v >= 0.95).count();
    let min = ious.iter().copied().fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    outcome(
        ok >= 45 && elapsed < Duration::from_secs(300),
        format!("{ok}/50 with IoU >= 0.95 (min {min:.4}) in {:.1}s", elapsed.as_secs_f64()),
    )
}

// 4. Feature space separates what the grayscale projection cannot.
fn feature_separation() -> Outcome {
    let channels = 8;
    let root = (channels as f64).sqrt();
    // unit centroid offset: mostly alternating (zero channel mean), slight
    // common-mode part so the grayscale image keeps a 0.01 contrast
    let common = 0.01 * root;
    let alt = (1.0 - common * common).sqrt();
    let outside = vec![0.5; channels];
    let inside: Vec<f64> = (0..channels)
        .map(|k| 0.5 + (alt * if k % 2 == 0 { 1.0 } else { -1.0 } + common) / root)
        .collect();
    let h = InstanceHypers::constant(500, 1.0, 1.0, 0.05, 1.0, 0.5).unwrap();
    let (mut ok, mut baseline_sum) = (0, 0.0);
    for s in 0..20u64 {
        let spec = SynthSpec {
            seed: 1000 + s,
            height: 64,
            width: 64,
            shape: ShapeFamily::Disk,
            noise: 0.05,
            channels,
            inside: inside.clone(),
            outside: outside.clone(),
            illumination: 0.4,
        };
        let inst = generate(&spec).unwrap();
        let init = coarse_init(&inst.mask, InitMode::Box, 0.0).unwrap();
        let opts = EvolveOptions::default();
        let feat = evolve(&inst.features, &init, &h, &opts).unwrap();
        if mask_iou(&feat.mask(), &inst.mask).unwrap() >= 0.98 {
            ok += 1;
        }
        let gray = FeatureField::from_scalar(&inst.features.mean_projection());
        let base = evolve(&gray, &init, &h, &opts).unwrap();
        baseline_sum += mask_iou(&base.mask(), &inst.mask).unwrap();
    }
    let baseline = baseline_sum / 20.0;
    outcome(
        ok >= 18 && baseline < 0.8,
        format!("feature mode {ok}/20 with IoU >= 0.98; grayscale baseline mean IoU {baseline:.4}"),
    )
}

// 5. Holes and multiple components.
fn topology() -> Outcome {
    let h = InstanceHypers::constant(300, 1.0, 1.0, 0.5, 1.0, 0.5).unwrap();
    let mut failures = Vec::new();
    let mut min_iou = f64::INFINITY;
    for shape in [ShapeFamily::Annulus, ShapeFamily::TwoBlobs] {
        let (components, holes) = shape.topology();
        for s in 0..5u64 {
            let (iou, _, phi) = box_init_iou(&SynthSpec::intensity(2000 + s, 128, shape, 0.1), &h);
            let contours = closed_contour_count(&phi);
            min_iou = min_iou.min(iou);
            if iou < 0.9 || contours != components + holes {
                failures.push(format!("{shape}#{s}: iou {iou:.3} contours {contours}"));
            }
        }
    }
    outcome(failures.is_empty(), format!("min IoU {min_iou:.4}; failures {failures:?}"))
}

fn brute_signed_distance(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = mask.shape();
    let mut pts = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w && mask.get(r, c) != mask.get(r, c + 1) {
                pts.push((r as f64, c as f64 + 0.5));
            }
            if r + 1 < h && mask.get(r, c) != mask.get(r + 1, c) {
                pts.push((r as f64 + 0.5, c as f64));
            }
        }
    }
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d = pts
                .iter()
                .map(|&(pr, pc)| ((pr - r as f64).powi(2) + (pc - c as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            let d = if d.is_finite() { d } else { diag };
            out.push(if mask.get(r, c) { d } else { -d });
        }
    }
    out
}

// 6. Analytic identities.
fn identities() -> Outcome {
    let p = SoftParams::new(1.0).unwrap();
    let h0 = heaviside_soft(0.0, p);
    let he = heaviside_soft(1.0, p);
    let d0 = dirac_soft(0.0, p);
    let soft_ok = (h0 - 0.5).abs() < 1e-15 && (he - 0.75).abs() < 1e-15 && (d0 - 1.0 / PI).abs() < 1e-15;

    let lin = ScalarField::from_fn(20, 24, |r, c| 0.3 * c as f64 - 0.7 * r as f64 + 2.0).unwrap();
    // the curvature stencil is 5x5, so pixels within 2 of the border see padding
    let kappa = curvature(&lin, 1e-8);
    let mut kappa_max = 0.0f64;
    for r in 2..18 {
        for c in 2..22 {
            kappa_max = kappa_max.max(kappa.get(r, c).abs());
        }
    }

    let mut rng = SynthRng::new(11);
    let mut edt_err = 0.0f64;
    for i in 0..20 {
        let density = 0.05 + 0.9 * (i as f64 / 19.0);
        let mask = BinaryMask::from_fn(32, 32, |_, _| rng.uniform() < density).unwrap();
        let fast = signed_distance(&mask);
        for (a, b) in fast.data().iter().zip(brute_signed_distance(&mask)) {
            edt_err = edt_err.max((a - b).abs());
        }
    }
    outcome(
        soft_ok && kappa_max < 1e-9 && edt_err < 1e-9,
        format!("H(0)={h0} H(eps)={he} delta(0)={d0:.17}; max interior |kappa| on linear phi {kappa_max:.2e}; distance transform error {edt_err:.2e}"),
    )
}

fn reference_tsdf_loss(phi: &[f64], gt: &[f64], mask: &[u8]) -> f64 {
    let heav = |z: f64| 0.5 * (1.0 + 2.0 / PI * (z / 0.1).atan());
    let n = phi.len() as f64;
    let mut total = 0.0;
    for i in 0..phi.len() {
        let p = if mask[i] == 1 { heav(phi[i]) } else { heav(-phi[i]) };
        total += (phi[i] - gt[i]).abs() - p.clamp(1e-7, 1.0 - 1e-7).ln();
    }
    total / n
}

// 7. Loss weights and the BCE value at the zero level set.
fn loss_configuration() -> Outcome {
    let cityscapes = LossWeights::CITYSCAPES == LossWeights::new(1.0, 5.0).unwrap();
    let coco = LossWeights::COCO == LossWeights::new(0.2, 1.0).unwrap();

    let mask = BinaryMask::from_fn(16, 16, |r, c| (4..12).contains(&r) && (3..10).contains(&c)).unwrap();
    let gt = mask_to_tsdf(&mask, None).unwrap();
    let mut rng = SynthRng::new(5);
    let phi0 = ScalarField::from_fn(16, 16, |_, _| rng.range(-1.0, 1.0)).unwrap();
    let phin = ScalarField::from_fn(16, 16, |_, _| rng.range(-1.5, 1.5)).unwrap();
    let l0 = reference_tsdf_loss(phi0.data(), gt.field().data(), mask.data());
    let ln = reference_tsdf_loss(phin.data(), gt.field().data(), mask.data());
    let mut err = 0.0f64;
    for w in [LossWeights::CITYSCAPES, LossWeights::COCO] {
        let got = combined_loss(&phi0, &phin, &gt, &mask, w).unwrap();
        err = err.max((got - (w.w_initial * l0 + w.w_final * ln)).abs());
    }

    let zero = ScalarField::new(16, 16, 0.0).unwrap();
    let bce = levelset::metrics::tsdf_loss_terms(&zero, &gt, &mask).unwrap().bce;
    outcome(
        cityscapes && coco && err < 1e-12 && bce == std::f64::consts::LN_2,
        format!("weights (1,5) {cityscapes} (0.2,1) {coco}; combined loss error {err:.2e}; BCE at phi=0 {bce:.17}"),
    )
}

fn brute_f1(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> f64 {
    let pts = |m: &BinaryMask| -> Vec<(f64, f64)> {
        let b = boundary_pixels(m);
        let (h, w) = b.shape();
        (0..h * w).filter(|i| b.data()[*i] == 1).map(|i| ((i / w) as f64, (i % w) as f64)).collect()
    };
    let (p, g) = (pts(pred), pts(gt));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let frac = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        a.iter().filter(|x| b.iter().any(|y| ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt() <= tol)).count() as f64
            / a.len() as f64
    };
    let (prec, rec) = (frac(&p, &g), frac(&g, &p));
    if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

// 8. Boundary F-measure sanity.
fn boundary_metric() -> Outcome {
    let square = |r0: usize, c0: usize| BinaryMask::from_fn(40, 40, |r, c| (r0..r0 + 10).contains(&r) && (c0..c0 + 10).contains(&c)).unwrap();
    let a = square(5, 5);
    let identical = boundary_f1(&a, &a, 1.0).unwrap() == 1.0 && boundary_f1(&a, &a, 2.0).unwrap() == 1.0;
    let far = square(25, 25);
    let disjoint = boundary_f1(&a, &far, 1.0).unwrap() == 0.0 && boundary_f1(&a, &far, 2.0).unwrap() == 0.0;
    let shifted = square(5, 6);
    let shift1 = boundary_f1(&a, &shifted, 1.0).unwrap();
    let shift_ok = shift1 == 1.0 && brute_f1(&a, &shifted, 1.0) == 1.0;

    let mut rng = SynthRng::new(9);
    let mut monotone = 0;
    let mut agree = true;
    for _ in 0..100 {
        let d1 = rng.range(0.1, 0.9);
        let d2 = rng.range(0.1, 0.9);
        let p = BinaryMask::from_fn(20, 20, |_, _| rng.uniform() < d1).unwrap();
        let g = BinaryMask::from_fn(20, 20, |_, _| rng.uniform() < d2).unwrap();
        let (f1, f2) = (boundary_f1(&p, &g, 1.0).unwrap(), boundary_f1(&p, &g, 2.0).unwrap());
        if f2 >= f1 {
            monotone += 1;
        }
        agree &= (f1 - brute_f1(&p, &g, 1.0)).abs() < 1e-12 && (f2 - brute_f1(&p, &g, 2.0)).abs() < 1e-12;
    }
    outcome(
        identical && disjoint && shift_ok && monotone == 100 && agree,
        format!("identical {identical}, disjoint {disjoint}, shifted square F1@1 {shift1}; F1@2 >= F1@1 on {monotone}/100; matches exhaustive matcher {agree}"),
    )
}

fn run_segment(dir: &Path, out: &str, threads: &str) -> (Vec<u8>, Vec<u8>, bool) {
    let status = Command::new(env!("CARGO_BIN_EXE_levelset"))
        .args(["segment", "--input"])
        .arg(dir.join("image.png"))
        .arg("--init-mask")
        .arg(dir.join("init.png"))
        .args(["--steps", "60", "--eps", "1", "--dt", "0.5", "--mu", "0.05", "--out"])
        .arg(dir.join(out))
        .env("LEVELSET_THREADS", threads)
        .status()
        .expect("binary runs");
    let read = |f: &str| std::fs::read(dir.join(out).join(f)).unwrap_or_default();
    (read("mask.png"), read("phi.lsf"), status.success())
}

// 9. Bit-identical segment output across runs and thread counts.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(&SynthSpec::intensity(42, 96, ShapeFamily::Disk, 0.1)).unwrap();
    io::write_gray_png(&dir.path().join("image.png"), &inst.features.mean_projection()).unwrap();
    let init = levelset::synth::coarse_mask(&inst.mask, InitMode::Box, 2.0).unwrap();
    io::write_mask_png(&dir.path().join("init.png"), &init).unwrap();
    let runs: Vec<_> = [("a1", "1"), ("b1", "1"), ("a4", "4"), ("b4", "4")]
        .iter()
        .map(|(out, t)| run_segment(dir.path(), out, t))
        .collect();
    let all_ok = runs.iter().all(|r| r.2 && !r.0.is_empty() && !r.1.is_empty());
    let same = runs.windows(2).all(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1);
    let iou = io::decode_mask(&runs[0].0).map(|m| mask_iou(&m, &inst.mask).unwrap()).unwrap_or(0.0);
    outcome(
        all_ok && same,
        format!("exit ok {all_ok}; mask and field bytes identical over 2 runs x threads {{1, 4}}: {same}; IoU {iou:.4}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient check", gradients),
        ("region constant optimality", constant_optimality),
        ("two-region recovery", classic_recovery),
        ("feature-space separation", feature_separation),
        ("topology", topology),
        ("analytic identities", identities),
        ("loss configuration", loss_configuration),
        ("boundary metric", boundary_metric),
        ("determinism", determinism),
    ];
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(f)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| outcome(false, "panicked")))
            .collect()
    });
    let mut failed = 0;
    for (i, ((name, _), r)) in criteria.iter().zip(&results).enumerate() {
        println!("criterion {} [{}] {}: {}", i + 1, if r.pass { "PASS" } else { "FAIL" }, name, r.detail);
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
