//! Pixel-by-pixel reference implementations and random instance
//! generation shared by the integration tests.
//!
//! Everything here works on plain row-major vectors and is written without
//! calling into the library's numeric code.

#![allow(dead_code)]

use flowconf::{BinaryMask, Grid1, Grid2, LossMode, Task, WeightSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type V2 = [f64; 2];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| <= tol * max(1, |b|)`; also accepts equal infinities.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

/// A random problem of at most 8x8 pixels.
#[derive(Debug, Clone)]
pub struct Instance {
    pub h: usize,
    pub w: usize,
    pub pred: Vec<V2>,
    pub gt: Vec<V2>,
    pub fw: Vec<V2>,
    pub bw: Vec<V2>,
    pub valid: Vec<bool>,
    pub hard: Vec<bool>,
    pub region: Vec<bool>,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

fn component(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    match rng.random_range(0..4) {
        // Half-pixel lattice values exercise exact ties and integer targets.
        0 => (rng.random_range(-2.0 * scale..=2.0 * scale) as f64).round() / 2.0,
        _ => rng.random_range(-scale..scale),
    }
}

fn vectors(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<V2> {
    (0..n).map(|_| [component(rng, scale), component(rng, scale)]).collect()
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        Self::random_sized(rng, h, w)
    }

    pub fn random_sized(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let n = h * w;
        let scale = [0.5, 2.0, 6.0, 60.0][rng.random_range(0..4)];
        let gt = vectors(rng, n, scale);
        let pred: Vec<V2> = gt
            .iter()
            .map(|g| {
                if rng.random_bool(0.2) {
                    *g
                } else {
                    [g[0] + component(rng, 2.0), g[1] + component(rng, 2.0)]
                }
            })
            .collect();
        let (fw, bw) = if rng.random_bool(0.5) {
            // Near-consistent pair: constant flow and its noisy negation.
            let c = [component(rng, 1.5), component(rng, 1.5)];
            let noise = rng.random_range(0.0..0.6);
            let bw = (0..n)
                .map(|_| [-c[0] + rng.random_range(-noise..=noise), -c[1] + rng.random_range(-noise..=noise)])
                .collect();
            (vec![c; n], bw)
        } else {
            (vectors(rng, n, 2.5), vectors(rng, n, 2.5))
        };
        Self::finish(rng, h, w, pred, gt, fw, bw)
    }

    fn finish(
        rng: &mut ChaCha8Rng,
        h: usize,
        w: usize,
        pred: Vec<V2>,
        gt: Vec<V2>,
        fw: Vec<V2>,
        bw: Vec<V2>,
    ) -> Self {
        let n = h * w;
        let p_valid = [1.0, 0.8, 0.3][rng.random_range(0..3)];
        let mut valid: Vec<bool> = (0..n).map(|_| rng.random_bool(p_valid)).collect();
        if !valid.iter().any(|&v| v) {
            valid[rng.random_range(0..n)] = true;
        }
        let hard = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let region = (0..n).map(|_| rng.random_bool(0.5)).collect();
        Self {
            h,
            w,
            pred,
            gt,
            fw,
            bw,
            valid,
            hard,
            region,
            alpha1: rng.random_range(0.0..4.0),
            beta1: rng.random_range(0.2..3.0),
            alpha2: rng.random_range(0.0..4.0),
            beta2: rng.random_range(0.2..3.0),
            gamma1: [0.01, rng.random_range(0.0..0.2)][rng.random_range(0..2)],
            gamma2: [0.5, rng.random_range(0.05..2.0)][rng.random_range(0..2)],
        }
    }

    pub fn grid2(&self, v: &[V2]) -> Grid2 {
        Grid2::new(self.h, self.w, v.to_vec()).unwrap()
    }

    pub fn grid1(&self, v: &[f64]) -> Grid1 {
        Grid1::new(self.h, self.w, v.to_vec()).unwrap()
    }

    pub fn mask(&self, v: &[bool]) -> BinaryMask {
        BinaryMask::new(self.h, self.w, v.to_vec()).unwrap()
    }

    pub fn spec(&self, mode: LossMode) -> WeightSpec {
        let mut spec = WeightSpec::defaults(Task::Flow, mode);
        spec.alpha1 = self.alpha1;
        spec.beta1 = self.beta1;
        spec.alpha2 = self.alpha2;
        spec.beta2 = self.beta2;
        spec.cycle.gamma1 = self.gamma1;
        spec.cycle.gamma2 = self.gamma2;
        spec
    }
}

/// Bilinear lookup with explicit corner weights. `None` outside the
/// pixel-centre hull.
pub fn sample(field: &[V2], h: usize, w: usize, x: f64, y: f64) -> Option<V2> {
    if x.is_nan() || y.is_nan() || x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let mut out = [0.0, 0.0];
    let (xf, yf) = (x.floor(), y.floor());
    for (cy, wy) in [(yf, 1.0 - (y - yf)), (yf + 1.0, y - yf)] {
        for (cx, wx) in [(xf, 1.0 - (x - xf)), (xf + 1.0, x - xf)] {
            let wgt = wx * wy;
            if wgt == 0.0 {
                continue;
            }
            let v = field[cy as usize * w + cx as usize];
            out[0] += wgt * v[0];
            out[1] += wgt * v[1];
        }
    }
    Some(out)
}

pub fn norm_sq(v: V2) -> f64 {
    v[0] * v[0] + v[1] * v[1]
}

/// `(numerator, denominator, target inside)` per pixel.
pub fn cycle(inst: &Instance, fw: &[V2], bw: &[V2]) -> Vec<(f64, f64, bool)> {
    let (h, w) = (inst.h, inst.w);
    (0..h * w)
        .map(|i| {
            let f = fw[i];
            let (r, c) = (i / w, i % w);
            match sample(bw, h, w, c as f64 + f[0], r as f64 + f[1]) {
                Some(b) => {
                    let num = norm_sq([f[0] + b[0], f[1] + b[1]]);
                    let den = inst.gamma1 * (norm_sq(f) + norm_sq(b)) + inst.gamma2;
                    (num, den, true)
                }
                None => (f64::NAN, f64::NAN, false),
            }
        })
        .collect()
}

pub fn occlusion(inst: &Instance, fw: &[V2], bw: &[V2]) -> Vec<bool> {
    cycle(inst, fw, bw).into_iter().map(|(n, d, ok)| ok && n < d).collect()
}

pub fn conf_oa(inst: &Instance, fw: &[V2], bw: &[V2]) -> Vec<f64> {
    cycle(inst, fw, bw)
        .into_iter()
        .map(|(n, d, ok)| if ok { (-n / d).exp() } else { 0.0 })
        .collect()
}

pub fn conf_db(pred: &[V2], gt: &[V2], valid: &[bool]) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .zip(valid)
        .map(|((p, g), &ok)| if ok { (-norm_sq([g[0] - p[0], g[1] - p[1]])).exp() } else { 0.0 })
        .collect()
}

/// Per-pixel weight of `mode` for `pred` against the instance's ground
/// truth, with `bw` as the reverse prediction.
pub fn weights(inst: &Instance, mode: LossMode, pred: &[V2], bw: &[V2]) -> Vec<f64> {
    let db = conf_db(pred, &inst.gt, &inst.valid);
    let oa = conf_oa(inst, pred, bw);
    let hard = occlusion(inst, pred, bw);
    (0..inst.h * inst.w)
        .map(|i| {
            let d = inst.alpha1 * (1.0 - db[i]).powf(inst.beta1);
            let o = inst.alpha2 * oa[i].powf(inst.beta2);
            let gate = if hard[i] { 1.0 } else { 0.0 };
            match mode {
                LossMode::PlainL1 => 1.0,
                LossMode::Db => 1.0 + d,
                LossMode::Oa => 1.0 + o,
                LossMode::Sum => 1.0 + d + o,
                LossMode::Multiplication => 1.0 + d * o,
                LossMode::Masking => 1.0 + gate * d,
                LossMode::MaskSum => 1.0 + gate * d + o,
            }
        })
        .collect()
}

pub fn weighted_l1(pred: &[V2], gt: &[V2], wts: &[f64], valid: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..pred.len() {
        if valid[i] {
            sum += wts[i] * ((gt[i][0] - pred[i][0]).abs() + (gt[i][1] - pred[i][1]).abs());
            n += 1;
        }
    }
    sum / n as f64
}

/// Flow metrics computed in one pass over the pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    pub epe: Option<f64>,
    pub px: [Option<f64>; 3],
    pub fl_all: Option<f64>,
    pub speed: [Option<f64>; 3],
    pub matched: Option<f64>,
    pub unmatched: Option<f64>,
    pub counts: [usize; 3],
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn pct(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| 100.0 * hits as f64 / n as f64)
}

pub fn flow_metrics(pred: &[V2], gt: &[V2], valid: &[bool], region: &[bool]) -> FlowMetrics {
    let mut all = Vec::new();
    let mut bins: [Vec<f64>; 3] = Default::default();
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    let mut px_hits = [0usize; 3];
    let mut fl_hits = 0;
    for i in 0..pred.len() {
        if !valid[i] {
            continue;
        }
        let e = norm_sq([pred[i][0] - gt[i][0], pred[i][1] - gt[i][1]]).sqrt();
        let mag = norm_sq(gt[i]).sqrt();
        all.push(e);
        for (k, t) in [1.0, 3.0, 5.0].into_iter().enumerate() {
            if e > t {
                px_hits[k] += 1;
            }
        }
        if e > 3.0 && e > 0.05 * mag {
            fl_hits += 1;
        }
        let bin = if mag < 10.0 {
            0
        } else if mag <= 40.0 {
            1
        } else {
            2
        };
        bins[bin].push(e);
        if region[i] {
            inside.push(e);
        } else {
            outside.push(e);
        }
    }
    let n = all.len();
    FlowMetrics {
        epe: mean(&all),
        px: px_hits.map(|k| pct(k, n)),
        fl_all: pct(fl_hits, n),
        speed: [mean(&bins[0]), mean(&bins[1]), mean(&bins[2])],
        matched: mean(&inside),
        unmatched: mean(&outside),
        counts: [n, inside.len(), outside.len()],
    }
}

/// Bad-pixel rates at 0.5/1/2/3 px and the mean absolute error.
pub fn stereo_metrics(pred: &[f64], gt: &[f64], valid: &[bool]) -> ([Option<f64>; 4], Option<f64>) {
    let errs: Vec<f64> = (0..pred.len()).filter(|&i| valid[i]).map(|i| (pred[i] - gt[i]).abs()).collect();
    let bad = [0.5, 1.0, 2.0, 3.0].map(|t| pct(errs.iter().filter(|&&e| e > t).count(), errs.len()));
    (bad, mean(&errs))
}

/// Compares every library routine against the references above on one
/// instance. Returns a description of each disagreement.
pub fn oracle_mismatches(inst: &Instance) -> Vec<String> {
    use flowconf::confidence::{confidence_db_flow, confidence_oa, occlusion_mask};
    use flowconf::losses::{weight_combine, weighted_l1 as lib_l1, weights_for_prediction};
    use flowconf::metrics::MetricReport;

    const TOL: f64 = 1e-12;
    let mut bad = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            bad.push(what);
        }
    };
    let (fw, bw, pred, gt) = (inst.grid2(&inst.fw), inst.grid2(&inst.bw), inst.grid2(&inst.pred), inst.grid2(&inst.gt));
    let valid = inst.mask(&inst.valid);
    let params = inst.spec(LossMode::Oa).cycle;

    let mask = occlusion_mask(&fw, &bw, &params).unwrap();
    check(mask.as_slice() == occlusion(inst, &inst.fw, &inst.bw).as_slice(), "occlusion mask".into());
    let oa = confidence_oa(&fw, &bw, &params).unwrap();
    let oa_ref = conf_oa(inst, &inst.fw, &inst.bw);
    for (i, (&a, &b)) in oa.as_slice().iter().zip(&oa_ref).enumerate() {
        check(close(a, b, TOL), format!("cycle confidence at {i}: {a} vs {b}"));
    }
    let db = confidence_db_flow(&pred, &gt, &valid).unwrap();
    let db_ref = conf_db(&inst.pred, &inst.gt, &inst.valid);
    for (i, (&a, &b)) in db.as_slice().iter().zip(&db_ref).enumerate() {
        check(close(a, b, TOL), format!("error confidence at {i}: {a} vs {b}"));
    }

    for mode in LossMode::ALL {
        let spec = inst.spec(mode);
        let w = weights_for_prediction(&spec, &pred, &gt, &valid, Some(&bw)).unwrap();
        let w_ref = weights(inst, mode, &inst.pred, &inst.bw);
        for (i, (&a, &b)) in w.as_slice().iter().zip(&w_ref).enumerate() {
            check(close(a, b, TOL), format!("{mode} weight at {i}: {a} vs {b}"));
        }
        let l = lib_l1(&pred, &gt, &w, &valid).unwrap().scalar;
        let l_ref = weighted_l1(&inst.pred, &inst.gt, &w_ref, &inst.valid);
        check(close(l, l_ref, TOL), format!("{mode} loss: {l} vs {l_ref}"));

        if mode.is_combination() {
            // Arbitrary maps and hard mask, not derived from predictions.
            let hard = inst.mask(&inst.hard);
            let oa_any = inst.grid1(&oa_ref);
            let w = weight_combine(&db, &oa_any, Some(&hard), &spec).unwrap();
            for (i, &a) in w.as_slice().iter().enumerate() {
                let d = inst.alpha1 * (1.0 - db_ref[i]).powf(inst.beta1);
                let o = inst.alpha2 * oa_ref[i].powf(inst.beta2);
                let g = if inst.hard[i] { 1.0 } else { 0.0 };
                let b = match mode {
                    LossMode::Sum => 1.0 + d + o,
                    LossMode::Multiplication => 1.0 + d * o,
                    LossMode::Masking => 1.0 + g * d,
                    _ => 1.0 + g * d + o,
                };
                check(close(a, b, TOL), format!("{mode} combined weight at {i}: {a} vs {b}"));
            }
        }
    }

    let region = inst.mask(&inst.region);
    let r = MetricReport::flow(&pred, &gt, &valid, Some(&region)).unwrap();
    let m = flow_metrics(&inst.pred, &inst.gt, &inst.valid, &inst.region);
    check(close_opt(r.epe, m.epe, TOL), format!("epe {:?} vs {:?}", r.epe, m.epe));
    for (k, t) in [1.0, 3.0, 5.0].into_iter().enumerate() {
        check(r.outlier(t) == m.px[k], format!("{t}px {:?} vs {:?}", r.outlier(t), m.px[k]));
    }
    check(r.fl_all == m.fl_all, format!("fl-all {:?} vs {:?}", r.fl_all, m.fl_all));
    for k in 0..3 {
        let ok = close_opt(r.speed_binned_epe[k], m.speed[k], TOL);
        check(ok, format!("speed bin {k}: {:?} vs {:?}", r.speed_binned_epe[k], m.speed[k]));
    }
    check(close_opt(r.matched_epe, m.matched, TOL), "matched epe".into());
    check(close_opt(r.unmatched_epe, m.unmatched, TOL), "unmatched epe".into());
    let c = r.pixel_counts;
    check([c.valid, c.matched, c.unmatched] == m.counts, "pixel counts".into());

    let dp: Vec<f64> = inst.pred.iter().map(|v| v[0]).collect();
    let dg: Vec<f64> = inst.gt.iter().map(|v| v[0]).collect();
    let s = MetricReport::stereo(&inst.grid1(&dp), &inst.grid1(&dg), &valid, None).unwrap();
    let (bad_ref, avg_ref) = stereo_metrics(&dp, &dg, &inst.valid);
    for (k, (_, v)) in s.bad_p.iter().enumerate() {
        check(*v == bad_ref[k], format!("bad-pixel rate {k}: {v:?} vs {:?}", bad_ref[k]));
    }
    check(close_opt(s.avg_err, avg_ref, TOL), "average error".into());
    bad
}

/// Central-difference check of the weighted-L1 gradient with frozen
/// weights. Returns the number of components checked and the failures.
pub fn gradient_mismatches(inst: &Instance, mode: LossMode, step: f64, rel_tol: f64) -> (usize, Vec<String>) {
    use flowconf::losses::{weighted_l1 as lib_l1, weights_for_prediction};

    let (bw, pred, gt) = (inst.grid2(&inst.bw), inst.grid2(&inst.pred), inst.grid2(&inst.gt));
    let valid = inst.mask(&inst.valid);
    let spec = inst.spec(mode);
    let w = weights_for_prediction(&spec, &pred, &gt, &valid, Some(&bw)).unwrap();
    let result = lib_l1(&pred, &gt, &w, &valid).unwrap();
    let n = result.valid_pixels as f64;
    let loss_at = |i: usize, k: usize, delta: f64| {
        let mut p = inst.pred.clone();
        p[i][k] += delta;
        lib_l1(&inst.grid2(&p), &gt, &w, &valid).unwrap().scalar
    };
    let mut checked = 0;
    let mut bad = Vec::new();
    for i in 0..inst.pred.len() {
        for k in 0..2 {
            let analytic = result.grad.as_slice()[i][k] / n;
            if !inst.valid[i] {
                if analytic != 0.0 {
                    bad.push(format!("{mode}: invalid pixel {i} has gradient {analytic}"));
                }
                continue;
            }
            if (inst.gt[i][k] - inst.pred[i][k]).abs() < 0.1 {
                continue;
            }
            let fd = (loss_at(i, k, step) - loss_at(i, k, -step)) / (2.0 * step);
            checked += 1;
            let rel = (fd - analytic).abs() / analytic.abs();
            if rel.is_nan() || rel > rel_tol {
                bad.push(format!("{mode}: pixel {i} component {k}: fd {fd} vs analytic {analytic}"));
            }
        }
    }
    (checked, bad)
}

/// The `key = value` table written by `scripts/reference_values.py`.
pub fn reference_table() -> std::collections::HashMap<String, f64> {
    include_str!("../data/reference_values.txt")
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l.split_once('=').expect("key = value");
            (k.trim().to_string(), v.trim().parse().expect("number"))
        })
        .collect()
}
