//! Desk-scale training demonstration.
//!
//! A synthetic scene is a square moving over a moving background. Background
//! pixels that the square covers in the second frame have no correspondence;
//! their training labels are corrupted with Gaussian noise to model
//! unreliable supervision where matching is ill-posed. A low-capacity
//! [`BlockFlowModel`] (one 2-vector per block, bilinearly upsampled) is fitted
//! by plain gradient descent under a chosen loss mode, and the fit is scored
//! against the clean flow, split into matched and occluded regions.
//!
//! Two independent parameter sets predict the forward and backward flow so
//! that cycle-consistency confidence can be built from the current
//! predictions at every step. Weight maps are constants for the gradient.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::confidence::{confidence_db_flow, confidence_oa};
use crate::error::{invalid, Error, Result};
use crate::fields::{BinaryMask, Grid, Grid1, Grid2, Vec2};
use crate::io::format_metric;
use crate::losses::{weighted_l1, weights_for_prediction, LossMode, WeightSpec};
use crate::metrics::MetricReport;

/// Parameters of one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub square_size: usize,
    /// Displacement of the square between the frames, `[u, v]`.
    pub square_motion: Vec2,
    pub background_motion: Vec2,
    /// Standard deviation of the label noise on occluded pixels, in pixels.
    pub occluded_label_noise_sigma: f64,
    /// Drives the square placement and the label noise.
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            square_size: 20,
            square_motion: [4.0, 0.0],
            background_motion: [0.0, 0.0],
            occluded_label_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// A scene with seed-drawn size and integer motions: square size in
    /// `16..=24`, square motion components in `-6..=6`, background motion
    /// components in `-1..=1`, and at least 3 px of relative motion along
    /// one axis.
    pub fn random(seed: u64, height: usize, width: usize, noise_sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_5ce0_5ce0_5ce0);
        let square_size = rng.random_range(16..=24usize).min(height.min(width) / 2);
        loop {
            let sm = [rng.random_range(-6..=6i32) as f64, rng.random_range(-6..=6i32) as f64];
            let bg = [rng.random_range(-1..=1i32) as f64, rng.random_range(-1..=1i32) as f64];
            let rel = (sm[0] - bg[0]).abs().max((sm[1] - bg[1]).abs());
            if rel >= 3.0 {
                return Self {
                    height,
                    width,
                    square_size,
                    square_motion: sm,
                    background_motion: bg,
                    occluded_label_noise_sigma: noise_sigma,
                    seed,
                };
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("height/width", "must be positive"));
        }
        if self.square_size == 0 {
            return Err(invalid("square_size", "must be positive"));
        }
        if !(self.occluded_label_noise_sigma.is_finite() && self.occluded_label_noise_sigma >= 0.0) {
            return Err(invalid("occluded_label_noise_sigma", "must be finite and >= 0"));
        }
        if !self.square_motion.iter().chain(&self.background_motion).all(|v| v.is_finite()) {
            return Err(invalid("motion", "must be finite"));
        }
        self.origin_range(0)?;
        self.origin_range(1)?;
        Ok(())
    }

    /// Integer range of the square's top-left coordinate along `axis`
    /// (0 = x, 1 = y) such that it stays inside the frame in both frames.
    fn origin_range(&self, axis: usize) -> Result<(i64, i64)> {
        let extent = if axis == 0 { self.width } else { self.height } as f64;
        let s = self.square_size as f64;
        let m = self.square_motion[axis];
        let lo = (-m).max(0.0).ceil();
        let hi = (extent - s - m.max(0.0)).floor();
        if lo > hi {
            return Err(invalid(
                "square_size",
                format!("a {}-px square moving by {m} does not fit in {extent} px", self.square_size),
            ));
        }
        Ok((lo as i64, hi as i64))
    }
}

/// A generated scene. Occlusion masks are `true` on occluded pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Top-left corner of the square in the first frame, `[x, y]`.
    pub square_origin: [f64; 2],
    pub gt_forward: Grid2,
    pub gt_backward: Grid2,
    /// First-frame background pixels covered by the square in frame two.
    pub occlusion: BinaryMask,
    /// Second-frame background pixels that were hidden by the square in
    /// frame one.
    pub occlusion_backward: BinaryMask,
    pub train_labels: Grid2,
    pub train_labels_backward: Grid2,
    pub valid: BinaryMask,
}

impl Scene {
    fn in_square(&self, x: f64, y: f64, frame: usize) -> bool {
        let s = self.spec.square_size as f64;
        let (mut x0, mut y0) = (self.square_origin[0], self.square_origin[1]);
        if frame == 2 {
            x0 += self.spec.square_motion[0];
            y0 += self.spec.square_motion[1];
        }
        x >= x0 && x < x0 + s && y >= y0 && y < y0 + s
    }

    /// Analytic forward flow at a continuous first-frame position.
    pub fn forward_at(&self, x: f64, y: f64) -> Vec2 {
        if self.in_square(x, y, 1) {
            self.spec.square_motion
        } else {
            self.spec.background_motion
        }
    }

    /// Analytic backward flow at a continuous second-frame position.
    pub fn backward_at(&self, x: f64, y: f64) -> Vec2 {
        let m = if self.in_square(x, y, 2) {
            self.spec.square_motion
        } else {
            self.spec.background_motion
        };
        [-m[0], -m[1]]
    }

    /// Matched (non-occluded) first-frame pixels.
    pub fn matched(&self) -> BinaryMask {
        self.occlusion.not()
    }
}

pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (x_lo, x_hi) = spec.origin_range(0)?;
    let (y_lo, y_hi) = spec.origin_range(1)?;
    let origin = [rng.random_range(x_lo..=x_hi) as f64, rng.random_range(y_lo..=y_hi) as f64];

    let (h, w) = (spec.height, spec.width);
    let zero = Grid2::filled(h, w, [0.0, 0.0])?;
    let none = BinaryMask::filled(h, w, false)?;
    let mut scene = Scene {
        spec: spec.clone(),
        square_origin: origin,
        gt_forward: zero.clone(),
        gt_backward: zero.clone(),
        occlusion: none.clone(),
        occlusion_backward: none,
        train_labels: zero.clone(),
        train_labels_backward: zero,
        valid: BinaryMask::all(h, w)?,
    };

    let bg = spec.background_motion;
    let s = &scene;
    let gt_forward = Grid2::from_fn(h, w, |r, c| s.forward_at(c as f64, r as f64))?;
    let gt_backward = Grid2::from_fn(h, w, |r, c| s.backward_at(c as f64, r as f64))?;
    let occlusion = BinaryMask::from_fn(h, w, |r, c| {
        let (x, y) = (c as f64, r as f64);
        !s.in_square(x, y, 1) && s.in_square(x + bg[0], y + bg[1], 2)
    })?;
    let occlusion_backward = BinaryMask::from_fn(h, w, |r, c| {
        let (x, y) = (c as f64, r as f64);
        !s.in_square(x, y, 2) && s.in_square(x - bg[0], y - bg[1], 1)
    })?;

    let sigma = spec.occluded_label_noise_sigma;
    let train_labels = noisy_labels(&gt_forward, &occlusion, sigma, &mut rng)?;
    let train_labels_backward = noisy_labels(&gt_backward, &occlusion_backward, sigma, &mut rng)?;

    scene.gt_forward = gt_forward;
    scene.gt_backward = gt_backward;
    scene.occlusion = occlusion;
    scene.occlusion_backward = occlusion_backward;
    scene.train_labels = train_labels;
    scene.train_labels_backward = train_labels_backward;
    Ok(scene)
}

fn noisy_labels(clean: &Grid2, occluded: &BinaryMask, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Grid2> {
    if sigma == 0.0 {
        return Ok(clean.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid("occluded_label_noise_sigma", e.to_string()))?;
    let data = clean
        .as_slice()
        .iter()
        .zip(occluded.as_slice())
        .map(|(&[u, v], &occ)| {
            if occ {
                [u + normal.sample(rng), v + normal.sample(rng)]
            } else {
                [u, v]
            }
        })
        .collect();
    Grid2::new(clean.height(), clean.width(), data)
}

/// Scenes for every seed: drawn with [`SceneSpec::random`] when `randomize`
/// is set, otherwise `base` with the seed replaced.
pub fn synth_scenes(base: &SceneSpec, seeds: &[u64], randomize: bool) -> Result<Vec<Scene>> {
    seeds
        .iter()
        .map(|&seed| {
            let spec = if randomize {
                SceneSpec::random(seed, base.height, base.width, base.occluded_label_noise_sigma)
            } else {
                SceneSpec { seed, ..base.clone() }
            };
            synth_scene(&spec)
        })
        .collect()
}

/// Per-axis upsampling stencil: for every pixel, the two coarse indices
/// and the weight of the second one.
#[derive(Debug, Clone, PartialEq)]
struct Stencil(Vec<(usize, usize, f64)>);

impl Stencil {
    /// Block centres sit at `(i + 0.5) * block - 0.5`; pixels beyond the
    /// outermost centres clamp to the edge blocks.
    fn new(pixels: usize, blocks: usize, block: usize) -> Self {
        Self(
            (0..pixels)
                .map(|p| {
                    let g = ((p as f64 + 0.5) / block as f64 - 0.5).clamp(0.0, (blocks - 1) as f64);
                    let i0 = (g.floor() as usize).min(blocks - 1);
                    let i1 = (i0 + 1).min(blocks - 1);
                    (i0, i1, g - i0 as f64)
                })
                .collect(),
        )
    }
}

/// Flow predictor with one 2-vector parameter per `block_size` square block,
/// bilinearly upsampled to full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFlowModel {
    block_size: usize,
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
    params: Vec<Vec2>,
    x_stencil: Stencil,
    y_stencil: Stencil,
}

impl BlockFlowModel {
    /// Zero-initialised model. `block_size` must be at least 2 and divide
    /// both dimensions.
    pub fn new(height: usize, width: usize, block_size: usize) -> Result<Self> {
        if block_size < 2 {
            return Err(invalid("block_size", "must be at least 2"));
        }
        if height == 0 || width == 0 || !height.is_multiple_of(block_size) || !width.is_multiple_of(block_size) {
            return Err(invalid(
                "block_size",
                format!("{block_size} does not divide {height}x{width}"),
            ));
        }
        let (rows, cols) = (height / block_size, width / block_size);
        Ok(Self {
            block_size,
            height,
            width,
            rows,
            cols,
            params: vec![[0.0, 0.0]; rows * cols],
            x_stencil: Stencil::new(width, cols, block_size),
            y_stencil: Stencil::new(height, rows, block_size),
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn params(&self) -> &[Vec2] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn predict(&self) -> Grid2 {
        let mut data = Vec::with_capacity(self.height * self.width);
        for &(r0, r1, ty) in &self.y_stencil.0 {
            for &(c0, c1, tx) in &self.x_stencil.0 {
                let p = |r: usize, c: usize| self.params[r * self.cols + c];
                let (a, b, c, d) = (p(r0, c0), p(r0, c1), p(r1, c0), p(r1, c1));
                data.push([0, 1].map(|i| {
                    (1.0 - ty) * ((1.0 - tx) * a[i] + tx * b[i]) + ty * ((1.0 - tx) * c[i] + tx * d[i])
                }));
            }
        }
        Grid::from_parts(self.height, self.width, data)
    }

    /// Pulls a per-pixel gradient back onto the block parameters.
    pub fn backprop(&self, pixel_grad: &Grid2) -> Vec<Vec2> {
        let mut out = vec![[0.0, 0.0]; self.params.len()];
        let mut add = |r: usize, c: usize, wgt: f64, g: Vec2| {
            let slot = &mut out[r * self.cols + c];
            slot[0] += wgt * g[0];
            slot[1] += wgt * g[1];
        };
        for (y, &(r0, r1, ty)) in self.y_stencil.0.iter().enumerate() {
            for (x, &(c0, c1, tx)) in self.x_stencil.0.iter().enumerate() {
                let g = pixel_grad.get(y, x);
                add(r0, c0, (1.0 - ty) * (1.0 - tx), g);
                add(r0, c1, (1.0 - ty) * tx, g);
                add(r1, c0, ty * (1.0 - tx), g);
                add(r1, c1, ty * tx, g);
            }
        }
        out
    }

    fn step(&mut self, grad: &[Vec2], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            p[0] -= lr * g[0];
            p[1] -= lr * g[1];
        }
    }
}

/// Optimisation settings of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub loss_spec: WeightSpec,
    /// Scene seeds; see [`synth_scenes`].
    pub seeds: Vec<u64>,
    /// Rebuild the weight maps every this many steps.
    pub recompute_confidence_every: usize,
    /// Record confidence snapshots every this many steps.
    pub snapshot_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(loss_spec: WeightSpec) -> Self {
        Self {
            steps: 500,
            learning_rate: 0.05,
            loss_spec,
            seeds: vec![0],
            recompute_confidence_every: 1,
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if self.recompute_confidence_every == 0 {
            return Err(invalid("recompute_confidence_every", "must be at least 1"));
        }
        if self.snapshot_every == Some(0) {
            return Err(invalid("snapshot_every", "must be at least 1"));
        }
        self.loss_spec.validate()
    }

    pub fn label(&self) -> &'static str {
        self.loss_spec.mode.name()
    }
}

/// Confidence maps of the forward prediction at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub confidence_db: Grid1,
    pub confidence_oa: Grid1,
}

/// Outcome of training on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRun {
    pub seed: u64,
    /// Forward prediction scored against the clean forward flow, split by
    /// the analytic occlusion mask.
    pub metrics: MetricReport,
    /// Sum of the forward and backward loss scalars before every step.
    pub loss_trajectory: Vec<f64>,
    pub final_forward: Grid2,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub label: String,
    pub runs: Vec<SceneRun>,
}

/// Fits a fresh copy of `model` to every scene independently.
pub fn train(scenes: &[Scene], model: &BlockFlowModel, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let runs = scenes
        .iter()
        .map(|scene| train_scene(scene, model, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainReport {
        label: config.label().to_string(),
        runs,
    })
}

fn train_scene(scene: &Scene, model: &BlockFlowModel, config: &TrainConfig) -> Result<SceneRun> {
    let shape = scene.gt_forward.shape();
    if shape != (model.height, model.width) {
        return Err(Error::DimensionMismatch {
            what: "scene vs model",
            expected: (model.height, model.width),
            actual: shape,
        });
    }
    let spec = &config.loss_spec;
    let mut forward = model.clone();
    let mut backward = model.clone();
    // The objective is the mean loss times the number of blocks, so every
    // block sees an O(1) gradient regardless of resolution.
    let norm = 1.0 / (model.block_size * model.block_size) as f64;
    let mut trajectory = Vec::with_capacity(config.steps);
    let mut snapshots = Vec::new();
    let mut weights: Option<(Grid1, Grid1)> = None;

    for step in 0..config.steps {
        let pred_fw = forward.predict();
        let pred_bw = backward.predict();
        if step % config.recompute_confidence_every == 0 || weights.is_none() {
            let w_fw = weights_for_prediction(spec, &pred_fw, &scene.train_labels, &scene.valid, Some(&pred_bw))?;
            let w_bw = weights_for_prediction(
                spec,
                &pred_bw,
                &scene.train_labels_backward,
                &scene.valid,
                Some(&pred_fw),
            )?;
            weights = Some((w_fw, w_bw));
        }
        if let Some(k) = config.snapshot_every {
            if step % k == 0 {
                snapshots.push(Snapshot {
                    step,
                    confidence_db: confidence_db_flow(&pred_fw, &scene.train_labels, &scene.valid)?,
                    confidence_oa: confidence_oa(&pred_fw, &pred_bw, &spec.cycle)?,
                });
            }
        }
        let (w_fw, w_bw) = weights.as_ref().expect("weights initialised above");
        let loss_fw = weighted_l1(&pred_fw, &scene.train_labels, w_fw, &scene.valid)?;
        let loss_bw = weighted_l1(&pred_bw, &scene.train_labels_backward, w_bw, &scene.valid)?;
        let total = loss_fw.scalar + loss_bw.scalar;
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        trajectory.push(total);

        let scale = |g: Vec<Vec2>| -> Vec<Vec2> { g.into_iter().map(|[a, b]| [a * norm, b * norm]).collect() };
        let g_fw = scale(forward.backprop(&loss_fw.grad));
        let g_bw = scale(backward.backprop(&loss_bw.grad));
        forward.step(&g_fw, config.learning_rate);
        backward.step(&g_bw, config.learning_rate);
    }

    let final_forward = forward.predict();
    if final_forward.as_slice().iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
        return Err(Error::Diverged {
            step: config.steps,
            loss: f64::NAN,
        });
    }
    let matched = scene.matched();
    let metrics = MetricReport::flow(&final_forward, &scene.gt_forward, &scene.valid, Some(&matched))?;
    Ok(SceneRun {
        seed: scene.spec.seed,
        metrics,
        loss_trajectory: trajectory,
        final_forward,
        snapshots,
    })
}

/// Averages of one configuration over all scenes. `None` when no scene has
/// the metric (for example an empty occluded region everywhere).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub runs: usize,
    pub matched_epe: Option<f64>,
    pub unmatched_epe: Option<f64>,
    pub epe: Option<f64>,
    pub px3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<TrainReport>,
}

fn mean_available(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Trains every configuration on the same scenes.
pub fn compare_runs(configs: &[TrainConfig], scenes: &[Scene], model: &BlockFlowModel) -> Result<Comparison> {
    let reports = configs
        .iter()
        .map(|c| train(scenes, model, c))
        .collect::<Result<Vec<_>>>()?;
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            label: r.label.clone(),
            runs: r.runs.len(),
            matched_epe: mean_available(r.runs.iter().map(|s| s.metrics.matched_epe)),
            unmatched_epe: mean_available(r.runs.iter().map(|s| s.metrics.unmatched_epe)),
            epe: mean_available(r.runs.iter().map(|s| s.metrics.epe)),
            px3: mean_available(r.runs.iter().map(|s| s.metrics.outlier(3.0))),
        })
        .collect();
    Ok(Comparison { rows, reports })
}

impl Comparison {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "mode,runs,matched_epe,unmatched_epe,epe,px3")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.label,
                r.runs,
                format_metric(r.matched_epe),
                format_metric(r.unmatched_epe),
                format_metric(r.epe),
                format_metric(r.px3)
            )?;
        }
        Ok(())
    }

    /// One row per (configuration, scene).
    pub fn write_runs_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "mode,seed,matched_epe,unmatched_epe,epe,px3,final_loss")?;
        for report in &self.reports {
            for run in &report.runs {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    report.label,
                    run.seed,
                    format_metric(run.metrics.matched_epe),
                    format_metric(run.metrics.unmatched_epe),
                    format_metric(run.metrics.epe),
                    format_metric(run.metrics.outlier(3.0)),
                    format_metric(run.loss_trajectory.last().copied())
                )?;
            }
        }
        Ok(())
    }
}

/// One config per mode, identical otherwise.
pub fn configs_for_modes(base: &TrainConfig, modes: &[LossMode]) -> Vec<TrainConfig> {
    modes
        .iter()
        .map(|&mode| TrainConfig {
            loss_spec: WeightSpec { mode, ..base.loss_spec },
            ..base.clone()
        })
        .collect()
}
