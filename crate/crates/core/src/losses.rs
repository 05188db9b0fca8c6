//! Confidence-weighted L1 losses.
//!
//! Every loss here has the form `mean_valid( w(x) * |gt(x) - pred(x)|_1 )`
//! where the per-pixel weight `w(x) >= 1` is built from the confidence maps
//! of [`crate::confidence`]:
//!
//! | mode             | weight                                                    |
//! |------------------|-----------------------------------------------------------|
//! | `plain_l1`       | `1`                                                       |
//! | `db`             | `1 + a1 (1 - M_db)^b1`                                    |
//! | `oa`             | `1 + a2 M_oa^b2`                                          |
//! | `sum`            | `1 + a1 (1 - M_db)^b1 + a2 M_oa^b2`                       |
//! | `multiplication` | `1 + a1 (1 - M_db)^b1 * a2 M_oa^b2`                       |
//! | `masking`        | `1 + H a1 (1 - M_db)^b1`                                  |
//! | `mask_sum`       | `1 + H a1 (1 - M_db)^b1 + a2 M_oa^b2`                     |
//!
//! `H` is the hard occlusion mask (1 on matched pixels). Weights are treated
//! as constants: gradients flow through the residual only.

use std::fmt;
use std::str::FromStr;

use crate::confidence::{confidence_db, Correspondence, CycleParams};
use crate::error::{invalid, Error, Result};
use crate::fields::{BinaryMask, ConfidenceMap, Grid, Grid1, Value};

/// Which loss weighting to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    PlainL1,
    Db,
    Oa,
    Sum,
    Multiplication,
    Masking,
    MaskSum,
}

impl LossMode {
    pub const ALL: [LossMode; 7] = [
        LossMode::PlainL1,
        LossMode::Db,
        LossMode::Oa,
        LossMode::Sum,
        LossMode::Multiplication,
        LossMode::Masking,
        LossMode::MaskSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::PlainL1 => "plain_l1",
            LossMode::Db => "db",
            LossMode::Oa => "oa",
            LossMode::Sum => "sum",
            LossMode::Multiplication => "multiplication",
            LossMode::Masking => "masking",
            LossMode::MaskSum => "mask_sum",
        }
    }

    pub fn needs_db(self) -> bool {
        !matches!(self, LossMode::PlainL1 | LossMode::Oa)
    }

    pub fn needs_oa(self) -> bool {
        matches!(
            self,
            LossMode::Oa | LossMode::Sum | LossMode::Multiplication | LossMode::MaskSum
        )
    }

    pub fn needs_hard_mask(self) -> bool {
        matches!(self, LossMode::Masking | LossMode::MaskSum)
    }

    /// Whether a backward prediction is needed to build the weights.
    pub fn needs_backward(self) -> bool {
        self.needs_oa() || self.needs_hard_mask()
    }

    pub fn is_combination(self) -> bool {
        matches!(
            self,
            LossMode::Sum | LossMode::Multiplication | LossMode::Masking | LossMode::MaskSum
        )
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == normalized)
            .or(match normalized.as_str() {
                "l1" | "baseline" => Some(LossMode::PlainL1),
                "mul" => Some(LossMode::Multiplication),
                "mask" => Some(LossMode::Masking),
                _ => None,
            })
            .ok_or_else(|| invalid("mode", format!("unknown loss mode `{s}`")))
    }
}

/// Dense correspondence task; selects the default hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Flow,
    Stereo,
}

impl Task {
    /// `(alpha, beta)` of the standalone error-based weighting.
    pub fn db_defaults(self) -> (f64, f64) {
        match self {
            Task::Flow => (2.0, 0.5),
            Task::Stereo => (2.0, 1.0),
        }
    }

    /// `(alpha, beta)` of the standalone cycle-consistency weighting.
    pub fn oa_defaults(self) -> (f64, f64) {
        match self {
            Task::Flow => (2.0, 1.0),
            Task::Stereo => (1.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Flow => "flow",
            Task::Stereo => "stereo",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flow" => Ok(Task::Flow),
            "stereo" => Ok(Task::Stereo),
            other => Err(invalid("task", format!("unknown task `{other}`"))),
        }
    }
}

/// Loss mode plus its hyperparameters. `alpha1`/`beta1` drive the
/// error-based term and `alpha2`/`beta2` the cycle-consistency term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub mode: LossMode,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub cycle: CycleParams,
}

impl WeightSpec {
    /// Default hyperparameters for `mode` on `task`.
    pub fn defaults(task: Task, mode: LossMode) -> Self {
        let (alpha1, beta1) = task.db_defaults();
        let (alpha2, beta2) = task.oa_defaults();
        Self {
            mode,
            alpha1,
            beta1,
            alpha2,
            beta2,
            cycle: CycleParams::default(),
        }
    }

    /// Same spec with every alpha set to zero.
    pub fn with_zero_alpha(mut self) -> Self {
        self.alpha1 = 0.0;
        self.alpha2 = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == LossMode::PlainL1 {
            return Ok(());
        }
        if self.mode.needs_db() {
            check_alpha_beta("alpha1", self.alpha1, "beta1", self.beta1)?;
        }
        if self.mode.needs_oa() {
            check_alpha_beta("alpha2", self.alpha2, "beta2", self.beta2)?;
        }
        if self.mode.needs_backward() {
            self.cycle.validate()?;
        }
        Ok(())
    }
}

fn check_alpha_beta(an: &'static str, alpha: f64, bn: &'static str, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(invalid(an, format!("must be finite and >= 0, got {alpha}")));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid(bn, format!("must be finite and > 0, got {beta}")));
    }
    Ok(())
}

fn check_confidence(m: &ConfidenceMap) -> Result<()> {
    match m.iter().find(|(_, _, v)| !(0.0..=1.0).contains(v)) {
        Some((row, col, value)) => Err(Error::ConfidenceOutOfRange { row, col, value }),
        None => Ok(()),
    }
}

/// Error-based weight `1 + alpha (1 - M)^beta`.
pub fn weight_db(m: &ConfidenceMap, alpha: f64, beta: f64) -> Result<Grid1> {
    check_alpha_beta("alpha", alpha, "beta", beta)?;
    check_confidence(m)?;
    Ok(m.map_unchecked(|&c| 1.0 + alpha * (1.0 - c).powf(beta)))
}

/// Cycle-consistency weight `1 + alpha M^beta`.
pub fn weight_oa(m: &ConfidenceMap, alpha: f64, beta: f64) -> Result<Grid1> {
    check_alpha_beta("alpha", alpha, "beta", beta)?;
    check_confidence(m)?;
    Ok(m.map_unchecked(|&c| 1.0 + alpha * c.powf(beta)))
}

/// Weights of the four combined modes. `hard_mask` is required by
/// `masking` and `mask_sum` and ignored otherwise.
pub fn weight_combine(
    m_db: &ConfidenceMap,
    m_oa: &ConfidenceMap,
    hard_mask: Option<&BinaryMask>,
    spec: &WeightSpec,
) -> Result<Grid1> {
    if !spec.mode.is_combination() {
        return Err(invalid(
            "mode",
            format!("`{}` is not a combination mode", spec.mode),
        ));
    }
    spec.validate()?;
    m_db.ensure_same_shape(m_oa, "cycle confidence")?;
    check_confidence(m_db)?;
    check_confidence(m_oa)?;
    let hard = if spec.mode.needs_hard_mask() {
        let h = hard_mask.ok_or(Error::MissingInput {
            mode: spec.mode.name(),
            missing: "hard occlusion mask",
        })?;
        m_db.ensure_same_shape(h, "hard occlusion mask")?;
        Some(h)
    } else {
        None
    };

    let (rows, cols) = m_db.shape();
    let mut data = Vec::with_capacity(rows * cols);
    for (i, (&db, &oa)) in m_db.as_slice().iter().zip(m_oa.as_slice()).enumerate() {
        let hard_term = spec.alpha1 * (1.0 - db).powf(spec.beta1);
        let soft_term = spec.alpha2 * oa.powf(spec.beta2);
        let gate = |h: Option<&BinaryMask>| if h.is_some_and(|h| h.as_slice()[i]) { 1.0 } else { 0.0 };
        let w = match spec.mode {
            LossMode::Sum => 1.0 + hard_term + soft_term,
            LossMode::Multiplication => 1.0 + hard_term * soft_term,
            LossMode::Masking => 1.0 + gate(hard) * hard_term,
            LossMode::MaskSum => 1.0 + gate(hard) * hard_term + soft_term,
            _ => unreachable!(),
        };
        data.push(w);
    }
    Ok(Grid::from_parts(rows, cols, data))
}

/// Confidence inputs consumed by [`weight_map`]. Only the maps the mode
/// needs have to be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConfidenceInputs<'a> {
    pub db: Option<&'a ConfidenceMap>,
    pub oa: Option<&'a ConfidenceMap>,
    pub hard_mask: Option<&'a BinaryMask>,
}

fn require<'a>(
    mode: LossMode,
    shape: (usize, usize),
    m: Option<&'a ConfidenceMap>,
    missing: &'static str,
) -> Result<&'a ConfidenceMap> {
    let m = m.ok_or(Error::MissingInput {
        mode: mode.name(),
        missing,
    })?;
    if m.shape() != shape {
        return Err(Error::DimensionMismatch {
            what: missing,
            expected: shape,
            actual: m.shape(),
        });
    }
    Ok(m)
}

/// Builds the weight map of any mode on a `shape`-sized grid.
pub fn weight_map(spec: &WeightSpec, shape: (usize, usize), inputs: &ConfidenceInputs<'_>) -> Result<Grid1> {
    spec.validate()?;
    let need = |m, missing| require(spec.mode, shape, m, missing);
    match spec.mode {
        LossMode::PlainL1 => Grid1::filled(shape.0, shape.1, 1.0),
        LossMode::Db => weight_db(need(inputs.db, "error-based confidence")?, spec.alpha1, spec.beta1),
        LossMode::Oa => weight_oa(need(inputs.oa, "cycle confidence")?, spec.alpha2, spec.beta2),
        LossMode::Masking => {
            // The cycle map is not used by this mode; the mask gates the DB term.
            let db = need(inputs.db, "error-based confidence")?;
            weight_combine(db, db, inputs.hard_mask, spec)
        }
        _ => weight_combine(
            need(inputs.db, "error-based confidence")?,
            need(inputs.oa, "cycle confidence")?,
            inputs.hard_mask,
            spec,
        ),
    }
}

/// Builds the confidence maps a mode needs from a prediction and returns its
/// weight map.
///
/// `backward` is the reverse prediction (backward flow, or the restored
/// right-view disparity); it is required by every mode that uses cycle
/// consistency.
pub fn weights_for_prediction<T: Correspondence>(
    spec: &WeightSpec,
    pred: &Grid<T>,
    gt: &Grid<T>,
    valid: &BinaryMask,
    backward: Option<&Grid<T>>,
) -> Result<Grid1> {
    spec.validate()?;
    pred.ensure_same_shape(gt, "ground truth")?;
    pred.ensure_same_shape(valid, "validity mask")?;
    let db = if spec.mode.needs_db() {
        Some(confidence_db(pred, gt, valid)?)
    } else {
        None
    };
    let backward = if spec.mode.needs_backward() {
        let bw = backward.ok_or(Error::MissingInput {
            mode: spec.mode.name(),
            missing: "backward prediction",
        })?;
        pred.ensure_same_shape(bw, "backward prediction")?;
        Some(bw)
    } else {
        None
    };
    let oa = match backward {
        Some(bw) if spec.mode.needs_oa() => Some(T::confidence_cycle(pred, bw, &spec.cycle)?),
        _ => None,
    };
    let hard = match backward {
        Some(bw) if spec.mode.needs_hard_mask() => Some(T::occlusion(pred, bw, &spec.cycle)?),
        _ => None,
    };
    weight_map(
        spec,
        pred.shape(),
        &ConfidenceInputs {
            db: db.as_ref(),
            oa: oa.as_ref(),
            hard_mask: hard.as_ref(),
        },
    )
}

/// Output of [`weighted_l1`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<T> {
    /// Mean of `loss_map` over valid pixels.
    pub scalar: f64,
    pub weight_map: Grid1,
    /// `w(x) * |gt(x) - pred(x)|_1` on valid pixels, 0 elsewhere.
    pub loss_map: Grid1,
    /// Gradient of each pixel's loss with respect to its prediction,
    /// `-w(x) sign(gt(x) - pred(x))` with `sign(0) = 0`. Divide by
    /// `valid_pixels` for the gradient of `scalar`.
    pub grad: Grid<T>,
    pub valid_pixels: usize,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weighted L1 loss and its gradient with respect to `pred`.
pub fn weighted_l1<T: Value>(
    pred: &Grid<T>,
    gt: &Grid<T>,
    weights: &Grid1,
    valid: &BinaryMask,
) -> Result<LossResult<T>> {
    pred.ensure_same_shape(gt, "ground truth")?;
    pred.ensure_same_shape(weights, "weight map")?;
    pred.ensure_same_shape(valid, "validity mask")?;
    let valid_pixels = valid.count();
    if valid_pixels == 0 {
        return Err(Error::NoValidPixels);
    }
    let (h, w) = pred.shape();
    let mut loss = Vec::with_capacity(h * w);
    let mut grad = Vec::with_capacity(h * w);
    let mut total = 0.0;
    for (((p, g), &wt), &ok) in pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .zip(weights.as_slice())
        .zip(valid.as_slice())
    {
        if ok {
            let residual = g.sub(*p);
            let l = wt * residual.l1();
            total += l;
            loss.push(l);
            grad.push(T::from_fn(|i| -wt * sign(residual.component(i))));
        } else {
            loss.push(0.0);
            grad.push(T::zero());
        }
    }
    Ok(LossResult {
        scalar: total / valid_pixels as f64,
        weight_map: weights.clone(),
        loss_map: Grid::from_parts(h, w, loss),
        grad: Grid::from_parts(h, w, grad),
        valid_pixels,
    })
}

/// Discount of the sequence accumulation over refinement iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceParams {
    pub gamma_seq: f64,
}

impl Default for SequenceParams {
    fn default() -> Self {
        Self { gamma_seq: 0.8 }
    }
}

impl SequenceParams {
    pub fn new(gamma_seq: f64) -> Result<Self> {
        if !(gamma_seq > 0.0 && gamma_seq <= 1.0) {
            return Err(invalid("gamma_seq", format!("must lie in (0, 1], got {gamma_seq}")));
        }
        Ok(Self { gamma_seq })
    }
}

/// `sum_i gamma^(N - i) * scalars[i - 1]`; the last entry is undiscounted.
pub fn discounted_total(scalars: &[f64], seq: &SequenceParams) -> f64 {
    let n = scalars.len();
    scalars
        .iter()
        .enumerate()
        .map(|(i, s)| seq.gamma_seq.powi((n - 1 - i) as i32) * s)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLoss<T> {
    pub total: f64,
    pub per_iteration: Vec<LossResult<T>>,
}

/// Loss accumulated over a sequence of refinement predictions, earliest
/// first. Confidence maps are rebuilt from every iteration's prediction (and
/// its matching backward prediction, when the mode needs one).
pub fn sequence_loss<T: Correspondence>(
    preds: &[Grid<T>],
    backward: Option<&[Grid<T>]>,
    gt: &Grid<T>,
    valid: &BinaryMask,
    spec: &WeightSpec,
    seq: &SequenceParams,
) -> Result<SequenceLoss<T>> {
    if preds.is_empty() {
        return Err(Error::EmptySequence);
    }
    SequenceParams::new(seq.gamma_seq)?;
    if let Some(bw) = backward {
        if bw.len() != preds.len() {
            return Err(invalid(
                "backward",
                format!("{} backward predictions for {} forward predictions", bw.len(), preds.len()),
            ));
        }
    }
    let per_iteration = preds
        .iter()
        .enumerate()
        .map(|(i, pred)| {
            let bw = backward.map(|b| &b[i]);
            let weights = weights_for_prediction(spec, pred, gt, valid, bw)?;
            weighted_l1(pred, gt, &weights, valid)
        })
        .collect::<Result<Vec<_>>>()?;
    let scalars: Vec<f64> = per_iteration.iter().map(|r| r.scalar).collect();
    Ok(SequenceLoss {
        total: discounted_total(&scalars, seq),
        per_iteration,
    })
}
