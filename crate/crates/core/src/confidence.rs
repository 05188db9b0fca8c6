//! Per-pixel confidence maps.
//!
//! Two kinds of confidence are used to weight the training losses:
//!
//! * the error-based map `exp(-|gt - pred|^2)`, close to 1 where the
//!   prediction is already accurate;
//! * the cycle-consistency map built from a forward/backward pair,
//!   `exp(-numerator / denominator)` with
//!   `numerator = |f_fw(x) + f_bw(x + f_fw(x))|^2` and
//!   `denominator = gamma1 * (|f_fw(x)|^2 + |f_bw(x + f_fw(x))|^2) + gamma2`.
//!
//! The hard occlusion mask marks a pixel as matched when
//! `numerator < denominator` and the backward sample lands inside the frame.

use crate::error::{invalid, Result};
use crate::fields::{
    backward_warp, disparity_to_flow, BinaryMask, ConfidenceMap, Grid, Grid1, Grid2, StereoDirection,
    Value,
};

/// Tolerances of the forward-backward consistency check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleParams {
    /// Relative tolerance, dimensionless.
    pub gamma1: f64,
    /// Absolute tolerance, in squared pixels.
    pub gamma2: f64,
}

impl Default for CycleParams {
    fn default() -> Self {
        Self {
            gamma1: 0.01,
            gamma2: 0.5,
        }
    }
}

impl CycleParams {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        let params = Self { gamma1, gamma2 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1.is_finite() && self.gamma1 >= 0.0) {
            return Err(invalid("gamma1", format!("must be finite and >= 0, got {}", self.gamma1)));
        }
        if !(self.gamma2.is_finite() && self.gamma2 > 0.0) {
            return Err(invalid("gamma2", format!("must be finite and > 0, got {}", self.gamma2)));
        }
        Ok(())
    }
}

/// Numerator and denominator of the cycle check at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTerms {
    pub numerator: Grid1,
    pub denominator: Grid1,
    /// Whether `x + f_fw(x)` lies inside the frame.
    pub target_valid: BinaryMask,
}

/// Error-based confidence of a flow prediction. Invalid pixels get 0.
pub fn confidence_db_flow(pred: &Grid2, gt: &Grid2, valid: &BinaryMask) -> Result<ConfidenceMap> {
    confidence_db(pred, gt, valid)
}

/// Error-based confidence of a disparity prediction. Invalid pixels get 0.
pub fn confidence_db_stereo(pred: &Grid1, gt: &Grid1, valid: &BinaryMask) -> Result<ConfidenceMap> {
    confidence_db(pred, gt, valid)
}

/// Shared implementation of the error-based map for scalar and vector cells.
pub fn confidence_db<T: Value>(pred: &Grid<T>, gt: &Grid<T>, valid: &BinaryMask) -> Result<ConfidenceMap> {
    pred.ensure_same_shape(gt, "ground truth")?;
    pred.ensure_same_shape(valid, "validity mask")?;
    let (h, w) = pred.shape();
    let data = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .zip(valid.as_slice())
        .map(|((p, g), &ok)| {
            if ok {
                (-g.sub(*p).norm_sq()).exp().clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Grid::from_parts(h, w, data))
}

pub fn cycle_terms(f_fw: &Grid2, f_bw: &Grid2, params: &CycleParams) -> Result<CycleTerms> {
    params.validate()?;
    f_fw.ensure_same_shape(f_bw, "backward flow")?;
    let (h, w) = f_fw.shape();
    let (bw_at_target, target_valid) = backward_warp(f_bw, f_fw)?;
    let mut numerator = Vec::with_capacity(h * w);
    let mut denominator = Vec::with_capacity(h * w);
    for (fw, bw) in f_fw.as_slice().iter().zip(bw_at_target.as_slice()) {
        numerator.push(fw.add(*bw).norm_sq());
        denominator.push(params.gamma1 * (fw.norm_sq() + bw.norm_sq()) + params.gamma2);
    }
    Ok(CycleTerms {
        numerator: Grid::from_parts(h, w, numerator),
        denominator: Grid::from_parts(h, w, denominator),
        target_valid,
    })
}

/// Hard occlusion mask: `true` marks a matched (non-occluded) pixel.
pub fn occlusion_mask(f_fw: &Grid2, f_bw: &Grid2, params: &CycleParams) -> Result<BinaryMask> {
    let terms = cycle_terms(f_fw, f_bw, params)?;
    Ok(mask_from_terms(&terms))
}

pub(crate) fn mask_from_terms(terms: &CycleTerms) -> BinaryMask {
    let (h, w) = terms.numerator.shape();
    let data = terms
        .numerator
        .as_slice()
        .iter()
        .zip(terms.denominator.as_slice())
        .zip(terms.target_valid.as_slice())
        .map(|((n, d), &ok)| ok && n < d)
        .collect();
    Grid::from_parts(h, w, data)
}

/// Cycle-consistency confidence. Pixels whose target leaves the frame get 0.
pub fn confidence_oa(f_fw: &Grid2, f_bw: &Grid2, params: &CycleParams) -> Result<ConfidenceMap> {
    let terms = cycle_terms(f_fw, f_bw, params)?;
    Ok(confidence_from_terms(&terms))
}

pub(crate) fn confidence_from_terms(terms: &CycleTerms) -> ConfidenceMap {
    let (h, w) = terms.numerator.shape();
    let data = terms
        .numerator
        .as_slice()
        .iter()
        .zip(terms.denominator.as_slice())
        .zip(terms.target_valid.as_slice())
        .map(|((n, d), &ok)| if ok { (-n / d).exp().clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    Grid::from_parts(h, w, data)
}

/// Cycle-consistency confidence of a stereo pair.
///
/// `d_lr` is the left-view disparity, `d_rl` the right-view disparity as
/// produced by [`crate::fields::reverse_disparity_restore`].
pub fn confidence_oa_stereo(d_lr: &Grid1, d_rl: &Grid1, params: &CycleParams) -> Result<ConfidenceMap> {
    let (fw, bw) = stereo_flows(d_lr, d_rl)?;
    confidence_oa(&fw, &bw, params)
}

/// Hard occlusion mask of a stereo pair.
pub fn occlusion_mask_stereo(d_lr: &Grid1, d_rl: &Grid1, params: &CycleParams) -> Result<BinaryMask> {
    let (fw, bw) = stereo_flows(d_lr, d_rl)?;
    occlusion_mask(&fw, &bw, params)
}

fn stereo_flows(d_lr: &Grid1, d_rl: &Grid1) -> Result<(Grid2, Grid2)> {
    d_lr.ensure_same_shape(d_rl, "right-to-left disparity")?;
    Ok((
        disparity_to_flow(d_lr, StereoDirection::LeftToRight),
        disparity_to_flow(d_rl, StereoDirection::RightToLeft),
    ))
}

/// Predictions that admit both confidence maps: flow fields and disparity
/// maps. For disparities the "backward" field is the restored right-view map.
pub trait Correspondence: Value {
    fn confidence_cycle(fw: &Grid<Self>, bw: &Grid<Self>, params: &CycleParams) -> Result<ConfidenceMap>;
    fn occlusion(fw: &Grid<Self>, bw: &Grid<Self>, params: &CycleParams) -> Result<BinaryMask>;
}

impl Correspondence for crate::fields::Vec2 {
    fn confidence_cycle(fw: &Grid2, bw: &Grid2, params: &CycleParams) -> Result<ConfidenceMap> {
        confidence_oa(fw, bw, params)
    }

    fn occlusion(fw: &Grid2, bw: &Grid2, params: &CycleParams) -> Result<BinaryMask> {
        occlusion_mask(fw, bw, params)
    }
}

impl Correspondence for f64 {
    fn confidence_cycle(fw: &Grid1, bw: &Grid1, params: &CycleParams) -> Result<ConfidenceMap> {
        confidence_oa_stereo(fw, bw, params)
    }

    fn occlusion(fw: &Grid1, bw: &Grid1, params: &CycleParams) -> Result<BinaryMask> {
        occlusion_mask_stereo(fw, bw, params)
    }
}
