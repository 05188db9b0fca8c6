//! Evaluation metrics for flow and disparity predictions.
//!
//! Aggregates return `None` when the pixel set they average over is empty.
//! All threshold tests are strict (`error > threshold`).

use crate::error::Result;
use crate::fields::{BinaryMask, Grid, Grid1, Value};
use crate::losses::Task;

/// Outlier thresholds reported for flow (1PX / 3PX / 5PX).
pub const FLOW_OUTLIER_THRESHOLDS: [f64; 3] = [1.0, 3.0, 5.0];
/// Thresholds of the stereo bad-pixel rates.
pub const BAD_PIXEL_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];
/// Absolute error bound of the KITTI-style outlier definition.
pub const FL_ABS_THRESHOLD: f64 = 3.0;
/// Relative error bound of the KITTI-style outlier definition.
pub const FL_REL_THRESHOLD: f64 = 0.05;

/// Pointwise Euclidean error `|pred - gt|_2`. For disparities this is the
/// absolute error.
pub fn epe_map<T: Value>(pred: &Grid<T>, gt: &Grid<T>) -> Result<Grid1> {
    pred.ensure_same_shape(gt, "ground truth")?;
    let (h, w) = pred.shape();
    let data = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .map(|(p, g)| p.sub(*g).norm_sq().sqrt())
        .collect();
    Ok(Grid::from_parts(h, w, data))
}

/// Magnitude of every ground-truth vector.
pub fn magnitude<T: Value>(gt: &Grid<T>) -> Grid1 {
    gt.map_unchecked(|v| v.norm_sq().sqrt())
}

fn selected(valid: &BinaryMask, region: Option<&BinaryMask>) -> Result<BinaryMask> {
    match region {
        Some(r) => valid.and(r),
        None => Ok(valid.clone()),
    }
}

fn mean_where(e: &Grid1, mask: &BinaryMask, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (&v, &ok)) in e.as_slice().iter().zip(mask.as_slice()).enumerate() {
        if ok && keep(i) {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn percent_where(mask: &BinaryMask, hit: impl Fn(usize) -> bool) -> Option<f64> {
    let mut hits = 0usize;
    let mut n = 0usize;
    for (i, &ok) in mask.as_slice().iter().enumerate() {
        if ok {
            n += 1;
            if hit(i) {
                hits += 1;
            }
        }
    }
    (n > 0).then(|| 100.0 * hits as f64 / n as f64)
}

/// Mean error over `valid ∩ region`.
pub fn aggregate_epe(e: &Grid1, valid: &BinaryMask, region: Option<&BinaryMask>) -> Result<Option<f64>> {
    e.ensure_same_shape(valid, "validity mask")?;
    let mask = selected(valid, region)?;
    Ok(mean_where(e, &mask, |_| true))
}

/// Percentage of valid pixels whose error exceeds `threshold`.
pub fn outlier_rate(e: &Grid1, valid: &BinaryMask, threshold: f64) -> Result<Option<f64>> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(crate::error::invalid("threshold", format!("must be > 0, got {threshold}")));
    }
    e.ensure_same_shape(valid, "validity mask")?;
    let data = e.as_slice();
    Ok(percent_where(valid, |i| data[i] > threshold))
}

/// Percentage of pixels in `valid ∩ region` whose error exceeds both 3 px
/// and 5% of the ground-truth magnitude. Restricting `region` to foreground
/// or background objects gives the `-fg` / `-bg` variants.
pub fn fl_all(e: &Grid1, gt_mag: &Grid1, valid: &BinaryMask, region: Option<&BinaryMask>) -> Result<Option<f64>> {
    e.ensure_same_shape(gt_mag, "ground-truth magnitude")?;
    e.ensure_same_shape(valid, "validity mask")?;
    let mask = selected(valid, region)?;
    let (err, mag) = (e.as_slice(), gt_mag.as_slice());
    Ok(percent_where(&mask, |i| {
        err[i] > FL_ABS_THRESHOLD && err[i] > FL_REL_THRESHOLD * mag[i]
    }))
}

/// Mean error in the ground-truth speed bins `[0, 10)`, `[10, 40]` and
/// `(40, inf)`.
pub fn speed_binned_epe(e: &Grid1, gt_mag: &Grid1, valid: &BinaryMask) -> Result<[Option<f64>; 3]> {
    e.ensure_same_shape(gt_mag, "ground-truth magnitude")?;
    e.ensure_same_shape(valid, "validity mask")?;
    let mag = gt_mag.as_slice();
    Ok([
        mean_where(e, valid, |i| mag[i] < 10.0),
        mean_where(e, valid, |i| (10.0..=40.0).contains(&mag[i])),
        mean_where(e, valid, |i| mag[i] > 40.0),
    ])
}

/// Bad-pixel rates at [`BAD_PIXEL_THRESHOLDS`] and the mean absolute error.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoMetrics {
    pub bad_p: Vec<(f64, Option<f64>)>,
    pub avg_err: Option<f64>,
}

/// `e` is the absolute disparity error; `gt` is only checked for shape.
pub fn stereo_metrics(e: &Grid1, gt: &Grid1, valid: &BinaryMask) -> Result<StereoMetrics> {
    e.ensure_same_shape(gt, "ground truth")?;
    let bad_p = BAD_PIXEL_THRESHOLDS
        .iter()
        .map(|&t| Ok((t, outlier_rate(e, valid, t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StereoMetrics {
        bad_p,
        avg_err: aggregate_epe(e, valid, None)?,
    })
}

/// Number of pixels each aggregate was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelCounts {
    pub valid: usize,
    pub matched: usize,
    pub unmatched: usize,
}

/// All metrics of one prediction. Metrics that do not apply to the task, or
/// whose pixel set is empty, are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: Task,
    pub epe: Option<f64>,
    /// `(threshold, percentage)` for 1PX / 3PX / 5PX.
    pub outlier_rates: Vec<(f64, Option<f64>)>,
    /// Fl-all for flow, Dl-all for stereo.
    pub fl_all: Option<f64>,
    pub speed_binned_epe: [Option<f64>; 3],
    pub matched_epe: Option<f64>,
    pub unmatched_epe: Option<f64>,
    pub avg_err: Option<f64>,
    pub bad_p: Vec<(f64, Option<f64>)>,
    pub pixel_counts: PixelCounts,
}

impl MetricReport {
    /// Full report for a flow prediction. `matched` splits the valid pixels
    /// into matched and unmatched regions.
    pub fn flow(
        pred: &Grid<[f64; 2]>,
        gt: &Grid<[f64; 2]>,
        valid: &BinaryMask,
        matched: Option<&BinaryMask>,
    ) -> Result<Self> {
        let e = epe_map(pred, gt)?;
        let mag = magnitude(gt);
        let mut report = Self::common(Task::Flow, &e, &mag, valid, matched)?;
        report.outlier_rates = FLOW_OUTLIER_THRESHOLDS
            .iter()
            .map(|&t| Ok((t, outlier_rate(&e, valid, t)?)))
            .collect::<Result<Vec<_>>>()?;
        report.speed_binned_epe = speed_binned_epe(&e, &mag, valid)?;
        Ok(report)
    }

    /// Full report for a disparity prediction.
    pub fn stereo(pred: &Grid1, gt: &Grid1, valid: &BinaryMask, matched: Option<&BinaryMask>) -> Result<Self> {
        let e = epe_map(pred, gt)?;
        let mag = magnitude(gt);
        let mut report = Self::common(Task::Stereo, &e, &mag, valid, matched)?;
        let stereo = stereo_metrics(&e, gt, valid)?;
        report.bad_p = stereo.bad_p;
        report.avg_err = stereo.avg_err;
        Ok(report)
    }

    fn common(task: Task, e: &Grid1, mag: &Grid1, valid: &BinaryMask, matched: Option<&BinaryMask>) -> Result<Self> {
        let mut counts = PixelCounts {
            valid: valid.count(),
            ..Default::default()
        };
        let (matched_epe, unmatched_epe) = match matched {
            Some(m) => {
                let unmatched = m.not();
                counts.matched = valid.and(m)?.count();
                counts.unmatched = valid.and(&unmatched)?.count();
                (
                    aggregate_epe(e, valid, Some(m))?,
                    aggregate_epe(e, valid, Some(&unmatched))?,
                )
            }
            None => (None, None),
        };
        Ok(Self {
            task,
            epe: aggregate_epe(e, valid, None)?,
            outlier_rates: Vec::new(),
            fl_all: fl_all(e, mag, valid, None)?,
            speed_binned_epe: [None; 3],
            matched_epe,
            unmatched_epe,
            avg_err: None,
            bad_p: Vec::new(),
            pixel_counts: counts,
        })
    }

    /// Rate for one of the flow outlier thresholds.
    pub fn outlier(&self, threshold: f64) -> Option<f64> {
        self.outlier_rates
            .iter()
            .find(|(t, _)| *t == threshold)
            .and_then(|(_, v)| *v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Grid1 {
        Grid1::new(1, values.len(), values.to_vec()).unwrap()
    }

    fn all(n: usize) -> BinaryMask {
        BinaryMask::all(1, n).unwrap()
    }

    #[test]
    fn epe_examples() {
        let gt = Grid::new(1, 3, vec![[0.0, 0.0]; 3]).unwrap();
        let pred = Grid::new(1, 3, vec![[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]]).unwrap();
        assert_eq!(epe_map(&pred, &gt).unwrap(), row(&[0.0, 5.0, 1.0]));
        let bad = Grid::new(1, 2, vec![[0.0, 0.0]; 2]).unwrap();
        assert!(epe_map(&pred, &bad).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_epe(&row(&[2.0; 4]), &all(4), None).unwrap(), Some(2.0));
        assert_eq!(aggregate_epe(&row(&[1.0, 3.0]), &all(2), None).unwrap(), Some(2.0));
        let region = Grid::new(1, 2, vec![false, true]).unwrap();
        assert_eq!(aggregate_epe(&row(&[1.0, 3.0]), &all(2), Some(&region)).unwrap(), Some(3.0));
        let none = region.map(|_| false).unwrap();
        assert_eq!(aggregate_epe(&row(&[1.0, 3.0]), &all(2), Some(&none)).unwrap(), None);
    }

    #[test]
    fn outlier_examples() {
        assert_eq!(outlier_rate(&row(&[0.0; 3]), &all(3), 1.0).unwrap(), Some(0.0));
        let r = outlier_rate(&row(&[0.5, 2.0, 4.0]), &all(3), 1.0).unwrap().unwrap();
        assert!((r - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(outlier_rate(&row(&[1.0]), &all(1), 1.0).unwrap(), Some(0.0));
        assert!(outlier_rate(&row(&[1.0]), &all(1), 0.0).is_err());
        assert_eq!(outlier_rate(&row(&[1.0]), &all(1).not(), 1.0).unwrap(), None);
    }

    #[test]
    fn fl_all_examples() {
        let e = row(&[5.0, 4.0, 0.0]);
        let mag = row(&[10.0, 100.0, 0.0]);
        let r = fl_all(&e, &mag, &all(3), None).unwrap().unwrap();
        assert!((r - 100.0 / 3.0).abs() < 1e-12);
        let first = Grid::new(1, 3, vec![true, false, false]).unwrap();
        assert_eq!(fl_all(&e, &mag, &all(3), Some(&first)).unwrap(), Some(100.0));
    }

    #[test]
    fn speed_bin_examples() {
        let bins = speed_binned_epe(&row(&[1.0; 3]), &row(&[5.0; 3]), &all(3)).unwrap();
        assert_eq!(bins, [Some(1.0), None, None]);
        let bins = speed_binned_epe(&row(&[1.0, 2.0, 3.0]), &row(&[5.0, 20.0, 50.0]), &all(3)).unwrap();
        assert_eq!(bins, [Some(1.0), Some(2.0), Some(3.0)]);
        let bins = speed_binned_epe(&row(&[1.0, 2.0]), &row(&[10.0, 40.0]), &all(2)).unwrap();
        assert_eq!(bins, [None, Some(1.5), None]);
    }

    #[test]
    fn stereo_examples() {
        let s = stereo_metrics(&row(&[0.0; 2]), &row(&[1.0; 2]), &all(2)).unwrap();
        assert!(s.bad_p.iter().all(|(_, v)| *v == Some(0.0)));
        assert_eq!(s.avg_err, Some(0.0));

        let s = stereo_metrics(&row(&[1.5]), &row(&[1.0]), &all(1)).unwrap();
        let rates: Vec<_> = s.bad_p.iter().map(|(_, v)| v.unwrap()).collect();
        assert_eq!(rates, vec![100.0, 100.0, 0.0, 0.0]);
        assert_eq!(s.avg_err, Some(1.5));

        let s = stereo_metrics(&row(&[0.4; 3]), &row(&[1.0; 3]), &all(3)).unwrap();
        assert_eq!(s.bad_p[0], (0.5, Some(0.0)));
        assert!((s.avg_err.unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn flow_report_splits_regions() {
        let gt = Grid::new(1, 3, vec![[5.0, 0.0], [20.0, 0.0], [50.0, 0.0]]).unwrap();
        let pred = Grid::new(1, 3, vec![[6.0, 0.0], [22.0, 0.0], [53.0, 0.0]]).unwrap();
        let matched = Grid::new(1, 3, vec![true, true, false]).unwrap();
        let r = MetricReport::flow(&pred, &gt, &all(3), Some(&matched)).unwrap();
        assert_eq!(r.epe, Some(2.0));
        assert_eq!(r.matched_epe, Some(1.5));
        assert_eq!(r.unmatched_epe, Some(3.0));
        assert_eq!(r.speed_binned_epe, [Some(1.0), Some(2.0), Some(3.0)]);
        assert_eq!(r.pixel_counts, PixelCounts { valid: 3, matched: 2, unmatched: 1 });
        assert!((r.outlier(1.0).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.avg_err, None);
    }
}
