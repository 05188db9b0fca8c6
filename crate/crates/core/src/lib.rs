//! Confidence-weighted training losses for dense correspondence.
//!
//! The crate covers optical flow and rectified stereo:
//!
//! * [`fields`]: grid types, bilinear sampling, backward warping, flips and
//!   the disparity/flow embedding;
//! * [`confidence`]: error-based and cycle-consistency confidence maps and
//!   the hard occlusion mask;
//! * [`losses`]: the weighted L1 family (plain, difficulty balancing,
//!   occlusion avoiding and their four combinations), analytic gradients and
//!   the discounted accumulation over refinement iterations;
//! * [`metrics`]: EPE, outlier rates, Fl-all, speed bins, bad-p and friends;
//! * [`io`]: `.flo`, PFM, PGM and metrics CSV;
//! * [`toytrain`]: a seeded synthetic scene generator and a low-capacity
//!   block model trained under each loss.
//!
//! ```
//! use flowconf::losses::{weighted_l1, weights_for_prediction};
//! use flowconf::{BinaryMask, Grid2, LossMode, Task, WeightSpec};
//!
//! let gt = Grid2::filled(4, 4, [1.0, 0.0])?;
//! let pred = Grid2::filled(4, 4, [0.5, 0.25])?;
//! let backward = Grid2::filled(4, 4, [-0.5, -0.25])?;
//! let valid = BinaryMask::all(4, 4)?;
//!
//! let spec = WeightSpec::defaults(Task::Flow, LossMode::Sum);
//! let weights = weights_for_prediction(&spec, &pred, &gt, &valid, Some(&backward))?;
//! let loss = weighted_l1(&pred, &gt, &weights, &valid)?;
//! assert!(loss.scalar > 0.75);
//! # Ok::<(), flowconf::Error>(())
//! ```

pub mod confidence;
pub mod error;
pub mod fields;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod toytrain;

pub use error::{Error, Result};
pub use fields::{BinaryMask, ConfidenceMap, Grid, Grid1, Grid2, Vec2};
pub use losses::{LossMode, Task, WeightSpec};
