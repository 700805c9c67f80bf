//! Boundary-refinement toolkit for probability maps and masks.
//!
//! * [`raster`]: field/mask/polygon types, morphology, distance transform,
//!   contour tracing and file formats.
//! * [`normals`]: Hessian-based boundary normal estimation.
//! * [`losses`]: weighted BCE, the normal-line softmax (NMS) loss and the
//!   direction loss, with analytic gradients w.r.t. logits.
//! * [`levelset`]: speed function and morphological geodesic active contours,
//!   plus active alignment of noisy ground truth.
//! * [`coarse`]: coarse-label simulation, click counting, coarse-to-fine refinement.
//! * [`metrics`]: tolerance matching, PR sweeps, MF(ODS)/AP/IoU and edge thinning.
//! * [`train`]: a per-pixel logit "model" trained with the combined loss and
//!   periodic alignment.
//! * [`synthetic`]: seeded ring, circle and blob fixtures.

pub mod coarse;
pub mod error;
pub mod levelset;
pub mod losses;
pub mod metrics;
pub mod normals;
pub mod raster;
pub mod synthetic;
pub mod train;

pub use coarse::{CoarseReport, CoarseResult};
pub use error::{Error, Result};
pub use levelset::{EvolutionParams, Trajectory};
pub use losses::{BetaMode, GroundTruth, LossBreakdown, LossWeights};
pub use metrics::{EvalResult, MatchParams};
pub use normals::NormalField;
pub use raster::{BinaryMask, Polygon, ScalarField, StructuringElement};
pub use train::{TrainConfig, TrainReport};
