//! IoU-family bounding-box regression losses, their auxiliary-box ("Inner")
//! variants, analytic gradients, and the tooling to study how they converge.
//!
//! * [`geometry`]: boxes, IoU, enclosing boxes, scaled inner boxes.
//! * [`losses`]: IoU, GIoU, DIoU, CIoU, EIoU, SIoU and Inner-X.
//! * [`grad`]: analytic gradients and a finite-difference oracle.
//! * [`simlab`]: gradient-descent regression over a synthetic anchor population.
//! * [`sweep`]: IoU and |dIoU| versus center deviation for several box scales.

pub mod error;
pub mod geometry;
pub mod grad;
pub mod losses;
pub mod par;
pub mod simlab;
pub mod sweep;

pub use error::{Error, Result};
pub use geometry::{enclosing, inner_iou, iou, to_corners, BBox, Corners, EnclosingBox, RatioRange};
pub use grad::{grad_analytic, grad_fd, grad_magnitude_1d, Axis, Grad4};
pub use losses::{
    evaluate, loss_ciou, loss_diou, loss_eiou, loss_giou, loss_inner, loss_iou, loss_siou, BaseLoss, CiouTerms,
    LossSpec, LossTerms, LossValue, SiouOptions, SiouTerms,
};
pub use par::Execution;
pub use simlab::{run_simulation, run_simulation_with, Scenario, SimConfig, StepSchedule};
pub use sweep::{check_conclusions, run_sweep, ConclusionReport, Sweep, SweepConfig, SweepRecord, Verdict};
