//! The IoU loss family (IoU, GIoU, DIoU, CIoU, EIoU, SIoU) and the Inner-X
//! composition that swaps the IoU term for the IoU of auxiliary boxes.
//!
//! Every base loss is `1 - IoU + penalty`. The Inner variant of a base `X` is
//! `L_X + IoU - IoU_inner`, except for plain IoU where it is `1 - IoU_inner`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_ratio, enclosing_unchecked, inter_union, iou_unchecked, BBox, RatioRange};
use crate::grad::{self, Grad4};

pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseLoss {
    #[serde(rename = "iou")]
    IoU,
    #[serde(rename = "giou")]
    GIoU,
    #[serde(rename = "diou")]
    DIoU,
    #[serde(rename = "ciou")]
    CIoU,
    #[serde(rename = "eiou")]
    EIoU,
    #[serde(rename = "siou")]
    SIoU,
}

impl BaseLoss {
    pub const ALL: [BaseLoss; 6] =
        [BaseLoss::IoU, BaseLoss::GIoU, BaseLoss::DIoU, BaseLoss::CIoU, BaseLoss::EIoU, BaseLoss::SIoU];

    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::IoU => "IoU",
            BaseLoss::GIoU => "GIoU",
            BaseLoss::DIoU => "DIoU",
            BaseLoss::CIoU => "CIoU",
            BaseLoss::EIoU => "EIoU",
            BaseLoss::SIoU => "SIoU",
        }
    }

    /// Lowercase identifier used in configs and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            BaseLoss::IoU => "iou",
            BaseLoss::GIoU => "giou",
            BaseLoss::DIoU => "diou",
            BaseLoss::CIoU => "ciou",
            BaseLoss::EIoU => "eiou",
            BaseLoss::SIoU => "siou",
        }
    }
}

impl fmt::Display for BaseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        BaseLoss::ALL.into_iter().find(|b| b.key() == lower).ok_or_else(|| {
            let names: Vec<_> = BaseLoss::ALL.iter().map(|b| b.key()).collect();
            invalid(format!("unknown loss `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

/// Knobs for SIoU. By default both inner sums carry a leading 1/2 on top of
/// the final halving, and the shape cost is `(1 - e^{-w})^theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiouOptions {
    /// Shape-cost exponent, admissible in [2, 6].
    pub theta: f64,
    /// Keep the 1/2 in front of the distance and shape sums. Turning this off
    /// gives the normalization of the original SIoU formulation.
    pub halve_sums: bool,
    /// Use the sign-flipped `(1 - e^{w})^theta` shape cost, which grows
    /// without bound. Off by default.
    pub unbounded_shape: bool,
    /// Treat the angle cost as a constant when differentiating.
    pub freeze_angle: bool,
}

impl Default for SiouOptions {
    fn default() -> Self {
        Self { theta: 4.0, halve_sums: true, unbounded_shape: false, freeze_angle: false }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Which loss to compute: a base loss, optionally wrapped as Inner-X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub base: BaseLoss,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub siou: SiouOptions,
}

impl LossSpec {
    pub fn new(base: BaseLoss) -> Self {
        Self { base, inner: None, epsilon: DEFAULT_EPSILON, siou: SiouOptions::default() }
    }

    pub fn inner(base: BaseLoss, ratio: f64) -> Self {
        Self { inner: Some(ratio), ..Self::new(base) }
    }

    pub fn with_siou(mut self, siou: SiouOptions) -> Self {
        self.siou = siou;
        self
    }

    /// Same spec without the auxiliary-box wrapping.
    pub fn without_inner(mut self) -> Self {
        self.inner = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.inner {
            check_ratio(r)?;
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        let theta = self.siou.theta;
        if !(2.0..=6.0).contains(&theta) {
            return Err(invalid(format!("SIoU theta must lie in [2, 6], got {theta}")));
        }
        if self.siou.unbounded_shape && theta.fract() != 0.0 {
            return Err(invalid(format!("the unbounded SIoU shape form needs an integer theta, got {theta}")));
        }
        Ok(())
    }

    /// Logs a warning when the auxiliary ratio leaves the usual range.
    pub fn warn_if_unusual(&self) {
        if let Some(r) = self.inner {
            RatioRange::default().warn_if_outside(r);
        }
    }

    /// Human-readable label, e.g. `CIoU` or `Inner-CIoU(0.8)`.
    pub fn describe(&self) -> String {
        match self.inner {
            Some(r) => format!("Inner-{}({r})", self.base.name()),
            None => self.base.name().to_string(),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// CIoU aspect-ratio consistency `v` and its trade-off weight `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiouTerms {
    pub v: f64,
    pub alpha: f64,
}

/// SIoU angle, distance and shape costs with their ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiouTerms {
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub omega: f64,
    pub rho_x: f64,
    pub rho_y: f64,
    pub omega_w: f64,
    pub omega_h: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossTerms {
    Ciou(CiouTerms),
    Siou(SiouTerms),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub loss: f64,
    pub iou: f64,
    /// Base-loss penalty added on top of `1 - IoU`.
    pub penalty: f64,
    pub inner_iou: Option<f64>,
    pub terms: Option<LossTerms>,
    /// Partials of `loss` with respect to the anchor's (x, y, w, h).
    pub grad: Grad4,
}

/// Terms held constant during differentiation. Used by the finite-difference
/// oracle so that it differentiates the same function as the analytic path.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Frozen {
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

pub(crate) struct BaseEval {
    pub loss: f64,
    pub iou: f64,
    pub penalty: f64,
    pub terms: Option<LossTerms>,
}

pub(crate) fn aspect_consistency(anchor: &BBox, gt: &BBox) -> f64 {
    let d = (gt.w / gt.h).atan() - (anchor.w / anchor.h).atan();
    4.0 / (PI * PI) * d * d
}

pub(crate) fn ciou_alpha(iou: f64, v: f64, eps: f64) -> f64 {
    v / ((1.0 - iou) + v).max(eps)
}

/// `sin(2 * asin(min(|dx|, |dy|) / (dist + eps)))`.
pub(crate) fn siou_angle(anchor: &BBox, gt: &BBox, eps: f64) -> f64 {
    let dx = gt.x - anchor.x;
    let dy = gt.y - anchor.y;
    let dist = dx.hypot(dy);
    let s = (dx.abs().min(dy.abs()) / (dist + eps)).min(1.0);
    (2.0 * s.asin()).sin()
}

pub(crate) fn siou_shape_cost(omega: f64, opts: &SiouOptions) -> f64 {
    if opts.unbounded_shape {
        (1.0 - omega.exp()).powf(opts.theta)
    } else {
        (1.0 - (-omega).exp()).powf(opts.theta)
    }
}

pub(crate) fn siou_sum_weight(opts: &SiouOptions) -> f64 {
    if opts.halve_sums {
        0.5
    } else {
        1.0
    }
}

/// Value of the base loss with some terms optionally pinned.
pub(crate) fn base_eval(spec: &LossSpec, anchor: &BBox, gt: &BBox, frozen: &Frozen) -> BaseEval {
    let (inter, union) = inter_union(anchor, gt, 1.0);
    let iou = inter / union;
    let (penalty, terms) = match spec.base {
        BaseLoss::IoU => (0.0, None),
        BaseLoss::GIoU => {
            let c = enclosing_unchecked(anchor, gt).area;
            ((c - union) / c, None)
        }
        BaseLoss::DIoU => (center_term(anchor, gt), None),
        BaseLoss::CIoU => {
            let v = aspect_consistency(anchor, gt);
            let alpha = frozen.alpha.unwrap_or_else(|| ciou_alpha(iou, v, spec.epsilon));
            (center_term(anchor, gt) + alpha * v, Some(LossTerms::Ciou(CiouTerms { v, alpha })))
        }
        BaseLoss::EIoU => {
            let e = enclosing_unchecked(anchor, gt);
            let dw = anchor.w - gt.w;
            let dh = anchor.h - gt.h;
            let p = center_term(anchor, gt) + dw * dw / (e.width * e.width) + dh * dh / (e.height * e.height);
            (p, None)
        }
        BaseLoss::SIoU => {
            let t = siou_terms(spec, anchor, gt, frozen);
            ((t.delta + t.omega) / 2.0, Some(LossTerms::Siou(t)))
        }
    };
    BaseEval { loss: 1.0 - iou + penalty, iou, penalty, terms }
}

fn center_term(anchor: &BBox, gt: &BBox) -> f64 {
    let e = enclosing_unchecked(anchor, gt);
    let dx = anchor.x - gt.x;
    let dy = anchor.y - gt.y;
    (dx * dx + dy * dy) / e.diagonal_sq
}

fn siou_terms(spec: &LossSpec, anchor: &BBox, gt: &BBox, frozen: &Frozen) -> SiouTerms {
    let opts = &spec.siou;
    let e = enclosing_unchecked(anchor, gt);
    let lambda = frozen.lambda.unwrap_or_else(|| siou_angle(anchor, gt, spec.epsilon));
    let gamma = 2.0 - lambda;
    let rho_x = ((anchor.x - gt.x) / e.width).powi(2);
    let rho_y = ((anchor.y - gt.y) / e.height).powi(2);
    let k = siou_sum_weight(opts);
    let delta = k * ((1.0 - (-gamma * rho_x).exp()) + (1.0 - (-gamma * rho_y).exp()));
    let omega_w = (anchor.w - gt.w).abs() / anchor.w.max(gt.w);
    let omega_h = (anchor.h - gt.h).abs() / anchor.h.max(gt.h);
    let omega = k * (siou_shape_cost(omega_w, opts) + siou_shape_cost(omega_h, opts));
    SiouTerms { lambda, gamma, delta, omega, rho_x, rho_y, omega_w, omega_h, theta: opts.theta }
}

/// Scalar loss for `spec`, with optional frozen terms. No validation.
pub(crate) fn loss_scalar(spec: &LossSpec, anchor: &BBox, gt: &BBox, frozen: &Frozen) -> f64 {
    let base = base_eval(spec, anchor, gt, frozen);
    match spec.inner {
        None => base.loss,
        Some(r) => {
            let inner = iou_unchecked(anchor, gt, r);
            compose_inner(spec.base, base.loss, base.iou, inner)
        }
    }
}

fn compose_inner(base: BaseLoss, base_loss: f64, iou: f64, inner_iou: f64) -> f64 {
    match base {
        BaseLoss::IoU => 1.0 - inner_iou,
        _ => base_loss + (iou - inner_iou),
    }
}

/// Loss value, intermediate terms and analytic gradient for `spec`.
pub fn evaluate(spec: &LossSpec, anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    anchor.validate()?;
    gt.validate()?;
    spec.validate()?;
    Ok(evaluate_unchecked(spec, anchor, gt))
}

pub(crate) fn evaluate_unchecked(spec: &LossSpec, anchor: &BBox, gt: &BBox) -> LossValue {
    let base = base_eval(spec, anchor, gt, &Frozen::default());
    let (loss, inner_iou) = match spec.inner {
        None => (base.loss, None),
        Some(r) => {
            let inner = iou_unchecked(anchor, gt, r);
            (compose_inner(spec.base, base.loss, base.iou, inner), Some(inner))
        }
    };
    LossValue {
        loss,
        iou: base.iou,
        penalty: base.penalty,
        inner_iou,
        terms: base.terms,
        grad: grad::analytic(spec, anchor, gt),
    }
}

pub fn loss_iou(anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    evaluate(&LossSpec::new(BaseLoss::IoU), anchor, gt)
}

pub fn loss_giou(anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    evaluate(&LossSpec::new(BaseLoss::GIoU), anchor, gt)
}

pub fn loss_diou(anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    evaluate(&LossSpec::new(BaseLoss::DIoU), anchor, gt)
}

pub fn loss_ciou(anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    evaluate(&LossSpec::new(BaseLoss::CIoU), anchor, gt)
}

pub fn loss_eiou(anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    evaluate(&LossSpec::new(BaseLoss::EIoU), anchor, gt)
}

pub fn loss_siou(anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    evaluate(&LossSpec::new(BaseLoss::SIoU), anchor, gt)
}

/// Inner-X loss. `spec.inner` must carry the auxiliary ratio.
pub fn loss_inner(spec: &LossSpec, anchor: &BBox, gt: &BBox) -> Result<LossValue> {
    if spec.inner.is_none() {
        return Err(invalid("loss_inner needs a spec with an auxiliary ratio"));
    }
    evaluate(spec, anchor, gt)
}
