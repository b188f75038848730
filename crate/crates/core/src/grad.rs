//! Hand-derived gradients of every loss with respect to the anchor's
//! `(x, y, w, h)`, and a central finite-difference oracle to check them.
//!
//! Non-smooth points follow two conventions:
//!
//! * an overlap clamped at zero has zero derivative (the clamped side);
//! * a `min`/`max` whose arguments tie splits the derivative evenly between
//!   them. At coincident boxes this makes every loss stationary.
//!
//! CIoU's trade-off weight `alpha` is treated as a constant. SIoU's angle cost
//! is differentiated unless `SiouOptions::freeze_angle` is set.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{corners_unchecked, enclosing_unchecked, inter_union, BBox};
use crate::losses::{
    aspect_consistency, base_eval, ciou_alpha, loss_scalar, siou_angle, siou_sum_weight, BaseLoss, Frozen, LossSpec,
    LossTerms, SiouOptions,
};

/// Partial derivatives with respect to an anchor's center and size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Grad4 {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Grad4 {
    pub const ZERO: Grad4 = Grad4 { dx: 0.0, dy: 0.0, dw: 0.0, dh: 0.0 };

    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn x(v: f64) -> Self {
        Self::new(v, 0.0, 0.0, 0.0)
    }

    fn y(v: f64) -> Self {
        Self::new(0.0, v, 0.0, 0.0)
    }

    fn w(v: f64) -> Self {
        Self::new(0.0, 0.0, v, 0.0)
    }

    fn h(v: f64) -> Self {
        Self::new(0.0, 0.0, 0.0, v)
    }
}

impl Add for Grad4 {
    type Output = Grad4;
    fn add(self, o: Grad4) -> Grad4 {
        Grad4::new(self.dx + o.dx, self.dy + o.dy, self.dw + o.dw, self.dh + o.dh)
    }
}

impl AddAssign for Grad4 {
    fn add_assign(&mut self, o: Grad4) {
        *self = *self + o;
    }
}

impl Sub for Grad4 {
    type Output = Grad4;
    fn sub(self, o: Grad4) -> Grad4 {
        Grad4::new(self.dx - o.dx, self.dy - o.dy, self.dw - o.dw, self.dh - o.dh)
    }
}

impl Neg for Grad4 {
    type Output = Grad4;
    fn neg(self) -> Grad4 {
        Grad4::new(-self.dx, -self.dy, -self.dw, -self.dh)
    }
}

impl Mul<f64> for Grad4 {
    type Output = Grad4;
    fn mul(self, s: f64) -> Grad4 {
        Grad4::new(self.dx * s, self.dy * s, self.dw * s, self.dh * s)
    }
}

impl Div<f64> for Grad4 {
    type Output = Grad4;
    fn div(self, s: f64) -> Grad4 {
        Grad4::new(self.dx / s, self.dy / s, self.dw / s, self.dh / s)
    }
}

/// Direction along which a deviation is applied to the anchor center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    /// Both coordinates shifted by the same amount.
    Diagonal,
}

impl Axis {
    pub fn project(self, g: &Grad4) -> f64 {
        match self {
            Axis::X => g.dx,
            Axis::Y => g.dy,
            Axis::Diagonal => g.dx + g.dy,
        }
    }

    pub fn offset(self, delta: f64) -> (f64, f64) {
        match self {
            Axis::X => (delta, 0.0),
            Axis::Y => (0.0, delta),
            Axis::Diagonal => (delta, delta),
        }
    }
}

/// Anchor's share of the derivative of `min(a, b)`.
#[inline]
fn min_share(a: f64, b: f64) -> f64 {
    if a < b {
        1.0
    } else if a > b {
        0.0
    } else {
        0.5
    }
}

/// Anchor's share of the derivative of `max(a, b)`.
#[inline]
fn max_share(a: f64, b: f64) -> f64 {
    min_share(b, a)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamped overlap of the anchor interval (center `c`, length `s·ratio`) with
/// the target interval, plus its partials w.r.t. `c` and `s`.
fn axis_overlap(c: f64, s: f64, gc: f64, gs: f64, ratio: f64) -> (f64, f64, f64) {
    let half = s * ratio / 2.0;
    let ghalf = gs * ratio / 2.0;
    let (lo, hi) = (c - half, c + half);
    let (glo, ghi) = (gc - ghalf, gc + ghalf);
    let raw = hi.min(ghi) - lo.max(glo);
    if raw <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let wh = min_share(hi, ghi);
    let wl = max_share(lo, glo);
    (raw, wh - wl, ratio / 2.0 * (wh + wl))
}

pub(crate) struct IouGrad {
    pub iou: f64,
    pub union: f64,
    pub d_iou: Grad4,
    pub d_union: Grad4,
}

pub(crate) fn iou_grad(a: &BBox, g: &BBox, ratio: f64) -> IouGrad {
    let (inter, union) = inter_union(a, g, ratio);
    let (ix, ix_c, ix_s) = axis_overlap(a.x, a.w, g.x, g.w, ratio);
    let (iy, iy_c, iy_s) = axis_overlap(a.y, a.h, g.y, g.h, ratio);
    let d_inter = Grad4::new(ix_c * iy, iy_c * ix, ix_s * iy, iy_s * ix);
    // Anchor area from its corners, matching how the union is computed.
    let ca = corners_unchecked(a, ratio);
    let d_union = Grad4::new(0.0, 0.0, ratio * ca.height(), ratio * ca.width()) - d_inter;
    let iou = inter / union;
    IouGrad { iou, union, d_iou: (d_inter - d_union * iou) / union, d_union }
}

struct EnclosingGrad {
    width: f64,
    height: f64,
    d_width: Grad4,
    d_height: Grad4,
}

fn enclosing_grad(a: &BBox, g: &BBox) -> EnclosingGrad {
    let e = enclosing_unchecked(a, g);
    let (ca, cg) = (a.corners(), g.corners());
    let (sr, sl) = (max_share(ca.right, cg.right), min_share(ca.left, cg.left));
    let (sb, st) = (max_share(ca.bottom, cg.bottom), min_share(ca.top, cg.top));
    EnclosingGrad {
        width: e.width,
        height: e.height,
        d_width: Grad4::new(sr - sl, 0.0, 0.5 * (sr + sl), 0.0),
        d_height: Grad4::new(0.0, sb - st, 0.0, 0.5 * (sb + st)),
    }
}

/// Gradient of `num² / den²` where `num` moves with `d_num` and `den` with `d_den`.
fn squared_ratio_grad(num: f64, d_num: Grad4, den: f64, d_den: Grad4) -> Grad4 {
    d_num * (2.0 * num / (den * den)) - d_den * (2.0 * num * num / (den * den * den))
}

fn center_term_grad(a: &BBox, g: &BBox, e: &EnclosingGrad) -> Grad4 {
    let ux = a.x - g.x;
    let uy = a.y - g.y;
    let rho2 = ux * ux + uy * uy;
    let c2 = e.width * e.width + e.height * e.height;
    let d_rho2 = Grad4::new(2.0 * ux, 2.0 * uy, 0.0, 0.0);
    let d_c2 = e.d_width * (2.0 * e.width) + e.d_height * (2.0 * e.height);
    (d_rho2 - d_c2 * (rho2 / c2)) / c2
}

fn ciou_shape_grad(a: &BBox, g: &BBox) -> Grad4 {
    let d = (g.w / g.h).atan() - (a.w / a.h).atan();
    let k = 8.0 / (std::f64::consts::PI * std::f64::consts::PI) * d / (a.w * a.w + a.h * a.h);
    Grad4::w(-k * a.h) + Grad4::h(k * a.w)
}

fn siou_angle_grad(a: &BBox, g: &BBox, eps: f64) -> Grad4 {
    let dx = g.x - a.x;
    let dy = g.y - a.y;
    let dist = dx.hypot(dy);
    let m = dx.abs().min(dy.abs());
    let den = dist + eps;
    let s = m / den;
    if s >= 1.0 {
        return Grad4::ZERO;
    }
    let wx = min_share(dx.abs(), dy.abs());
    // d(dx)/d(anchor.x) = -1
    let d_m = Grad4::x(-wx * sign(dx)) + Grad4::y(-(1.0 - wx) * sign(dy));
    let d_dist = if dist > 0.0 { Grad4::new(-dx / dist, -dy / dist, 0.0, 0.0) } else { Grad4::ZERO };
    let d_s = d_m / den - d_dist * (m / (den * den));
    d_s * (2.0 * (1.0 - 2.0 * s * s) / (1.0 - s * s).sqrt())
}

fn omega_grad(size: f64, gt_size: f64) -> f64 {
    if size > gt_size {
        gt_size / (size * size)
    } else if size < gt_size {
        -1.0 / gt_size
    } else {
        0.0
    }
}

fn shape_cost_grad(omega: f64, opts: &SiouOptions) -> f64 {
    let t = opts.theta;
    if opts.unbounded_shape {
        let e = omega.exp();
        -t * (1.0 - e).powf(t - 1.0) * e
    } else {
        let e = (-omega).exp();
        t * (1.0 - e).powf(t - 1.0) * e
    }
}

fn siou_penalty_grad(spec: &LossSpec, a: &BBox, g: &BBox, e: &EnclosingGrad, lambda: f64) -> Grad4 {
    let opts = &spec.siou;
    let k = siou_sum_weight(opts);
    let d_lambda = if opts.freeze_angle { Grad4::ZERO } else { siou_angle_grad(a, g, spec.epsilon) };
    let gamma = 2.0 - lambda;
    let d_gamma = -d_lambda;

    let ux = a.x - g.x;
    let uy = a.y - g.y;
    let rho_x = (ux / e.width).powi(2);
    let rho_y = (uy / e.height).powi(2);
    let d_rho_x = squared_ratio_grad(ux, Grad4::x(1.0), e.width, e.d_width);
    let d_rho_y = squared_ratio_grad(uy, Grad4::y(1.0), e.height, e.d_height);
    let d_delta = ((d_gamma * rho_x + d_rho_x * gamma) * (-gamma * rho_x).exp()
        + (d_gamma * rho_y + d_rho_y * gamma) * (-gamma * rho_y).exp())
        * k;

    let omega_w = (a.w - g.w).abs() / a.w.max(g.w);
    let omega_h = (a.h - g.h).abs() / a.h.max(g.h);
    let d_omega = (Grad4::w(shape_cost_grad(omega_w, opts) * omega_grad(a.w, g.w))
        + Grad4::h(shape_cost_grad(omega_h, opts) * omega_grad(a.h, g.h)))
        * k;

    (d_delta + d_omega) * 0.5
}

/// Analytic gradient without input validation.
pub(crate) fn analytic(spec: &LossSpec, a: &BBox, g: &BBox) -> Grad4 {
    let plain = iou_grad(a, g, 1.0);
    let base = match spec.base {
        BaseLoss::IoU => -plain.d_iou,
        BaseLoss::GIoU => {
            let e = enclosing_grad(a, g);
            let c = e.width * e.height;
            let d_c = e.d_width * e.height + e.d_height * e.width;
            // penalty = 1 - U / C
            -plain.d_iou - (plain.d_union * c - d_c * plain.union) / (c * c)
        }
        BaseLoss::DIoU => {
            let e = enclosing_grad(a, g);
            -plain.d_iou + center_term_grad(a, g, &e)
        }
        BaseLoss::CIoU => {
            let e = enclosing_grad(a, g);
            let v = aspect_consistency(a, g);
            let alpha = ciou_alpha(plain.iou, v, spec.epsilon);
            -plain.d_iou + center_term_grad(a, g, &e) + ciou_shape_grad(a, g) * alpha
        }
        BaseLoss::EIoU => {
            let e = enclosing_grad(a, g);
            -plain.d_iou
                + center_term_grad(a, g, &e)
                + squared_ratio_grad(a.w - g.w, Grad4::w(1.0), e.width, e.d_width)
                + squared_ratio_grad(a.h - g.h, Grad4::h(1.0), e.height, e.d_height)
        }
        BaseLoss::SIoU => {
            let e = enclosing_grad(a, g);
            let lambda = siou_angle(a, g, spec.epsilon);
            -plain.d_iou + siou_penalty_grad(spec, a, g, &e, lambda)
        }
    };
    match spec.inner {
        None => base,
        Some(r) => {
            let inner = iou_grad(a, g, r);
            match spec.base {
                BaseLoss::IoU => -inner.d_iou,
                _ => base + (plain.d_iou - inner.d_iou),
            }
        }
    }
}

/// Exact partials of the loss selected by `spec` w.r.t. the anchor.
pub fn grad_analytic(spec: &LossSpec, anchor: &BBox, gt: &BBox) -> Result<Grad4> {
    anchor.validate()?;
    gt.validate()?;
    spec.validate()?;
    Ok(analytic(spec, anchor, gt))
}

/// Central finite differences of the loss, one coordinate at a time.
///
/// Terms that the analytic path treats as constants (CIoU's `alpha`, and
/// SIoU's angle when frozen) are pinned at their value at `anchor`.
pub fn grad_fd(spec: &LossSpec, anchor: &BBox, gt: &BBox, step: f64) -> Result<Grad4> {
    anchor.validate()?;
    gt.validate()?;
    spec.validate()?;
    if !(step.is_finite() && step > 0.0) {
        return Err(invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let at = base_eval(spec, anchor, gt, &Frozen::default());
    let mut frozen = Frozen::default();
    if let Some(LossTerms::Ciou(t)) = at.terms {
        frozen.alpha = Some(t.alpha);
    }
    if let (Some(LossTerms::Siou(t)), true) = (at.terms, spec.siou.freeze_angle) {
        frozen.lambda = Some(t.lambda);
    }

    let p = [anchor.x, anchor.y, anchor.w, anchor.h];
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut plus = p;
        let mut minus = p;
        plus[i] += step;
        minus[i] -= step;
        let bp = BBox { x: plus[0], y: plus[1], w: plus[2], h: plus[3] };
        let bm = BBox { x: minus[0], y: minus[1], w: minus[2], h: minus[3] };
        bm.validate().map_err(|_| invalid(format!("perturbing the anchor by {step} makes it degenerate")))?;
        let fp = loss_scalar(spec, &bp, gt, &frozen);
        let fm = loss_scalar(spec, &bm, gt, &frozen);
        *slot = (fp - fm) / (2.0 * step);
    }
    Ok(Grad4::from_array(out))
}

/// `|d IoU / d deviation|` along `axis`, where the IoU is the auxiliary-box
/// IoU when `spec` carries a ratio. This is the IoU term alone, not the loss.
pub fn grad_magnitude_1d(spec: &LossSpec, anchor: &BBox, gt: &BBox, axis: Axis) -> Result<f64> {
    anchor.validate()?;
    gt.validate()?;
    spec.validate()?;
    let g = iou_grad(anchor, gt, spec.inner.unwrap_or(1.0));
    Ok(axis.project(&g.d_iou).abs())
}
