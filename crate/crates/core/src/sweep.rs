//! IoU and |dIoU/dδ| as a function of the anchor's center deviation δ from a
//! fixed ground-truth square, for the actual box and for auxiliary boxes of
//! other sizes.
//!
//! The auxiliary curves use both squares scaled to the auxiliary side about
//! their own centers, which is exactly what an inner IoU with
//! `ratio = aux_side / box_side` computes.

use serde::{Deserialize, Serialize};

use crate::error::{bad_field, invalid, Result};
use crate::geometry::{iou_unchecked, BBox};
use crate::grad::{iou_grad, Axis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub box_side: f64,
    pub aux_sides: Vec<f64>,
    pub deviation_range: [f64; 2],
    pub samples: usize,
    /// With [`Axis::Diagonal`], δ is applied to both coordinates.
    pub axis: Axis,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            box_side: 10.0,
            aux_sides: vec![8.0, 12.0],
            deviation_range: [-15.0, 15.0],
            samples: 601,
            axis: Axis::Diagonal,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.box_side.is_finite() && self.box_side > 0.0) {
            return Err(bad_field("box_side", format!("must be finite and > 0, got {}", self.box_side)));
        }
        if let Some(s) = self.aux_sides.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(bad_field("aux_sides", format!("entries must be finite and > 0, got {s}")));
        }
        let [lo, hi] = self.deviation_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(bad_field("deviation_range", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if self.samples < 3 {
            return Err(bad_field("samples", format!("need at least 3, got {}", self.samples)));
        }
        Ok(())
    }

    /// The actual side followed by each distinct auxiliary side.
    pub fn sides(&self) -> Vec<f64> {
        let mut sides = vec![self.box_side];
        for &s in &self.aux_sides {
            if !sides.contains(&s) {
                sides.push(s);
            }
        }
        sides
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub deviation: f64,
    /// Indexed like [`Sweep::sides`].
    pub iou: Vec<f64>,
    pub absgrad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub box_side: f64,
    pub sides: Vec<f64>,
    pub axis: Axis,
    pub records: Vec<SweepRecord>,
}

impl Sweep {
    fn column(&self, side: f64) -> Result<usize> {
        self.sides.iter().position(|&s| s == side).ok_or_else(|| invalid(format!("sweep has no curve for side {side}")))
    }
}

/// IoU and |dIoU/dδ| for two squares of side `side`, one displaced by δ.
pub fn point(side: f64, deviation: f64, axis: Axis) -> (f64, f64) {
    let gt = BBox { x: 0.0, y: 0.0, w: side, h: side };
    let (dx, dy) = axis.offset(deviation);
    let anchor = gt.translated(dx, dy);
    let g = iou_grad(&anchor, &gt, 1.0);
    (iou_unchecked(&anchor, &gt, 1.0), axis.project(&g.d_iou).abs())
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Sweep> {
    cfg.validate()?;
    let sides = cfg.sides();
    let [lo, hi] = cfg.deviation_range;
    let last = cfg.samples - 1;
    let records = (0..cfg.samples)
        .map(|i| {
            // Written so that a symmetric range gives exactly mirrored samples.
            let deviation = (lo * (last - i) as f64 + hi * i as f64) / last as f64;
            let (iou, absgrad) = sides.iter().map(|&s| point(s, deviation, cfg.axis)).unzip();
            SweepRecord { deviation, iou, absgrad }
        })
        .collect();
    Ok(Sweep { box_side: cfg.box_side, sides, axis: cfg.axis, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// No sample fell in the region the conclusion talks about.
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConclusionCheck {
    pub verdict: Verdict,
    /// Samples (or sample pairs, for monotonicity) the conclusion applies to.
    pub region_samples: usize,
    pub violations: usize,
    /// Deviation intervals over which the claimed inequality holds, inside
    /// the region; consecutive samples are merged.
    pub holds: Vec<[f64; 2]>,
}

impl ConclusionCheck {
    fn new(region_samples: usize, violations: usize, holds: Vec<[f64; 2]>) -> Self {
        let verdict = if region_samples == 0 {
            Verdict::Vacuous
        } else if violations > 0 {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        Self { verdict, region_samples, violations, holds }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConclusionReport {
    pub high_iou_threshold: f64,
    pub low_iou_threshold: f64,
    pub actual_side: f64,
    pub smaller_side: f64,
    pub larger_side: f64,
    /// Every IoU curve is non-increasing in |δ|.
    pub monotone: ConclusionCheck,
    /// High IoU: the smaller box has the steeper IoU.
    pub smaller_steeper_at_high_iou: ConclusionCheck,
    /// Low (nonzero) IoU: the larger box has the steeper IoU.
    pub larger_steeper_at_low_iou: ConclusionCheck,
}

impl ConclusionReport {
    pub fn all_passed(&self) -> bool {
        self.monotone.passed() && self.smaller_steeper_at_high_iou.passed() && self.larger_steeper_at_low_iou.passed()
    }
}

/// IoU of the actual box at or above which the smaller box should be steeper.
pub const DEFAULT_HIGH_IOU: f64 = 0.7;
/// IoU of the actual box at or below which the larger box should be steeper.
/// On the default diagonal sweep the two curves cross near IoU 0.28.
pub const DEFAULT_LOW_IOU: f64 = 0.25;

const MONOTONE_TOL: f64 = 1e-12;

fn merge_intervals(records: &[SweepRecord], hits: &[bool]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::new();
    let mut open = false;
    for (r, &hit) in records.iter().zip(hits) {
        match (hit, open) {
            (true, true) => out.last_mut().expect("open interval")[1] = r.deviation,
            (true, false) => out.push([r.deviation, r.deviation]),
            _ => {}
        }
        open = hit;
    }
    out
}

fn steeper_check(
    sweep: &Sweep,
    actual: usize,
    other: usize,
    in_region: impl Fn(&SweepRecord) -> bool,
) -> ConclusionCheck {
    let mut region = 0;
    let mut violations = 0;
    let hits: Vec<bool> = sweep
        .records
        .iter()
        .map(|r| {
            if !in_region(r) {
                return false;
            }
            region += 1;
            let ok = r.absgrad[other] > r.absgrad[actual];
            violations += usize::from(!ok);
            ok
        })
        .collect();
    ConclusionCheck::new(region, violations, merge_intervals(&sweep.records, &hits))
}

fn monotone_check(sweep: &Sweep) -> ConclusionCheck {
    let mut order: Vec<&SweepRecord> = sweep.records.iter().collect();
    order.sort_by(|a, b| a.deviation.abs().total_cmp(&b.deviation.abs()));
    let mut pairs = 0;
    let mut violations = 0;
    for w in order.windows(2) {
        if w[0].deviation.abs() == w[1].deviation.abs() {
            continue;
        }
        pairs += 1;
        if w[0].iou.iter().zip(&w[1].iou).any(|(near, far)| far - near > MONOTONE_TOL) {
            violations += 1;
        }
    }
    let span = sweep.records.iter().map(|r| r.deviation);
    let holds = match (span.clone().reduce(f64::min), span.reduce(f64::max)) {
        (Some(lo), Some(hi)) if pairs > 0 && violations == 0 => vec![[lo, hi]],
        _ => Vec::new(),
    };
    ConclusionCheck::new(pairs, violations, holds)
}

/// Checks the three claims about how box scale shapes the IoU landscape.
///
/// The comparison sides are the auxiliary sides closest to the actual one
/// from below and from above.
pub fn check_conclusions(sweep: &Sweep, high_iou_threshold: f64, low_iou_threshold: f64) -> Result<ConclusionReport> {
    if !(0.0..=1.0).contains(&high_iou_threshold) || !(0.0..=1.0).contains(&low_iou_threshold) {
        return Err(invalid(format!(
            "thresholds must lie in [0, 1], got high={high_iou_threshold} low={low_iou_threshold}"
        )));
    }
    let actual_side = sweep.box_side;
    let smaller_side = sweep
        .sides
        .iter()
        .copied()
        .filter(|&s| s < actual_side)
        .reduce(f64::max)
        .ok_or_else(|| invalid(format!("need an auxiliary side smaller than {actual_side}")))?;
    let larger_side = sweep
        .sides
        .iter()
        .copied()
        .filter(|&s| s > actual_side)
        .reduce(f64::min)
        .ok_or_else(|| invalid(format!("need an auxiliary side larger than {actual_side}")))?;
    let a = sweep.column(actual_side)?;
    let s = sweep.column(smaller_side)?;
    let l = sweep.column(larger_side)?;
    if let Some(r) =
        sweep.records.iter().find(|r| r.iou.len() != sweep.sides.len() || r.absgrad.len() != sweep.sides.len())
    {
        return Err(invalid(format!("record at deviation {} does not cover every side", r.deviation)));
    }

    let high = steeper_check(sweep, a, s, |r| r.deviation != 0.0 && r.iou[a] >= high_iou_threshold);
    let low = steeper_check(sweep, a, l, |r| r.iou[a] > 0.0 && r.iou[a] <= low_iou_threshold);
    Ok(ConclusionReport {
        high_iou_threshold,
        low_iou_threshold,
        actual_side,
        smaller_side,
        larger_side,
        monotone: monotone_check(sweep),
        smaller_steeper_at_high_iou: high,
        larger_steeper_at_low_iou: low,
    })
}
