//! Regression simulation: a grid of synthetic anchors is pulled toward a set
//! of targets by plain gradient descent on each loss, and the per-iteration
//! regression error is aggregated into convergence curves.
//!
//! Targets sit at a common center with unit area (times `target_area`) and a
//! range of aspect ratios. Anchor centers are drawn uniformly over a disk or
//! annulus around that center; each center is expanded into one anchor per
//! (scale, aspect) pair. Every target is regressed from every anchor.
//!
//! The regression error of an anchor is the L1 distance between its four
//! edge coordinates and the target's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bad_field, Result};
use crate::geometry::{iou_unchecked, BBox};
use crate::losses::{evaluate_unchecked, BaseLoss, LossSpec};
use crate::par::{map_ordered, Execution};

/// Cases per work unit. Results are folded in case order after each unit,
/// which keeps memory bounded without touching the summation order.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// `eta_t = step_size * (2 - IoU_t)`.
    #[default]
    DiouStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Anchor centers within radius 3 of the target center.
    High,
    /// Anchor centers at distance 6 to 9 from the target center.
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub center: [f64; 2],
    pub target_aspects: Vec<f64>,
    pub anchor_scales: Vec<f64>,
    pub anchor_aspects: Vec<f64>,
    pub n_points: usize,
    /// Inner and outer radius of the anchor-center annulus.
    pub radius: [f64; 2],
    pub iterations: usize,
    pub step_size: f64,
    pub step_schedule: StepSchedule,
    pub seed: u64,
    pub specs: Vec<LossSpec>,
    pub target_area: f64,
    /// Anchor width and height never drop below this.
    pub min_size: f64,
}

pub const DEFAULT_ASPECTS: [f64; 7] = [1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 1.0, 2.0, 3.0, 4.0];
pub const DEFAULT_SCALES: [f64; 7] = [0.5, 0.67, 0.75, 1.0, 1.33, 1.5, 2.0];

impl Default for SimConfig {
    fn default() -> Self {
        Self::scenario(Scenario::High)
    }
}

impl SimConfig {
    /// Preset for one of the two sampling scenarios, with the base CIoU loss
    /// and its Inner variant (ratio 0.8 for high IoU, 1.2 for low IoU).
    pub fn scenario(scenario: Scenario) -> Self {
        let (radius, ratio) = match scenario {
            Scenario::High => ([0.0, 3.0], 0.8),
            Scenario::Low => ([6.0, 9.0], 1.2),
        };
        Self {
            center: [100.0, 100.0],
            target_aspects: DEFAULT_ASPECTS.to_vec(),
            anchor_scales: DEFAULT_SCALES.to_vec(),
            anchor_aspects: DEFAULT_ASPECTS.to_vec(),
            n_points: 2000,
            radius,
            iterations: 200,
            step_size: 0.1,
            step_schedule: StepSchedule::DiouStyle,
            seed: 0,
            specs: vec![LossSpec::new(BaseLoss::CIoU), LossSpec::inner(BaseLoss::CIoU, ratio)],
            target_area: 1.0,
            min_size: 1e-4,
        }
    }

    pub fn case_count(&self) -> usize {
        self.target_aspects.len() * self.anchor_scales.len() * self.anchor_aspects.len() * self.n_points
    }

    pub fn validate(&self) -> Result<()> {
        fn positive_list(field: &'static str, xs: &[f64]) -> Result<()> {
            if xs.is_empty() {
                return Err(bad_field(field, "must not be empty"));
            }
            if let Some(v) = xs.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(bad_field(field, format!("entries must be finite and > 0, got {v}")));
            }
            Ok(())
        }
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad_field(field, format!("must be finite and > 0, got {v}")));
            }
            Ok(())
        }

        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(bad_field("center", "must be finite"));
        }
        positive_list("target_aspects", &self.target_aspects)?;
        positive_list("anchor_scales", &self.anchor_scales)?;
        positive_list("anchor_aspects", &self.anchor_aspects)?;
        if self.n_points == 0 {
            return Err(bad_field("n_points", "must be at least 1"));
        }
        let [r0, r1] = self.radius;
        if !(r0.is_finite() && r1.is_finite() && r0 >= 0.0 && r0 <= r1) {
            return Err(bad_field("radius", format!("need 0 <= inner <= outer, got [{r0}, {r1}]")));
        }
        if self.iterations == 0 {
            return Err(bad_field("iterations", "must be at least 1"));
        }
        positive("step_size", self.step_size)?;
        positive("target_area", self.target_area)?;
        positive("min_size", self.min_size)?;
        if self.specs.is_empty() {
            return Err(bad_field("specs", "need at least one loss spec"));
        }
        for s in &self.specs {
            s.validate().map_err(|e| bad_field("specs", e.to_string()))?;
        }
        Ok(())
    }
}

/// One anchor/target pair to regress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: usize,
    pub anchor: BBox,
    pub target: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: usize,
    pub spec_id: usize,
    /// Regression error before the first step and after each iteration.
    pub error_curve: Vec<f64>,
    pub final_iou: f64,
    /// Iterations in which the anchor size had to be clamped at `min_size`.
    pub clamps: u32,
}

/// Final state of one case under one spec, without its full curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: usize,
    pub spec_id: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub final_iou: f64,
    pub clamps: u32,
}

impl From<&CaseResult> for CaseOutcome {
    fn from(r: &CaseResult) -> Self {
        Self {
            case_id: r.case_id,
            spec_id: r.spec_id,
            initial_error: r.error_curve[0],
            final_error: *r.error_curve.last().expect("curve has the initial entry"),
            final_iou: r.final_iou,
            clamps: r.clamps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub spec_id: usize,
    pub spec: LossSpec,
    /// Error summed over all cases, per iteration (index 0 is the start).
    pub total_error_curve: Vec<f64>,
    pub mean_final_error: f64,
    /// Trapezoidal area under `total_error_curve` with unit spacing.
    pub auc: f64,
    pub cases: usize,
    pub clamps: u64,
}

impl ConvergenceSummary {
    pub fn final_total_error(&self) -> f64 {
        *self.total_error_curve.last().expect("curve is never empty")
    }

    /// Iterations after which the total error went up. Descending the loss
    /// does not guarantee a smaller corner distance, so this is reported
    /// rather than required to be zero.
    pub fn error_increases(&self) -> usize {
        self.total_error_curve.windows(2).filter(|w| w[1] > w[0]).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub summaries: Vec<ConvergenceSummary>,
    /// Present when requested, ordered by case then spec.
    pub cases: Option<Vec<CaseOutcome>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub execution: Execution,
    pub keep_case_outcomes: bool,
}

fn box_from_area(cx: f64, cy: f64, area: f64, aspect: f64) -> BBox {
    BBox { x: cx, y: cy, w: (area * aspect).sqrt(), h: (area / aspect).sqrt() }
}

/// Anchor-center offsets, uniform over the annulus area.
fn sample_offsets(cfg: &SimConfig) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [r0, r1] = cfg.radius;
    let (lo, hi) = (r0 * r0, r1 * r1);
    (0..cfg.n_points)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let u: f64 = rng.random();
            let r = (lo + u * (hi - lo)).sqrt();
            (r * theta.cos(), r * theta.sin())
        })
        .collect()
}

/// All anchor/target pairs, ordered by target aspect, then sampled point,
/// then anchor scale, then anchor aspect. Deterministic in `cfg.seed`.
pub fn generate_cases(cfg: &SimConfig) -> Result<Vec<Case>> {
    cfg.validate()?;
    let [cx, cy] = cfg.center;
    let offsets = sample_offsets(cfg);
    let mut cases = Vec::with_capacity(cfg.case_count());
    for &t_aspect in &cfg.target_aspects {
        let target = box_from_area(cx, cy, cfg.target_area, t_aspect);
        for &(ox, oy) in &offsets {
            for &scale in &cfg.anchor_scales {
                for &a_aspect in &cfg.anchor_aspects {
                    let anchor = box_from_area(cx + ox, cy + oy, scale * cfg.target_area, a_aspect);
                    cases.push(Case { id: cases.len(), anchor, target });
                }
            }
        }
    }
    Ok(cases)
}

fn regression_error(anchor: &BBox, target: &BBox) -> f64 {
    anchor.corners().l1_distance(&target.corners())
}

/// Regresses one anchor toward its target with gradient descent on `spec`.
pub fn run_case(spec: &LossSpec, anchor: &BBox, target: &BBox, cfg: &SimConfig) -> Result<CaseResult> {
    anchor.validate()?;
    target.validate()?;
    spec.validate()?;
    cfg.validate()?;
    Ok(regress(0, 0, spec, anchor, target, cfg))
}

fn regress(
    case_id: usize,
    spec_id: usize,
    spec: &LossSpec,
    anchor: &BBox,
    target: &BBox,
    cfg: &SimConfig,
) -> CaseResult {
    let mut p = *anchor;
    let mut curve = Vec::with_capacity(cfg.iterations + 1);
    curve.push(regression_error(&p, target));
    let mut clamps = 0u32;
    for _ in 0..cfg.iterations {
        let v = evaluate_unchecked(spec, &p, target);
        let eta = match cfg.step_schedule {
            StepSchedule::Constant => cfg.step_size,
            StepSchedule::DiouStyle => cfg.step_size * (2.0 - v.iou),
        };
        p.x -= eta * v.grad.dx;
        p.y -= eta * v.grad.dy;
        p.w -= eta * v.grad.dw;
        p.h -= eta * v.grad.dh;
        if p.w < cfg.min_size || p.h < cfg.min_size {
            p.w = p.w.max(cfg.min_size);
            p.h = p.h.max(cfg.min_size);
            clamps += 1;
        }
        curve.push(regression_error(&p, target));
    }
    CaseResult { case_id, spec_id, error_curve: curve, final_iou: iou_unchecked(&p, target, 1.0), clamps }
}

struct Accumulator {
    total: Vec<f64>,
    final_sum: f64,
    clamps: u64,
    cases: usize,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { total: vec![0.0; len], final_sum: 0.0, clamps: 0, cases: 0 }
    }

    fn add(&mut self, r: &CaseResult) {
        for (t, e) in self.total.iter_mut().zip(&r.error_curve) {
            *t += e;
        }
        self.final_sum += r.error_curve.last().copied().unwrap_or(0.0);
        self.clamps += u64::from(r.clamps);
        self.cases += 1;
    }
}

fn trapezoid(curve: &[f64]) -> f64 {
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum()
}

/// Runs every spec over every case and returns one summary per spec.
pub fn run_simulation(cfg: &SimConfig) -> Result<Vec<ConvergenceSummary>> {
    Ok(run_simulation_with(cfg, RunOptions::default())?.summaries)
}

/// Like [`run_simulation`], with control over execution and per-case output.
///
/// Per-case results are reduced strictly in case order, so the summaries do
/// not depend on the execution strategy or the number of threads.
pub fn run_simulation_with(cfg: &SimConfig, opts: RunOptions) -> Result<SimulationOutput> {
    let cases = generate_cases(cfg)?;
    for s in &cfg.specs {
        s.warn_if_unusual();
    }
    let mut acc: Vec<Accumulator> = cfg.specs.iter().map(|_| Accumulator::new(cfg.iterations + 1)).collect();
    let mut outcomes = opts.keep_case_outcomes.then(Vec::new);

    for chunk in cases.chunks(CHUNK) {
        let results = map_ordered(chunk, opts.execution, |c| {
            cfg.specs
                .iter()
                .enumerate()
                .map(|(sid, spec)| regress(c.id, sid, spec, &c.anchor, &c.target, cfg))
                .collect::<Vec<_>>()
        });
        for per_case in &results {
            for r in per_case {
                acc[r.spec_id].add(r);
                if let Some(out) = outcomes.as_mut() {
                    out.push(CaseOutcome::from(r));
                }
            }
        }
    }

    let summaries = acc
        .into_iter()
        .zip(&cfg.specs)
        .enumerate()
        .map(|(spec_id, (a, spec))| ConvergenceSummary {
            spec_id,
            spec: *spec,
            auc: trapezoid(&a.total),
            mean_final_error: a.final_sum / a.cases as f64,
            total_error_curve: a.total,
            cases: a.cases,
            clamps: a.clamps,
        })
        .collect();
    Ok(SimulationOutput { summaries, cases: outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_points: usize) -> SimConfig {
        SimConfig { n_points, ..SimConfig::default() }
    }

    #[test]
    fn default_case_count() {
        assert_eq!(SimConfig::default().case_count(), 686_000);
        assert_eq!(generate_cases(&small(10)).unwrap().len(), 3430);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small(5);
        assert_eq!(generate_cases(&cfg).unwrap(), generate_cases(&cfg).unwrap());
        let other = SimConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_cases(&cfg).unwrap(), generate_cases(&other).unwrap());
    }

    #[test]
    fn anchors_respect_geometry() {
        let cfg = SimConfig { n_points: 50, ..SimConfig::scenario(Scenario::Low) };
        for c in generate_cases(&cfg).unwrap() {
            let r = (c.anchor.x - 100.0).hypot(c.anchor.y - 100.0);
            assert!((6.0 - 1e-9..=9.0 + 1e-9).contains(&r), "{r}");
            assert_eq!((c.target.x, c.target.y), (100.0, 100.0));
            assert!((c.target.area() - 1.0).abs() < 1e-12);
            let scale = c.anchor.area();
            assert!(DEFAULT_SCALES.iter().any(|s| (s - scale).abs() < 1e-12), "{scale}");
        }
    }

    #[test]
    fn coincident_start_stays_put() {
        let cfg = small(1);
        let b = BBox::new(100.0, 100.0, 2.0, 0.5).unwrap();
        for base in BaseLoss::ALL {
            for spec in [LossSpec::new(base), LossSpec::inner(base, 0.8)] {
                let r = run_case(&spec, &b, &b, &cfg).unwrap();
                assert_eq!(r.error_curve.len(), cfg.iterations + 1);
                assert!(r.error_curve.iter().all(|&e| e == 0.0), "{spec}");
            }
        }
    }

    #[test]
    fn iou_plateau_versus_giou() {
        let cfg = small(1);
        let target = BBox::new(100.0, 100.0, 1.0, 1.0).unwrap();
        let anchor = BBox::new(104.0, 102.0, 1.0, 1.0).unwrap();
        let flat = run_case(&LossSpec::new(BaseLoss::IoU), &anchor, &target, &cfg).unwrap();
        assert!(flat.error_curve.iter().all(|&e| e == flat.error_curve[0]));
        let moved = run_case(&LossSpec::new(BaseLoss::GIoU), &anchor, &target, &cfg).unwrap();
        assert!(moved.error_curve.last().unwrap() < &moved.error_curve[0]);
    }

    #[test]
    fn single_iteration_curve_length() {
        let cfg = SimConfig {
            iterations: 1,
            n_points: 2,
            specs: vec![LossSpec::new(BaseLoss::DIoU)],
            ..SimConfig::default()
        };
        let s = run_simulation(&cfg).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].total_error_curve.len(), 2);
    }

    #[test]
    fn totals_are_sums_of_case_curves() {
        let cfg = SimConfig {
            n_points: 1,
            iterations: 15,
            specs: vec![LossSpec::new(BaseLoss::EIoU), LossSpec::inner(BaseLoss::SIoU, 0.7)],
            ..SimConfig::default()
        };
        let summaries = run_simulation(&cfg).unwrap();
        let cases = generate_cases(&cfg).unwrap();
        for (spec_id, spec) in cfg.specs.iter().enumerate() {
            let mut total = vec![0.0; cfg.iterations + 1];
            for c in &cases {
                let r = run_case(spec, &c.anchor, &c.target, &cfg).unwrap();
                assert_eq!(r.error_curve[0], regression_error(&c.anchor, &c.target));
                for (t, e) in r.error_curve.iter().enumerate() {
                    total[t] += e;
                }
            }
            assert_eq!(summaries[spec_id].total_error_curve, total);
        }
        assert_eq!(summaries[0].total_error_curve[0], summaries[1].total_error_curve[0]);
    }

    #[test]
    fn counts_error_increases() {
        let mut s = run_simulation(&small(1)).unwrap().remove(0);
        s.total_error_curve = vec![3.0, 2.0, 2.5, 2.5, 1.0, 1.5];
        assert_eq!(s.error_increases(), 2);
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let cfg = small(3);
        let serial =
            run_simulation_with(&cfg, RunOptions { execution: Execution::Serial, keep_case_outcomes: true }).unwrap();
        let parallel =
            run_simulation_with(&cfg, RunOptions { execution: Execution::Parallel, keep_case_outcomes: true }).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cases: Vec<(SimConfig, &str)> = vec![
            (SimConfig { n_points: 0, ..SimConfig::default() }, "n_points"),
            (SimConfig { iterations: 0, ..SimConfig::default() }, "iterations"),
            (SimConfig { radius: [3.0, 1.0], ..SimConfig::default() }, "radius"),
            (SimConfig { anchor_scales: vec![1.0, -1.0], ..SimConfig::default() }, "anchor_scales"),
            (SimConfig { specs: vec![], ..SimConfig::default() }, "specs"),
            (SimConfig { step_size: 0.0, ..SimConfig::default() }, "step_size"),
        ];
        for (cfg, field) in cases {
            match cfg.validate() {
                Err(crate::Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error for {field}, got {other:?}"),
            }
        }
    }
}
