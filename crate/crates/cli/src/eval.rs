use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use inner_iou::{evaluate, BBox, BaseLoss, Grad4, LossSpec, LossTerms, SiouOptions};
use serde::Serialize;

use crate::output::print_stdout;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Anchor box as `x,y,w,h` (center and size).
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    anchor: BBox,

    /// Ground-truth box as `x,y,w,h`.
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    gt: BBox,

    /// Loss name: iou, giou, diou, ciou, eiou, siou, or inner-<name>.
    #[arg(long, value_parser = parse_loss)]
    loss: LossName,

    /// Auxiliary-box ratio; required by inner-* losses.
    #[arg(long)]
    ratio: Option<f64>,

    /// Include the partial derivatives with respect to x, y, w, h.
    #[arg(long)]
    grad: bool,

    #[arg(long)]
    epsilon: Option<f64>,

    /// SIoU shape-cost exponent.
    #[arg(long)]
    theta: Option<f64>,

    /// SIoU: drop the 1/2 in front of the distance and shape sums.
    #[arg(long)]
    siou_full_sums: bool,

    /// SIoU: hold the angle cost constant when differentiating.
    #[arg(long)]
    freeze_angle: bool,
}

#[derive(Debug, Clone, Copy)]
struct LossName {
    base: BaseLoss,
    inner: bool,
}

fn valid_loss_names() -> String {
    let plain = BaseLoss::ALL.iter().map(|b| b.key().to_string());
    let inner = BaseLoss::ALL.iter().map(|b| format!("inner-{}", b.key()));
    plain.chain(inner).collect::<Vec<_>>().join(", ")
}

fn parse_loss(s: &str) -> Result<LossName, String> {
    let lower = s.to_ascii_lowercase();
    let (inner, key) = match lower.strip_prefix("inner-") {
        Some(rest) => (true, rest),
        None => (false, lower.as_str()),
    };
    key.parse::<BaseLoss>()
        .map(|base| LossName { base, inner })
        .map_err(|_| format!("unknown loss `{s}`; valid names: {}", valid_loss_names()))
}

pub fn parse_box(s: &str) -> Result<BBox, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected `x,y,w,h`, got `{s}`"));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a number in `{s}`"))?;
    }
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Report {
    loss: String,
    spec: LossSpec,
    value: f64,
    iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    inner_iou: Option<f64>,
    penalty: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    terms: Option<LossTerms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad: Option<Grad4>,
}

fn build_spec(args: &EvalArgs) -> Result<LossSpec> {
    let mut spec = match (args.loss.inner, args.ratio) {
        (true, Some(r)) => LossSpec::inner(args.loss.base, r),
        (true, None) => bail!("inner-{} needs --ratio", args.loss.base.key()),
        (false, Some(_)) => bail!("--ratio only applies to inner-* losses"),
        (false, None) => LossSpec::new(args.loss.base),
    };
    if let Some(eps) = args.epsilon {
        spec.epsilon = eps;
    }
    let defaults = SiouOptions::default();
    spec.siou = SiouOptions {
        theta: args.theta.unwrap_or(defaults.theta),
        halve_sums: !args.siou_full_sums,
        freeze_angle: args.freeze_angle,
        ..defaults
    };
    spec.validate()?;
    spec.warn_if_unusual();
    Ok(spec)
}

pub fn run(args: EvalArgs) -> Result<ExitCode> {
    let spec = build_spec(&args)?;
    let v = evaluate(&spec, &args.anchor, &args.gt)?;
    let report = Report {
        loss: spec.describe(),
        spec,
        value: v.loss,
        iou: v.iou,
        inner_iou: v.inner_iou,
        penalty: v.penalty,
        terms: v.terms,
        // `+ 0.0` turns a negative zero into a plain zero for readability.
        grad: args.grad.then(|| Grad4::from_array(v.grad.to_array().map(|g| g + 0.0))),
    };
    print_stdout(&serde_json::to_string_pretty(&report)?)?;
    Ok(ExitCode::SUCCESS)
}
