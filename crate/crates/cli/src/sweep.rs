use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, ValueEnum};
use inner_iou::sweep::{DEFAULT_HIGH_IOU, DEFAULT_LOW_IOU};
use inner_iou::{check_conclusions, run_sweep, Axis, ConclusionReport, Sweep, SweepConfig};
use serde::Serialize;

use crate::output::{csv_writer, print_stdout, real, write_json};
use crate::EXIT_FAILED_CHECK;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Diagonal,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Diagonal => Axis::Diagonal,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Output CSV: deviation, then iou_<side> and absgrad_<side> per side.
    #[arg(long)]
    out: PathBuf,

    /// Also write the conclusions report here (it is always printed).
    #[arg(long)]
    report: Option<PathBuf>,

    #[arg(long)]
    box_side: Option<f64>,

    /// Comma-separated auxiliary box sides.
    #[arg(long, value_delimiter = ',')]
    aux_sides: Option<Vec<f64>>,

    /// Deviation interval as `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    deviation_range: Option<[f64; 2]>,

    #[arg(long)]
    samples: Option<usize>,

    /// Direction of the center displacement.
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,

    /// IoU of the actual box at or above which the smaller box should be steeper.
    #[arg(long, default_value_t = DEFAULT_HIGH_IOU)]
    high_iou: f64,

    /// IoU of the actual box at or below which the larger box should be steeper.
    #[arg(long, default_value_t = DEFAULT_LOW_IOU)]
    low_iou: f64,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let parsed: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match parsed.as_deref() {
        Ok(&[lo, hi]) => Ok([lo, hi]),
        _ => Err(format!("expected `lo,hi`, got `{s}`")),
    }
}

#[derive(Serialize)]
struct Report<'a> {
    c1_pass: bool,
    c2_pass: bool,
    c3_pass: bool,
    all_pass: bool,
    config: &'a SweepConfig,
    conclusions: &'a ConclusionReport,
}

fn write_csv(path: &Path, sweep: &Sweep) -> Result<()> {
    let mut order: Vec<usize> = (0..sweep.sides.len()).collect();
    order.sort_by(|&a, &b| sweep.sides[a].total_cmp(&sweep.sides[b]));
    let mut header = vec!["deviation".to_string()];
    for &k in &order {
        header.push(format!("iou_{}", sweep.sides[k]));
        header.push(format!("absgrad_{}", sweep.sides[k]));
    }
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for r in &sweep.records {
        let mut row = vec![real(r.deviation)];
        for &k in &order {
            row.push(real(r.iou[k]));
            row.push(real(r.absgrad[k]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: SweepArgs) -> Result<ExitCode> {
    let d = SweepConfig::default();
    let cfg = SweepConfig {
        box_side: args.box_side.unwrap_or(d.box_side),
        aux_sides: args.aux_sides.clone().unwrap_or(d.aux_sides),
        deviation_range: args.deviation_range.unwrap_or(d.deviation_range),
        samples: args.samples.unwrap_or(d.samples),
        axis: args.axis.map(Axis::from).unwrap_or(d.axis),
    };
    let sweep = run_sweep(&cfg)?;
    let conclusions = check_conclusions(&sweep, args.high_iou, args.low_iou)?;
    write_csv(&args.out, &sweep)?;

    let report = Report {
        c1_pass: conclusions.monotone.passed(),
        c2_pass: conclusions.smaller_steeper_at_high_iou.passed(),
        c3_pass: conclusions.larger_steeper_at_low_iou.passed(),
        all_pass: conclusions.all_passed(),
        config: &cfg,
        conclusions: &conclusions,
    };
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    print_stdout(&serde_json::to_string_pretty(&report)?)?;
    Ok(if report.all_pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILED_CHECK) })
}
