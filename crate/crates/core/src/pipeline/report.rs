use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Knob};
use super::runner::{Runner, Stage};
use super::stages::{ReplicationSummary, IMU_SUPERVISED, SUPERVISED};
use crate::error::{Error, Result};
use crate::eval::{format_table, write_table, ErrorSummary, SeedStats, TableRow};
use crate::io::write_csv;
use crate::sim::Placement;

/// Per-method test-error table and pseudo-label table over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub horizontal: Vec<TableRow>,
    pub pseudo_labels: Vec<TableRow>,
}

impl Tables {
    pub fn from_summaries(cfg: &ExperimentConfig, summaries: &[ReplicationSummary]) -> Result<Self> {
        let first = summaries
            .first()
            .ok_or_else(|| Error::EmptyDataset("no replications to tabulate".into()))?;
        let cp = cfg.scenario.control_points.site_count().to_string();
        let mut horizontal = Vec::new();
        for m in &first.methods {
            let per_seed: Vec<ErrorSummary> = summaries
                .iter()
                .map(|s| {
                    s.method(&m.method)
                        .copied()
                        .ok_or_else(|| Error::input(format!("seed {} lacks method {}", s.seed, m.method)))
                })
                .collect::<Result<_>>()?;
            let cps = if m.method == SUPERVISED { "all" } else { cp.as_str() };
            horizontal.push(TableRow::from_summaries(&m.method, cps, &per_seed)?);
        }
        let pick = |f: fn(&ReplicationSummary) -> ErrorSummary| summaries.iter().map(f).collect::<Vec<_>>();
        let pseudo_labels = vec![
            TableRow::from_summaries("dead-reckoning", &cp, &pick(|s| s.dead_reckoning))?,
            TableRow::from_summaries("forward-backward", &cp, &pick(|s| s.forward_backward))?,
        ];
        Ok(Self {
            horizontal,
            pseudo_labels,
        })
    }

    pub fn render(&self) -> String {
        format!(
            "Horizontal absolute error\n{}\nPseudo-label error\n{}",
            format_table(&self.horizontal),
            format_table(&self.pseudo_labels)
        )
    }
}

#[derive(Serialize)]
struct SeedRow<'s> {
    seed: u64,
    method: &'s str,
    mean: f64,
    median: f64,
    p90: f64,
}

#[derive(Serialize)]
struct IterationCurveRow {
    seed: u64,
    iteration: usize,
    epochs: usize,
    pseudo_mean: f64,
    test_mean: f64,
    label_change: f64,
}

/// Runs every seed through the full chain and writes the result tables to
/// `<root>/tables/`.
pub fn reproduce_tables(runner: &Runner) -> Result<Tables> {
    let summaries = runner.run_all()?;
    let tables = Tables::from_summaries(runner.config(), &summaries)?;
    let dir = runner.root().join("tables");
    write_table(&dir, "horizontal_error", &tables.horizontal)?;
    write_table(&dir, "pseudo_label_error", &tables.pseudo_labels)?;
    let mut seeds = Vec::new();
    let mut curves = Vec::new();
    for s in &summaries {
        let mut push = |method: &'static str, e: &ErrorSummary| {
            seeds.push(SeedRow {
                seed: s.seed,
                method,
                mean: e.mean,
                median: e.median,
                p90: e.p90,
            })
        };
        push("pseudo:dead-reckoning", &s.dead_reckoning);
        push("pseudo:forward-backward", &s.forward_backward);
        for m in &s.methods {
            seeds.push(SeedRow {
                seed: s.seed,
                method: &m.method,
                mean: m.test.mean,
                median: m.test.median,
                p90: m.test.p90,
            });
        }
        curves.extend(s.iterations.iter().map(|r| IterationCurveRow {
            seed: s.seed,
            iteration: r.iteration,
            epochs: r.epochs,
            pseudo_mean: r.pseudo_error.mean,
            test_mean: r.test_error.mean,
            label_change: r.label_change,
        }));
    }
    write_csv(dir.join("seeds.csv"), &seeds)?;
    write_csv(dir.join("iterations.csv"), &curves)?;
    std::fs::write(dir.join("summary.txt"), tables.render())?;
    Ok(tables)
}

/// The experiment with one knob set; ablations train only the plain
/// pseudo-label model.
pub fn ablation_config(base: &ExperimentConfig, knob: Knob, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.baselines = false;
    cfg.refine_epochs.truncate(1);
    let cp = &mut cfg.scenario.control_points;
    match knob {
        Knob::CpNoiseSigma => cp.noise_sigma = value,
        Knob::CpCount => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::config(format!("control-point count {value} is not a positive integer")));
            }
            cp.placement = Placement::Random {
                count: value as usize,
                include_start: true,
            };
            cp.radius = base.cp_radius;
        }
        Knob::CpRadius => {
            let count = cp.site_count();
            if matches!(cp.placement, Placement::Samples { .. }) {
                cp.placement = Placement::Random {
                    count,
                    include_start: true,
                };
            }
            cp.radius = value;
        }
        Knob::SnrThreshold => cfg.preprocess.snr_threshold_db = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub knob: String,
    pub value: f64,
    pub seed: u64,
    /// `test` (plain pseudo-label model) or `pseudo_label`.
    pub metric: String,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummaryRow {
    pub knob: String,
    pub value: f64,
    pub metric: String,
    pub seeds: usize,
    /// Quantiles over seeds of the per-seed median error.
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

/// Sweeps `knob` over its grid for every seed. Writes
/// `<root>/ablation/<knob>.csv` (long format) and `<knob>_summary.csv`.
pub fn run_ablation(
    base: &ExperimentConfig,
    knob: Knob,
    root: &Path,
    use_cache: bool,
) -> Result<(Vec<AblationRow>, Vec<AblationSummaryRow>)> {
    let values = base.ablation.values(knob);
    if values.is_empty() {
        return Err(Error::config(format!("ablation grid for {} is empty", knob.name())));
    }
    let cfgs: Vec<(f64, ExperimentConfig)> = values
        .iter()
        .map(|&v| Ok((v, ablation_config(base, knob, v)?)))
        .collect::<Result<_>>()?;
    let dir = root.join("ablation").join(knob.name());
    let runners: Vec<Runner> = cfgs
        .iter()
        .map(|(v, c)| Runner::new(c, dir.join(format!("{}={v}", knob.name())), use_cache))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..runners.len())
        .flat_map(|i| base.seeds.iter().map(move |&s| (i, s)))
        .collect();
    jobs.par_iter()
        .try_for_each(|&(i, seed)| runners[i].ensure(Stage::Evaluate, seed, true))?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (i, (value, _)) in cfgs.iter().enumerate() {
        let mut test = Vec::new();
        let mut pseudo = Vec::new();
        for &seed in &base.seeds {
            let s = runners[i].load_summary(seed)?;
            let t = *s
                .method(IMU_SUPERVISED)
                .ok_or_else(|| Error::input("ablation summary lacks the pseudo-label model"))?;
            for (metric, e) in [("test", t), ("pseudo_label", s.forward_backward)] {
                rows.push(AblationRow {
                    knob: knob.name().into(),
                    value: *value,
                    seed,
                    metric: metric.into(),
                    mean: e.mean,
                    median: e.median,
                    p90: e.p90,
                });
            }
            test.push(t.median);
            pseudo.push(s.forward_backward.median);
        }
        for (metric, v) in [("test", &test), ("pseudo_label", &pseudo)] {
            let st = SeedStats::from_values(v)?;
            summary.push(AblationSummaryRow {
                knob: knob.name().into(),
                value: *value,
                metric: metric.into(),
                seeds: st.seeds,
                median: st.median,
                q10: st.q10,
                q90: st.q90,
            });
        }
    }
    write_csv(root.join("ablation").join(format!("{}.csv", knob.name())), &rows)?;
    write_csv(root.join("ablation").join(format!("{}_summary.csv", knob.name())), &summary)?;
    Ok((rows, summary))
}
