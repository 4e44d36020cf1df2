//! Pure stage functions. The cached runner persists their outputs; nothing
//! here touches the filesystem.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::csi::{preprocess, FeatureMatrix, PreprocessReport};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_predictions, refinement_loop, train_and_score, ErrorReport, ErrorSummary, RefineData, RefineIteration,
};
use crate::fit::{dead_reckon_trajectory, fit_trajectory, TrajectoryFit};
use crate::model::{KnnModel, LabelKind, Mlp, TrainConfig};
use crate::rng::{self, mix, stream};
use crate::sim::{
    place_control_points, simulate_imu, simulate_trajectory, synth_csi, ChannelDataset, ControlPoint, ImuSeries,
    TrajectorySeries,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub truth: TrajectorySeries,
    pub imu: ImuSeries,
    pub control_points: Vec<ControlPoint>,
    pub channel: ChannelDataset,
}

/// Trajectory, IMU readings and control points without the radio channel.
pub fn simulate_motion(cfg: &ExperimentConfig, seed: u64) -> Result<(TrajectorySeries, ImuSeries, Vec<ControlPoint>)> {
    let sc = &cfg.scenario;
    let truth = simulate_trajectory(sc, seed)?;
    let mut imu_cfg = sc.imu;
    imu_cfg.seed = mix(seed, stream::IMU, sc.imu.seed);
    let imu = simulate_imu(&truth, &imu_cfg)?;
    let control_points = place_control_points(&truth, &sc.control_points, seed)?;
    Ok((truth, imu, control_points))
}

pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Simulated> {
    let (truth, imu, control_points) = simulate_motion(cfg, seed)?;
    let channel = synth_csi(&truth, &cfg.scenario, seed)?;
    Ok(Simulated {
        truth,
        imu,
        control_points,
        channel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub features: FeatureMatrix,
    pub report: PreprocessReport,
    /// Sorted feature-row indices, drawn from samples inside the labelled span.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Uniform random split of `rows` with `round(rows * test_fraction)` test
/// rows, at least one of each.
pub fn split_rows(rows: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if rows < 2 {
        return Err(Error::EmptyDataset(format!("{rows} usable samples cannot be split")));
    }
    let n_test = ((rows as f64 * test_fraction).round() as usize).clamp(1, rows - 1);
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut rng::substream(seed, stream::SPLIT, 0));
    let (mut test, mut train) = (idx[..n_test].to_vec(), idx[n_test..].to_vec());
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Samples between the first and last control point; only these receive
/// two-sided pseudo-labels.
/// Samples between the first and last control point, the only stretch with
/// two-sided pseudo-labels.
pub fn labelled_span(control_points: &[ControlPoint]) -> Result<std::ops::RangeInclusive<usize>> {
    let first = control_points.iter().map(|c| c.sample_index).min();
    let last = control_points.iter().map(|c| c.sample_index).max();
    match (first, last) {
        (Some(a), Some(b)) if b > a => Ok(a..=b),
        _ => Err(Error::EmptyDataset(
            "the walk never returns to a control point, so no segment can be fitted".into(),
        )),
    }
}

pub fn prepare(cfg: &ExperimentConfig, sim: &Simulated, seed: u64) -> Result<Prepared> {
    let (features, report) = preprocess(&sim.channel, &cfg.preprocess)?;
    let span = labelled_span(&sim.control_points)?;
    let usable: Vec<usize> = (0..features.rows())
        .filter(|&r| span.contains(&features.sample_index[r]))
        .collect();
    let (train, test) = split_rows(usable.len(), cfg.scenario.test_fraction, seed)?;
    let train_rows = train.into_iter().map(|i| usable[i]).collect();
    let test_rows = test.into_iter().map(|i| usable[i]).collect();
    Ok(Prepared {
        features,
        report,
        train_rows,
        test_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub fit: TrajectoryFit,
    pub dead_reckoning: Array2<f64>,
}

/// Seed of the plain (iteration 0) fit; refinement reuses it so both agree.
pub fn fit_seed(seed: u64) -> u64 {
    mix(seed, stream::FIT, 0)
}

pub fn fit_labels(cfg: &ExperimentConfig, sim: &Simulated, seed: u64) -> Result<Labels> {
    Ok(Labels {
        fit: fit_trajectory(&sim.imu, &sim.control_points, &cfg.fit, None, fit_seed(seed))?,
        dead_reckoning: dead_reckon_trajectory(&sim.imu, &sim.control_points)?,
    })
}

pub fn refine_data<'a>(sim: &'a Simulated, prep: &'a Prepared) -> RefineData<'a> {
    RefineData {
        imu: &sim.imu,
        control_points: &sim.control_points,
        features: &prep.features,
        train_rows: &prep.train_rows,
        test_rows: &prep.test_rows,
        truth: sim.truth.positions.view(),
        timestamps: &sim.truth.timestamps,
    }
}

pub const SUPERVISED: &str = "supervised";
pub const DR_LABELS: &str = "dead-reckoning labels";
pub const IMU_SUPERVISED: &str = "IMU-supervised";
pub const IMU_SUPERVISED_IR: &str = "IMU-supervised-IR";
pub const KNN: &str = "k-NN";

/// Test errors of the baseline models.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineErrors {
    pub supervised: ErrorReport,
    pub dead_reckoning: ErrorReport,
    /// k-NN on forward-backward pseudo-labels.
    pub knn: ErrorReport,
}

/// Baseline models trained alongside the pseudo-label pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub supervised: Mlp,
    pub dead_reckoning: Mlp,
    pub errors: BaselineErrors,
}

pub fn train_baselines(cfg: &ExperimentConfig, sim: &Simulated, prep: &Prepared, labels: &Labels, seed: u64) -> Result<Baselines> {
    let data = refine_data(sim, prep);
    let smoothing = cfg.smoothing();
    let (supervised, _, supervised_test) = train_and_score(
        &data,
        sim.truth.positions.view(),
        LabelKind::Truth,
        &TrainConfig {
            epochs: cfg.supervised_epochs,
            ..cfg.train.clone()
        },
        smoothing.as_ref(),
        mix(seed, stream::TRAIN, 1),
    )?;
    let (dead_reckoning, _, dead_reckoning_test) = train_and_score(
        &data,
        labels.dead_reckoning.view(),
        LabelKind::Pseudo,
        &cfg.train,
        smoothing.as_ref(),
        mix(seed, stream::TRAIN, 2),
    )?;
    let train_samples: Vec<usize> = prep.train_rows.iter().map(|&r| prep.features.sample_index[r]).collect();
    let knn = KnnModel::new(
        prep.features.features.select(Axis(0), &prep.train_rows),
        labels.fit.pseudo_labels.select(Axis(0), &train_samples),
        cfg.knn_k.min(prep.train_rows.len()),
    )?;
    let pred = knn.predict(prep.features.features.select(Axis(0), &prep.test_rows).view())?;
    let knn_test = evaluate_predictions(pred.view(), &data, &prep.test_rows, smoothing.as_ref())?;
    Ok(Baselines {
        supervised,
        dead_reckoning,
        errors: BaselineErrors {
            supervised: supervised_test,
            dead_reckoning: dead_reckoning_test,
            knn: knn_test,
        },
    })
}

pub fn refine(cfg: &ExperimentConfig, sim: &Simulated, prep: &Prepared, seed: u64) -> Result<Vec<RefineIteration>> {
    refinement_loop(&refine_data(sim, prep), &cfg.refine_config(), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub test: ErrorSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epochs: usize,
    pub pseudo_error: ErrorSummary,
    pub test_error: ErrorSummary,
    pub label_change: f64,
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
}

impl IterationRecord {
    pub fn from_iteration(it: &RefineIteration) -> Self {
        Self {
            iteration: it.iteration,
            epochs: it.epochs,
            pseudo_error: it.pseudo_error,
            test_error: it.test_error.summary,
            label_change: it.label_change,
            first_epoch_loss: it.curve.first().map_or(f64::NAN, |e| e.loss),
            last_epoch_loss: it.curve.last().map_or(f64::NAN, |e| e.loss),
        }
    }
}

/// Everything one seed contributes to the result tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub seed: u64,
    pub samples: usize,
    pub control_points: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Pseudo-label error over every sample between the first and last
    /// control point.
    pub forward_backward: ErrorSummary,
    pub dead_reckoning: ErrorSummary,
    /// Pseudo-label error over the training samples only.
    pub forward_backward_train: ErrorSummary,
    pub methods: Vec<MethodResult>,
    pub iterations: Vec<IterationRecord>,
}

impl ReplicationSummary {
    pub fn method(&self, name: &str) -> Option<&ErrorSummary> {
        self.methods.iter().find(|m| m.method == name).map(|m| &m.test)
    }
}

pub fn summarize(
    seed: u64,
    sim: &Simulated,
    prep: &Prepared,
    labels: &Labels,
    baselines: Option<&BaselineErrors>,
    iterations: &[IterationRecord],
) -> Result<ReplicationSummary> {
    let span = labelled_span(&sim.control_points)?;
    let truth = sim.truth.positions.slice(ndarray::s![span.clone(), ..]);
    let first = iterations
        .first()
        .ok_or_else(|| Error::input("summary needs at least one refinement iteration"))?;
    let last = iterations.last().unwrap_or(first);
    let mut methods = Vec::new();
    if let Some(b) = baselines {
        methods.push((SUPERVISED, b.supervised.summary));
        methods.push((DR_LABELS, b.dead_reckoning.summary));
    }
    methods.push((IMU_SUPERVISED, first.test_error));
    if iterations.len() > 1 {
        methods.push((IMU_SUPERVISED_IR, last.test_error));
    }
    if let Some(b) = baselines {
        methods.push((KNN, b.knn.summary));
    }
    Ok(ReplicationSummary {
        seed,
        samples: sim.truth.len(),
        control_points: sim.control_points.len(),
        train_rows: prep.train_rows.len(),
        test_rows: prep.test_rows.len(),
        forward_backward: ErrorReport::between(labels.fit.pseudo_labels.slice(ndarray::s![span.clone(), ..]), truth)?.summary,
        dead_reckoning: ErrorReport::between(labels.dead_reckoning.slice(ndarray::s![span, ..]), truth)?.summary,
        forward_backward_train: first.pseudo_error,
        methods: methods
            .into_iter()
            .map(|(m, test)| MethodResult {
                method: m.to_string(),
                test,
            })
            .collect(),
        iterations: iterations.to_vec(),
    })
}

/// All stages in memory, without persistence.
pub fn run_replication(cfg: &ExperimentConfig, seed: u64) -> Result<ReplicationSummary> {
    cfg.validate()?;
    let sim = simulate(cfg, seed)?;
    let prep = prepare(cfg, &sim, seed)?;
    let labels = fit_labels(cfg, &sim, seed)?;
    let baselines = if cfg.baselines {
        Some(train_baselines(cfg, &sim, &prep, &labels, seed)?)
    } else {
        None
    };
    let iterations = refine(cfg, &sim, &prep, seed)?;
    let records: Vec<IterationRecord> = iterations.iter().map(IterationRecord::from_iteration).collect();
    summarize(seed, &sim, &prep, &labels, baselines.as_ref().map(|b| &b.errors), &records)
}
