use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{ErrorReport, ErrorSummary};
use super::smoother::{rts_smooth, SmootherConfig};
use crate::csi::FeatureMatrix;
use crate::error::{Error, Result};
use crate::fit::{fit_trajectory, FitConfig, ModelAnchors};
use crate::model::{predict, train_mlp, EpochStats, LabelKind, Mlp, TrainConfig};
use crate::rng::{mix, stream};
use crate::sim::{ControlPoint, ImuSeries};

/// Everything a replication knows about one trajectory.
#[derive(Debug, Clone, Copy)]
pub struct RefineData<'a> {
    pub imu: &'a ImuSeries,
    pub control_points: &'a [ControlPoint],
    pub features: &'a FeatureMatrix,
    /// Feature rows used for training / testing.
    pub train_rows: &'a [usize],
    pub test_rows: &'a [usize],
    /// Ground-truth positions per trajectory sample (reporting only).
    pub truth: ArrayView2<'a, f64>,
    pub timestamps: &'a [f64],
}

impl RefineData<'_> {
    fn samples(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.features.sample_index[r]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.imu.len();
        if self.truth.nrows() != n || self.timestamps.len() != n {
            return Err(Error::shape("truth, timestamps and IMU lengths differ"));
        }
        let rows = self.features.rows();
        if self.train_rows.is_empty() || self.test_rows.is_empty() {
            return Err(Error::EmptyDataset("train and test splits must be nonempty".into()));
        }
        if self.train_rows.iter().chain(self.test_rows).any(|&r| r >= rows) {
            return Err(Error::input("split row out of range"));
        }
        if self.features.sample_index.iter().any(|&i| i >= n) {
            return Err(Error::input("feature sample index beyond trajectory"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Training epochs per iteration; iteration 0 is plain pseudo-label training.
    pub epochs: Vec<usize>,
    pub train: TrainConfig,
    pub fit: FitConfig,
    /// Smooth test predictions in time order before scoring.
    pub smoothing: Option<SmootherConfig>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            epochs: vec![100, 200, 300, 400],
            train: TrainConfig::default(),
            fit: FitConfig::default(),
            smoothing: Some(SmootherConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineIteration {
    pub iteration: usize,
    pub epochs: usize,
    /// Pseudo-labels for every trajectory sample.
    pub pseudo_labels: Array2<f64>,
    /// Pseudo-label error over the training samples.
    pub pseudo_error: ErrorSummary,
    pub test_error: ErrorReport,
    /// Largest horizontal pseudo-label move relative to the previous iteration.
    pub label_change: f64,
    /// Trained network, parameters rounded through `f32` as checkpointed.
    pub model: Mlp,
    pub curve: Vec<EpochStats>,
}

/// Predictions for `rows`, optionally smoothed along time, scored against
/// the truth.
pub fn evaluate_predictions(
    pred: ArrayView2<f64>,
    data: &RefineData,
    rows: &[usize],
    smoothing: Option<&SmootherConfig>,
) -> Result<ErrorReport> {
    let samples = data.samples(rows);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| samples[i]);
    let sorted_samples: Vec<usize> = order.iter().map(|&i| samples[i]).collect();
    let mut p = pred.select(Axis(0), &order).slice(s![.., ..2]).to_owned();
    if let Some(cfg) = smoothing {
        if p.nrows() >= 2 {
            let t: Vec<f64> = sorted_samples.iter().map(|&i| data.timestamps[i]).collect();
            p = rts_smooth(p.view(), &t, cfg)?;
        }
    }
    let truth = data.truth.select(Axis(0), &sorted_samples);
    ErrorReport::between(p.view(), truth.view())
}

/// Trains on `labels` (per trajectory sample) at the training rows and
/// scores on the test rows.
pub fn train_and_score(
    data: &RefineData,
    labels: ArrayView2<f64>,
    kind: LabelKind,
    train: &TrainConfig,
    smoothing: Option<&SmootherConfig>,
    seed: u64,
) -> Result<(Mlp, Vec<EpochStats>, ErrorReport)> {
    let x = data.features.features.select(Axis(0), data.train_rows);
    let y = labels.select(Axis(0), &data.samples(data.train_rows));
    let outcome = train_mlp(x.view(), y.view(), kind, Some(&data.features.layout), train, seed)?;
    let model = outcome.last.rounded_to_f32();
    let xt = data.features.features.select(Axis(0), data.test_rows);
    let pred = predict(&model, xt.view())?;
    let report = evaluate_predictions(pred.view(), data, data.test_rows, smoothing)?;
    Ok((model, outcome.curve, report))
}

fn max_horizontal_change(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| (x[0] - y[0]).hypot(x[1] - y[1]))
        .fold(0.0, f64::max)
}

/// Alternates pseudo-label fitting and network training.
///
/// Iteration 0 fits without model anchors; each later iteration predicts the
/// training positions with the previous network, refits every segment
/// anchored to those predictions, and trains a freshly initialized network.
pub fn refinement_loop(data: &RefineData, cfg: &RefineConfig, seed: u64) -> Result<Vec<RefineIteration>> {
    data.validate()?;
    if cfg.epochs.is_empty() {
        return Err(Error::config("refinement needs at least one iteration"));
    }
    let dims = data.imu.dims();
    let train_samples = data.samples(data.train_rows);
    let mut out: Vec<RefineIteration> = Vec::with_capacity(cfg.epochs.len());
    for (it, &epochs) in cfg.epochs.iter().enumerate() {
        let anchors = match out.last() {
            None => None,
            Some(prev) => {
                let x = data.features.features.select(Axis(0), data.train_rows);
                let pred = predict(&prev.model, x.view())?;
                let mut positions = Array2::zeros((data.imu.len(), dims));
                let mut present = vec![false; data.imu.len()];
                for (k, &sample) in train_samples.iter().enumerate() {
                    positions.row_mut(sample).assign(&pred.slice(s![k, ..dims]));
                    present[sample] = true;
                }
                Some(ModelAnchors { positions, present })
            }
        };
        let fit = fit_trajectory(
            data.imu,
            data.control_points,
            &cfg.fit,
            anchors.as_ref(),
            mix(seed, stream::FIT, it as u64),
        )?;
        let labels = fit.pseudo_labels;
        let pseudo_error = ErrorReport::between(
            labels.select(Axis(0), &train_samples).view(),
            data.truth.select(Axis(0), &train_samples).view(),
        )?
        .summary;
        let train = TrainConfig {
            epochs,
            ..cfg.train.clone()
        };
        let (model, curve, test_error) = train_and_score(
            data,
            labels.view(),
            LabelKind::Pseudo,
            &train,
            cfg.smoothing.as_ref(),
            mix(seed, stream::TRAIN, 1000 + it as u64),
        )?;
        let label_change = out.last().map_or(0.0, |p| max_horizontal_change(&p.pseudo_labels, &labels));
        log::info!(
            "refinement {it}: pseudo-label mean {:.3} m, test mean {:.3} m, max label move {:.4} m",
            pseudo_error.mean,
            test_error.summary.mean,
            label_change
        );
        out.push(RefineIteration {
            iteration: it,
            epochs,
            pseudo_labels: labels,
            pseudo_error,
            test_error,
            label_change,
            model,
            curve,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{prepare, refine_data, simulate, ExperimentConfig};

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.samples = 400;
        cfg.preprocess.feature_bins = 16;
        cfg.train.hidden = [16, 16];
        cfg.train.batch_size = 32;
        cfg.train.learning_rate = 1e-3;
        cfg.train.lr_drop_epochs = 15;
        cfg.train.cir_shift_bins = 0;
        cfg.refine_epochs = vec![20, 20];
        cfg
    }

    #[test]
    fn each_iteration_starts_from_a_fresh_network() {
        let cfg = small();
        let sim = simulate(&cfg, 5).unwrap();
        let prep = prepare(&cfg, &sim, 5).unwrap();
        let its = refinement_loop(&refine_data(&sim, &prep), &cfg.refine_config(), 5).unwrap();
        assert_eq!(its.len(), 2);
        let (a, b) = (&its[0], &its[1]);
        // Retraining from scratch on iteration 1's labels reproduces its model
        // exactly, so nothing carries over from iteration 0.
        let train = TrainConfig {
            epochs: 20,
            ..cfg.train.clone()
        };
        let (model, curve, report) = train_and_score(
            &refine_data(&sim, &prep),
            b.pseudo_labels.view(),
            LabelKind::Pseudo,
            &train,
            cfg.smoothing().as_ref(),
            mix(5, stream::TRAIN, 1001),
        )
        .unwrap();
        assert_eq!(model, b.model);
        assert_eq!(curve, b.curve);
        assert_eq!(report, b.test_error);
        assert_ne!(a.model, b.model);
        assert_eq!(a.label_change, 0.0);
        assert!(b.label_change.is_finite());
        assert!(its.iter().all(|i| i.test_error.summary.count == prep.test_rows.len()));
    }

    #[test]
    fn truth_anchors_pull_noisy_labels_toward_truth() {
        let mut cfg = small();
        cfg.scenario.imu.noise_density *= 20.0;
        cfg.scenario.imu.constant_bias *= 3.0;
        let sim = simulate(&cfg, 8).unwrap();
        let truth = &sim.truth.positions;
        let err = |labels: &Array2<f64>| ErrorReport::between(labels.view(), truth.view()).unwrap().summary.mean;
        let plain = fit_trajectory(&sim.imu, &sim.control_points, &cfg.fit, None, 1).unwrap();
        let anchors = ModelAnchors {
            positions: truth.clone(),
            present: vec![true; truth.nrows()],
        };
        let anchored = fit_trajectory(&sim.imu, &sim.control_points, &cfg.fit, Some(&anchors), 1).unwrap();
        assert!(
            err(&anchored.pseudo_labels) < err(&plain.pseudo_labels),
            "{} vs {}",
            err(&anchored.pseudo_labels),
            err(&plain.pseudo_labels)
        );
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let cfg = small();
        let sim = simulate(&cfg, 1).unwrap();
        let prep = prepare(&cfg, &sim, 1).unwrap();
        let rc = RefineConfig {
            epochs: vec![],
            ..cfg.refine_config()
        };
        assert!(refinement_loop(&refine_data(&sim, &prep), &rc, 1).is_err());
    }
}
