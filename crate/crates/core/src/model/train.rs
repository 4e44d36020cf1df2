use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::mlp::{pad_targets, smooth_l1, target_mean, Mlp};
use crate::csi::{augment_cir_shift, draw_shift, FeatureLayout, MAX_JITTER_BINS};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: [usize; 2],
    pub outputs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The last `lr_drop_epochs` epochs run at `learning_rate * lr_drop_factor`.
    pub lr_drop_epochs: usize,
    pub lr_drop_factor: f64,
    pub adam: AdamConfig,
    pub smooth_l1_beta: f64,
    /// Half-width in meters of the uniform noise added to pseudo-labels.
    pub label_noise: f64,
    /// Maximum circular CIR shift in bins; 0 disables the augmentation.
    pub cir_shift_bins: i64,
    /// Start the output bias at the mean training target.
    pub init_output_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: [1024, 512],
            outputs: 3,
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-4,
            lr_drop_epochs: 50,
            lr_drop_factor: 0.1,
            adam: AdamConfig::default(),
            smooth_l1_beta: 1.0,
            label_noise: 0.05,
            cir_shift_bins: MAX_JITTER_BINS,
            init_output_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.outputs == 0 || self.hidden.contains(&0) {
            return Err(Error::config("epochs, batch size and widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.lr_drop_factor > 0.0) || !(self.smooth_l1_beta > 0.0) {
            return Err(Error::config("lr drop factor and smooth-L1 beta must be positive"));
        }
        if !(self.label_noise >= 0.0) || self.cir_shift_bins < 0 {
            return Err(Error::config("augmentation amplitudes must be non-negative"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch + self.lr_drop_epochs >= self.epochs {
            self.learning_rate * self.lr_drop_factor
        } else {
            self.learning_rate
        }
    }

    pub fn widths(&self, input: usize) -> [usize; 4] {
        [input, self.hidden[0], self.hidden[1], self.outputs]
    }
}

/// Surveyed labels get no label noise; pseudo-labels do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Truth,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest mean training loss.
    pub best: Mlp,
    pub best_epoch: usize,
    pub last: Mlp,
    pub curve: Vec<EpochStats>,
}

/// Adds uniform noise in `[-amplitude, amplitude]` to every entry.
pub fn augment_labels(mut labels: ArrayViewMut2<f64>, amplitude: f64, rng: &mut Rng) {
    if amplitude > 0.0 {
        labels.mapv_inplace(|v| v + rng.gen_range(-amplitude..=amplitude));
    }
}

pub(crate) struct EpochData<'a> {
    pub x: ArrayView2<'a, f64>,
    /// Already padded to the output width.
    pub y: ArrayView2<'a, f64>,
    /// Columns of `y` that carry real labels (noise is not added to padding).
    pub label_cols: usize,
    pub kind: LabelKind,
    pub layout: Option<&'a FeatureLayout>,
}

/// One pass over `order` in mini-batches; returns the sample-weighted mean loss.
pub(crate) fn train_epoch(
    model: &mut Mlp,
    adam: &mut Adam,
    data: &EpochData,
    order: &[usize],
    lr: f64,
    cfg: &TrainConfig,
    rng: &mut Rng,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params().len()];
    for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
        let mut xb = data.x.select(Axis(0), batch);
        let mut yb = data.y.select(Axis(0), batch);
        if let (Some(layout), true) = (data.layout, cfg.cir_shift_bins > 0) {
            for mut row in xb.rows_mut() {
                let shift = draw_shift(rng, cfg.cir_shift_bins);
                augment_cir_shift(row.as_slice_mut().unwrap(), layout, shift);
            }
        }
        if data.kind == LabelKind::Pseudo {
            augment_labels(
                yb.slice_mut(ndarray::s![.., ..data.label_cols]),
                cfg.label_noise,
                rng,
            );
        }
        let cache = model.forward_cache(xb.view())?;
        let (loss, dy) = smooth_l1(cache.output().view(), yb.view(), cfg.smooth_l1_beta)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss {loss} at epoch {epoch}, batch {bi}"
            )));
        }
        model.backward(&cache, dy, &mut grad);
        adam.step(model.params_mut(), &grad, lr);
        total += loss * batch.len() as f64;
    }
    Ok(total / order.len() as f64)
}

/// Trains a fresh network on `(x, labels)`.
///
/// Initialization draws from the `(seed, INIT)` stream and every epoch's
/// shuffle and augmentation from `(seed, TRAIN, epoch)`, so runs are
/// bit-identical for a seed. CIR shifts need the feature `layout`.
pub fn train_mlp(
    x: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    kind: LabelKind,
    layout: Option<&FeatureLayout>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset("no training rows".into()));
    }
    if labels.nrows() != n {
        return Err(Error::shape(format!("{n} feature rows vs {} labels", labels.nrows())));
    }
    if let Some(l) = layout {
        if l.width() != x.ncols() {
            return Err(Error::shape("feature layout width differs from features"));
        }
    }
    if x.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("training data must be finite"));
    }
    let y = pad_targets(labels, cfg.outputs);
    let mut model = Mlp::new(&cfg.widths(x.ncols()), &mut rng::substream(seed, stream::INIT, 0))?;
    if cfg.init_output_bias {
        let mean = target_mean(y.view());
        model.bias_mut(2).assign(&mean);
    }
    let mut adam = Adam::new(cfg.adam, model.params().len());
    let data = EpochData {
        x: x.view(),
        y: y.view(),
        label_cols: labels.ncols().min(cfg.outputs),
        kind,
        layout,
    };

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut r = rng::substream(seed, stream::TRAIN, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut r);
        let lr = cfg.learning_rate_at(epoch);
        let loss = train_epoch(&mut model, &mut adam, &data, &order, lr, cfg, &mut r, epoch)?;
        curve.push(EpochStats {
            epoch,
            learning_rate: lr,
            loss,
        });
        if loss < best.0 {
            best = (loss, epoch, model.clone());
        }
        log::debug!("epoch {epoch}: lr {lr:e} loss {loss:.5}");
    }
    Ok(TrainOutcome {
        best: best.2,
        best_epoch: best.1,
        last: model,
        curve,
    })
}

/// Runs `model` over `x` in chunks.
pub fn predict(model: &Mlp, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), model.output_dim()));
    for (i, chunk) in x.axis_chunks_iter(Axis(0), 1024).enumerate() {
        let y = model.forward(chunk)?;
        out.slice_mut(ndarray::s![i * 1024..i * 1024 + chunk.nrows(), ..]).assign(&y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::FeatureKind;
    use ndarray::array;
    use rand::SeedableRng;

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            hidden: [16, 8],
            epochs,
            batch_size: 4,
            learning_rate: 1e-2,
            lr_drop_epochs: 10,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_follow_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.lr_drop_epochs), (1e-4, 256, 50));
        assert_eq!(c.lr_drop_factor, 0.1);
        assert_eq!(c.hidden, [1024, 512]);
        assert_eq!(c.outputs, 3);
        assert_eq!(c.label_noise, 0.05);
        assert_eq!(c.cir_shift_bins, 7);
        assert_eq!(c.learning_rate_at(49), 1e-4);
        assert_eq!(c.learning_rate_at(50), 1e-4 * 0.1);
    }

    #[test]
    fn memorizes_single_sample() {
        let x = array![[0.2, -0.4, 0.9]];
        let y = array![[1.5, -2.0]];
        let out = train_mlp(x.view(), y.view(), LabelKind::Truth, None, &small_cfg(400), 1).unwrap();
        assert!(out.curve.last().unwrap().loss < 1e-3, "{:?}", out.curve.last());
        let p = out.last.forward(x.view()).unwrap();
        assert!((p[[0, 0]] - 1.5).abs() < 0.05 && (p[[0, 1]] + 2.0).abs() < 0.05);
    }

    #[test]
    fn deterministic_loss_curve() {
        let mut r = Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((37, 8), |_| r.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((37, 2), |_| r.gen_range(-1.0..1.0));
        let layout = FeatureLayout {
            trps: 2,
            antennas: 1,
            bins: 4,
            kind: FeatureKind::Magnitude,
        };
        let run = || train_mlp(x.view(), y.view(), LabelKind::Pseudo, Some(&layout), &small_cfg(5), 7).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.last, b.last);
        let c = train_mlp(x.view(), y.view(), LabelKind::Pseudo, Some(&layout), &small_cfg(5), 8).unwrap();
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn label_noise_is_bounded() {
        let mut r = Rng::seed_from_u64(1);
        let base = Array2::from_shape_fn((500, 3), |(i, j)| (i * 3 + j) as f64 * 0.01);
        let mut noisy = base.clone();
        augment_labels(noisy.view_mut(), 0.05, &mut r);
        let max = (&noisy - &base).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 0.05 + 1e-15 && max > 0.04);
    }

    #[test]
    fn permuted_rows_same_batches_same_loss() {
        let mut r = Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((20, 5), |_| r.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((20, 3), |_| r.gen_range(-1.0..1.0));
        let cfg = small_cfg(1);
        let perm: Vec<usize> = (0..20).rev().collect();
        let xp = x.select(Axis(0), &perm);
        let yp = y.select(Axis(0), &perm);
        let order: Vec<usize> = vec![3, 7, 1, 0, 19, 4, 8, 12, 2, 5, 6, 9, 10, 11, 13, 14, 15, 16, 17, 18];
        // row perm[k] of the original is row k of the permuted set
        let inverse: Vec<usize> = order.iter().map(|&i| perm.iter().position(|&p| p == i).unwrap()).collect();
        let init = Mlp::new(&cfg.widths(5), &mut Rng::seed_from_u64(9)).unwrap();
        let run = |x: &Array2<f64>, y: &Array2<f64>, ord: &[usize]| {
            let mut m = init.clone();
            let mut adam = Adam::new(cfg.adam, m.params().len());
            let data = EpochData {
                x: x.view(),
                y: y.view(),
                label_cols: 3,
                kind: LabelKind::Pseudo,
                layout: None,
            };
            let l = train_epoch(&mut m, &mut adam, &data, ord, 1e-3, &cfg, &mut Rng::seed_from_u64(2), 0).unwrap();
            (l, m)
        };
        let (la, ma) = run(&x, &y, &order);
        let (lb, mb) = run(&xp, &yp, &inverse);
        assert_eq!(la, lb);
        assert_eq!(ma, mb);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Array2::<f64>::zeros((0, 3));
        let y = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            train_mlp(x.view(), y.view(), LabelKind::Truth, None, &small_cfg(1), 0),
            Err(Error::EmptyDataset(_))
        ));
        let x = Array2::<f64>::zeros((3, 3));
        assert!(train_mlp(x.view(), y.view(), LabelKind::Truth, None, &small_cfg(1), 0).is_err());
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg(1)
        };
        assert!(matches!(
            train_mlp(x.view(), Array2::zeros((3, 2)).view(), LabelKind::Truth, None, &cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn diverging_training_reports_numerical_error() {
        let x = Array2::from_elem((8, 2), 1.0);
        let y = Array2::from_elem((8, 2), 1e308);
        let r = train_mlp(x.view(), y.view(), LabelKind::Truth, None, &small_cfg(2), 0);
        // labels are finite but the summed loss overflows
        assert!(matches!(r, Err(Error::Numerical(_))), "{r:?}");
    }
}
