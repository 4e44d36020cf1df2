use ndarray::{s, Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integrate::{dead_reckon, AnchorState, Segment};
use super::loss::SegmentAnchors;
use super::optimize::{fit_segment, FitConfig};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::sim::{ControlPoint, ImuSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Between two anchors, fitted with both integrations.
    Bridged,
    /// Before the first anchor: backward dead reckoning only.
    LeadingTail,
    /// After the last anchor: forward dead reckoning only.
    TrailingTail,
}

/// Sample ranges (inclusive) covered by each segment, in trajectory order.
pub fn segment_bounds(samples: usize, anchors: &[usize]) -> Vec<(usize, usize, SegmentKind)> {
    let mut out = Vec::new();
    let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
        return out;
    };
    if first > 0 {
        out.push((0, first, SegmentKind::LeadingTail));
    }
    for w in anchors.windows(2) {
        out.push((w[0], w[1], SegmentKind::Bridged));
    }
    if last + 1 < samples {
        out.push((last, samples - 1, SegmentKind::TrailingTail));
    }
    out
}

/// Per-sample position targets from a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelAnchors {
    /// `n x D`.
    pub positions: Array2<f64>,
    pub present: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostics {
    pub segment: usize,
    pub kind: SegmentKind,
    pub start_sample: usize,
    pub end_sample: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub position_loss: f64,
    pub velocity_loss: f64,
    pub regularization_loss: f64,
    pub best_step: usize,
    pub step_size: f64,
    /// `|x_B(start) - anchor_start|` at the fitted corrections.
    pub start_residual: f64,
    /// `|x_F(end) - anchor_end|` at the fitted corrections.
    pub end_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFit {
    /// `n x D` pseudo-labels for every sample.
    pub pseudo_labels: Array2<f64>,
    /// True where the label comes from one-sided dead reckoning.
    pub one_sided: Vec<bool>,
    /// Per-step corrections, zero on tails. `n x D`, row 0 unused.
    pub corrections: Array2<f64>,
    pub segments: Vec<SegmentDiagnostics>,
}

fn checked_anchors(imu: &ImuSeries, control: &[ControlPoint]) -> Result<Vec<ControlPoint>> {
    let (n, d) = (imu.len(), imu.dims());
    if control.is_empty() {
        return Err(Error::input("at least one control point is required"));
    }
    let mut cps = control.to_vec();
    cps.sort_by_key(|c| c.sample_index);
    cps.dedup_by_key(|c| c.sample_index);
    for c in &cps {
        if c.sample_index >= n {
            return Err(Error::input(format!(
                "control point at sample {} beyond {n} IMU samples",
                c.sample_index
            )));
        }
        if c.position.len() != d || c.velocity.len() != d {
            return Err(Error::shape(format!("control point dimension differs from IMU ({d})")));
        }
    }
    Ok(cps)
}

fn state(c: &ControlPoint) -> AnchorState {
    AnchorState {
        position: c.position.clone(),
        velocity: c.velocity.clone(),
    }
}

fn build_segment(imu: &ImuSeries, a: &ControlPoint, b: &ControlPoint) -> Result<Segment> {
    let (s0, s1) = (a.sample_index, b.sample_index);
    Segment::new(
        imu.dt[s0 + 1..=s1].to_vec(),
        imu.accel.slice(s![s0 + 1..=s1, ..]).to_owned(),
        state(a),
        state(b),
    )
}

/// Backward dead reckoning from `anchor` to sample 0; returns rows `0..anchor`.
fn backward_tail(imu: &ImuSeries, anchor: &ControlPoint) -> Array2<f64> {
    let e = anchor.sample_index;
    let d = imu.dims();
    let mut x = anchor.position.clone();
    let mut v = anchor.velocity.clone();
    let mut out = Array2::zeros((e, d));
    for k in (1..=e).rev() {
        let h = imu.dt[k];
        for j in 0..d {
            let vk = v[j];
            v[j] -= imu.accel[[k, j]] * h;
            x[j] -= vk * h;
        }
        out.row_mut(k - 1).assign(&x);
    }
    out
}

/// Forward dead reckoning from `anchor` up to sample `end` (inclusive);
/// returns rows `anchor+1..=end`.
fn forward_run(imu: &ImuSeries, anchor: &ControlPoint, end: usize) -> Result<Array2<f64>> {
    let s0 = anchor.sample_index;
    let (x, _) = dead_reckon(
        imu.accel.slice(s![s0 + 1..=end, ..]),
        anchor.position.view(),
        anchor.velocity.view(),
        &imu.dt[s0 + 1..=end],
    )?;
    Ok(x)
}

/// Dead-reckoning baseline: forward integration restarted at every anchor,
/// backward integration before the first one.
pub fn dead_reckon_trajectory(imu: &ImuSeries, control: &[ControlPoint]) -> Result<Array2<f64>> {
    let cps = checked_anchors(imu, control)?;
    let n = imu.len();
    let mut out = Array2::zeros((n, imu.dims()));
    let first = cps[0].sample_index;
    out.slice_mut(s![..first, ..]).assign(&backward_tail(imu, &cps[0]));
    for (i, c) in cps.iter().enumerate() {
        let end = cps.get(i + 1).map_or(n - 1, |nx| nx.sample_index - 1);
        out.row_mut(c.sample_index).assign(&c.position);
        if end > c.sample_index {
            out.slice_mut(s![c.sample_index + 1..=end, ..])
                .assign(&forward_run(imu, c, end)?);
        }
    }
    Ok(out)
}

/// Fits every bridged segment independently (in parallel) and assembles
/// pseudo-labels for the full trajectory.
///
/// Anchor samples take the measured control-point position. With `model`
/// anchors, the position term of each segment is replaced by distances to
/// the model's predictions wherever one is present.
pub fn fit_trajectory(
    imu: &ImuSeries,
    control: &[ControlPoint],
    cfg: &FitConfig,
    model: Option<&ModelAnchors>,
    seed: u64,
) -> Result<TrajectoryFit> {
    cfg.validate()?;
    let cps = checked_anchors(imu, control)?;
    let (n, d) = (imu.len(), imu.dims());
    if let Some(m) = model {
        if m.positions.dim() != (n, d) || m.present.len() != n {
            return Err(Error::shape(format!(
                "model anchors {:?} vs trajectory {n} x {d}",
                m.positions.dim()
            )));
        }
    }
    let anchor_idx: Vec<usize> = cps.iter().map(|c| c.sample_index).collect();
    let bounds = segment_bounds(n, &anchor_idx);

    let fits = bounds
        .par_iter()
        .enumerate()
        .map(|(si, &(s0, s1, kind))| -> Result<Option<_>> {
            if kind != SegmentKind::Bridged {
                return Ok(None);
            }
            let a = anchor_idx.binary_search(&s0).unwrap();
            let seg = build_segment(imu, &cps[a], &cps[a + 1])?;
            let anchors = model.map(|m| SegmentAnchors {
                positions: m.positions.slice(s![s0..=s1, ..]).to_owned(),
                present: m.present[s0..=s1].to_vec(),
            });
            let mut r = rng::substream(seed, stream::FIT, si as u64);
            Ok(Some(fit_segment(&seg, cfg, anchors.as_ref(), &mut r)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut labels = Array2::zeros((n, d));
    let mut corrections = Array2::zeros((n, d));
    let mut one_sided = vec![false; n];
    let mut segments = Vec::with_capacity(bounds.len());
    for (si, (&(s0, s1, kind), fit)) in bounds.iter().zip(fits).enumerate() {
        let mut diag = SegmentDiagnostics {
            segment: si,
            kind,
            start_sample: s0,
            end_sample: s1,
            steps: s1 - s0,
            initial_loss: 0.0,
            final_loss: 0.0,
            position_loss: 0.0,
            velocity_loss: 0.0,
            regularization_loss: 0.0,
            best_step: 0,
            step_size: 0.0,
            start_residual: 0.0,
            end_residual: 0.0,
        };
        match (kind, fit) {
            (SegmentKind::Bridged, Some(fit)) => {
                let pl = fit.pseudo_labels();
                labels.slice_mut(s![s0..=s1, ..]).assign(&pl);
                corrections.slice_mut(s![s0 + 1..=s1, ..]).assign(&fit.corrections);
                let l = fit.final_loss;
                diag.initial_loss = fit.initial_loss.total;
                diag.final_loss = l.total;
                diag.position_loss = l.position;
                diag.velocity_loss = l.velocity;
                diag.regularization_loss = l.regularization;
                diag.best_step = fit.best_step;
                diag.step_size = fit.step_size;
                let cp = |i: usize| &cps[anchor_idx.binary_search(&i).unwrap()].position;
                let resid = |a: ndarray::ArrayView1<f64>, b: &Array1<f64>| (&a - b).mapv(|e| e * e).sum().sqrt();
                diag.start_residual = resid(fit.backward_positions.row(0), cp(s0));
                diag.end_residual = resid(fit.forward_positions.row(s1 - s0), cp(s1));
            }
            (SegmentKind::LeadingTail, _) => {
                labels.slice_mut(s![..s1, ..]).assign(&backward_tail(imu, &cps[0]));
                one_sided[..s1].iter_mut().for_each(|f| *f = true);
            }
            (SegmentKind::TrailingTail, _) => {
                let last = cps.last().unwrap();
                labels.slice_mut(s![s0 + 1..=s1, ..]).assign(&forward_run(imu, last, s1)?);
                one_sided[s0 + 1..=s1].iter_mut().for_each(|f| *f = true);
            }
            _ => unreachable!("bridged segments always carry a fit"),
        }
        segments.push(diag);
    }
    // anchors carry the measured control-point position
    for c in &cps {
        labels.row_mut(c.sample_index).assign(&c.position);
    }
    Ok(TrajectoryFit {
        pseudo_labels: labels,
        one_sided,
        corrections,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        place_control_points, simulate_imu, simulate_trajectory, ImuNoiseConfig, ScenarioConfig,
    };

    #[test]
    fn bounds_cover_every_sample_once() {
        assert_eq!(
            segment_bounds(10, &[3, 6]),
            vec![
                (0, 3, SegmentKind::LeadingTail),
                (3, 6, SegmentKind::Bridged),
                (6, 9, SegmentKind::TrailingTail)
            ]
        );
        assert_eq!(segment_bounds(10, &[0, 9]), vec![(0, 9, SegmentKind::Bridged)]);
        assert_eq!(segment_bounds(5, &[0]), vec![(0, 4, SegmentKind::TrailingTail)]);
        assert!(segment_bounds(5, &[]).is_empty());
    }

    fn setup(noiseless: bool, samples: usize) -> (crate::sim::TrajectorySeries, ImuSeries, Vec<ControlPoint>) {
        let mut cfg = ScenarioConfig::default();
        cfg.samples = samples;
        cfg.walker.return_after = 100;
        let truth = simulate_trajectory(&cfg, 5).unwrap();
        let imu_cfg = if noiseless { ImuNoiseConfig::noiseless() } else { cfg.imu.clone() };
        let imu = simulate_imu(&truth, &imu_cfg).unwrap();
        let cps = place_control_points(&truth, &cfg.control_points, 5).unwrap();
        (truth, imu, cps)
    }

    #[test]
    fn segment_count_matches_anchor_visits() {
        let (_, imu, cps) = setup(true, 600);
        assert!(cps.len() >= 3, "walker should revisit the start: {}", cps.len());
        let fit = fit_trajectory(&imu, &cps, &FitConfig { steps: 20, ..Default::default() }, None, 1).unwrap();
        let bridged = fit.segments.iter().filter(|s| s.kind == SegmentKind::Bridged).count();
        assert_eq!(bridged, cps.len() - 1);
        for c in &cps {
            assert_eq!(fit.pseudo_labels.row(c.sample_index), c.position);
        }
    }

    #[test]
    fn noise_free_labels_match_truth() {
        let (truth, imu, cps) = setup(true, 500);
        let fit = fit_trajectory(&imu, &cps, &FitConfig::default(), None, 2).unwrap();
        let err = (&fit.pseudo_labels - &truth.positions)
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(err <= 1e-3, "max error {err}");
        let dr = dead_reckon_trajectory(&imu, &cps).unwrap();
        let dr_err = (&dr - &truth.positions).iter().fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(dr_err <= 1e-6, "dead reckoning on exact IMU: {dr_err}");
    }

    #[test]
    fn fit_beats_dead_reckoning_on_noisy_imu() {
        let (truth, imu, cps) = setup(false, 800);
        let fit = fit_trajectory(&imu, &cps, &FitConfig::default(), None, 3).unwrap();
        let dr = dead_reckon_trajectory(&imu, &cps).unwrap();
        let mean_err = |x: &Array2<f64>| {
            (x - &truth.positions).rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / x.nrows() as f64
        };
        let (a, b) = (mean_err(&fit.pseudo_labels), mean_err(&dr));
        assert!(a * 3.0 <= b, "fit {a} vs dead reckoning {b}");
    }

    #[test]
    fn parallel_and_serial_agree() {
        let (_, imu, cps) = setup(false, 400);
        let cfg = FitConfig { steps: 100, ..Default::default() };
        let a = fit_trajectory(&imu, &cps, &cfg, None, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit_trajectory(&imu, &cps, &cfg, None, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tails_are_one_sided() {
        let (truth, imu, cps) = setup(true, 300);
        let late: Vec<ControlPoint> = cps.into_iter().filter(|c| c.sample_index > 0).collect();
        if late.is_empty() {
            return;
        }
        let fit = fit_trajectory(&imu, &late, &FitConfig { steps: 10, ..Default::default() }, None, 1).unwrap();
        let first = late[0].sample_index;
        assert!(fit.one_sided[..first].iter().all(|&f| f));
        // exact IMU: backward dead reckoning reproduces the truth
        let err = (&fit.pseudo_labels.slice(s![..first, ..]) - &truth.positions.slice(s![..first, ..]))
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(err < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, imu, mut cps) = setup(true, 100);
        assert!(fit_trajectory(&imu, &[], &FitConfig::default(), None, 0).is_err());
        cps[0].sample_index = 1000;
        assert!(fit_trajectory(&imu, &cps, &FitConfig::default(), None, 0).is_err());
    }
}
