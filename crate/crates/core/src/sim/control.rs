use ndarray::Array1;
use rand::seq::index;
use rand_distr::{Distribution, Normal};

use super::config::{ControlPointSpec, Placement};
use super::trajectory::TrajectorySeries;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// A measured anchor: position and velocity at one trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoint {
    pub sample_index: usize,
    pub position: Array1<f64>,
    pub velocity: Array1<f64>,
    pub radius: f64,
}

/// Sample indices whose ground-truth positions become fiducial sites.
pub fn control_sites(n: usize, spec: &ControlPointSpec, seed: u64) -> Result<Vec<usize>> {
    spec.validate()?;
    let count = spec.site_count();
    if count > n {
        return Err(Error::config(format!(
            "{count} control points requested for {n} samples"
        )));
    }
    match &spec.placement {
        Placement::Samples { indices } => {
            if let Some(bad) = indices.iter().find(|&&i| i >= n) {
                return Err(Error::config(format!("control sample {bad} out of range (n = {n})")));
            }
            Ok(indices.clone())
        }
        Placement::Random {
            count,
            include_start,
        } => {
            let mut rng = rng::substream(seed, stream::CONTROL, 0);
            if *include_start {
                let mut sites = vec![0];
                sites.extend(index::sample(&mut rng, n - 1, count - 1).into_iter().map(|i| i + 1));
                Ok(sites)
            } else {
                Ok(index::sample(&mut rng, n, *count).into_vec())
            }
        }
    }
}

fn horizontal_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Finds every visit to every fiducial and measures an anchor for it.
///
/// A visit is a maximal run of samples within `radius` of a site; its anchor is
/// the run's sample closest to the site. Measured positions carry optional
/// Gaussian noise, and velocities are the backward difference of measured
/// positions (forward difference at sample 0), so position noise also corrupts
/// the velocity.
pub fn place_control_points(
    truth: &TrajectorySeries,
    spec: &ControlPointSpec,
    seed: u64,
) -> Result<Vec<ControlPoint>> {
    let n = truth.len();
    let sites = control_sites(n, spec, seed)?;
    let mut anchors = Vec::new();
    for &site in &sites {
        let center = truth.positions.row(site);
        let mut run: Option<(usize, f64)> = None;
        for i in 0..n {
            let d = horizontal_distance(truth.positions.row(i), center);
            if d <= spec.radius {
                run = match run {
                    Some((best, bd)) if bd <= d => Some((best, bd)),
                    _ => Some((i, d)),
                };
            } else if let Some((best, _)) = run.take() {
                anchors.push(best);
            }
        }
        if let Some((best, _)) = run {
            anchors.push(best);
        }
    }
    anchors.sort_unstable();
    anchors.dedup();

    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::config(format!("control-point noise: {e}")))?;
    let dt = truth.dt();
    let measure = |i: usize| -> Array1<f64> {
        let mut rng = rng::substream(seed, stream::CONTROL, 1 + i as u64);
        truth
            .positions
            .row(i)
            .mapv(|x| x + noise.sample(&mut rng))
    };
    Ok(anchors
        .into_iter()
        .map(|i| {
            let position = measure(i);
            let velocity = if i == 0 {
                (&measure(1) - &position) / dt[1]
            } else {
                (&position - &measure(i - 1)) / dt[i]
            };
            ControlPoint {
                sample_index: i,
                position,
                velocity,
                radius: spec.radius,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_trajectory, ScenarioConfig};

    fn scenario() -> (ScenarioConfig, TrajectorySeries) {
        let mut cfg = ScenarioConfig::default();
        cfg.samples = 2000;
        cfg.walker.return_after = 300;
        let t = simulate_trajectory(&cfg, 2).unwrap();
        (cfg, t)
    }

    #[test]
    fn noiseless_positions_equal_truth() {
        let (cfg, t) = scenario();
        let cps = place_control_points(&t, &cfg.control_points, 0).unwrap();
        assert!(cps.len() > 2);
        for cp in &cps {
            assert_eq!(cp.position, t.positions.row(cp.sample_index));
            let v = t.velocities.row(cp.sample_index);
            assert!((&cp.velocity - &v).iter().all(|e| e.abs() < 1e-9));
        }
    }

    #[test]
    fn start_site_anchors_sample_zero() {
        let (cfg, t) = scenario();
        let cps = place_control_points(&t, &cfg.control_points, 0).unwrap();
        assert_eq!(cps[0].sample_index, 0);
        // later anchors are separate visits
        assert!(cps.windows(2).all(|w| w[0].sample_index < w[1].sample_index));
    }

    #[test]
    fn too_many_points_is_config_error() {
        let (_, t) = scenario();
        let spec = ControlPointSpec {
            placement: Placement::Random {
                count: 5000,
                include_start: false,
            },
            ..ControlPointSpec::default()
        };
        assert!(matches!(place_control_points(&t, &spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn random_sites_are_distinct_and_in_range() {
        let spec = ControlPointSpec {
            placement: Placement::Random {
                count: 8,
                include_start: true,
            },
            ..ControlPointSpec::default()
        };
        let sites = control_sites(100, &spec, 4).unwrap();
        assert_eq!(sites[0], 0);
        let mut s = sites.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 8);
        assert!(sites.iter().all(|&i| i < 100));
    }

    #[test]
    fn induced_velocity_noise_matches_difference_statistics() {
        let (cfg, t) = scenario();
        let sigma = 0.05;
        let spec = ControlPointSpec {
            noise_sigma: sigma,
            placement: Placement::Random {
                count: 40,
                include_start: false,
            },
            radius: 0.0,
            ..cfg.control_points.clone()
        };
        let mut sq = 0.0;
        let mut count = 0usize;
        for seed in 0..30 {
            for cp in place_control_points(&t, &spec, seed).unwrap() {
                let truth_v = t.velocities.row(cp.sample_index);
                for (a, b) in cp.velocity.iter().zip(truth_v.iter()) {
                    sq += (a - b).powi(2);
                    count += 1;
                }
            }
        }
        let empirical = (sq / count as f64).sqrt();
        let expected = 2f64.sqrt() * sigma / cfg.walker.step_duration;
        // 2400 draws: the std estimate has ~1.5% relative standard error
        assert!((empirical / expected - 1.0).abs() < 0.06, "{empirical} vs {expected}");
    }
}
