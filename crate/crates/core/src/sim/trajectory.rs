use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Ground-truth motion of the UE.
///
/// `velocities[n] = (positions[n] - positions[n-1]) / dt_n` and
/// `accelerations[n] = (velocities[n] - velocities[n-1]) / dt_n` for `n >= 1`;
/// row 0 carries `velocities[0] = velocities[1]` and zero acceleration. Dead
/// reckoning the accelerations from `(positions[0], velocities[0])` therefore
/// reproduces the positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries {
    pub timestamps: Vec<f64>,
    pub positions: Array2<f64>,
    pub velocities: Array2<f64>,
    pub accelerations: Array2<f64>,
}

impl TrajectorySeries {
    /// Builds a series from timestamps and positions, deriving velocity and
    /// acceleration by backward differences.
    pub fn from_positions(timestamps: Vec<f64>, positions: Array2<f64>) -> Result<Self> {
        let n = timestamps.len();
        if n < 2 || positions.nrows() != n {
            return Err(Error::shape(format!(
                "{} timestamps for {} positions (need >= 2 of each)",
                n,
                positions.nrows()
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("timestamps must be strictly increasing"));
        }
        let d = positions.ncols();
        let mut velocities = Array2::zeros((n, d));
        let mut accelerations = Array2::zeros((n, d));
        for i in 1..n {
            let dt = timestamps[i] - timestamps[i - 1];
            for k in 0..d {
                velocities[[i, k]] = (positions[[i, k]] - positions[[i - 1, k]]) / dt;
            }
        }
        for k in 0..d {
            velocities[[0, k]] = velocities[[1, k]];
        }
        for i in 1..n {
            let dt = timestamps[i] - timestamps[i - 1];
            for k in 0..d {
                accelerations[[i, k]] = (velocities[[i, k]] - velocities[[i - 1, k]]) / dt;
            }
        }
        Ok(Self {
            timestamps,
            positions,
            velocities,
            accelerations,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.positions.ncols()
    }

    /// Per-sample time deltas; entry 0 repeats entry 1.
    pub fn dt(&self) -> Vec<f64> {
        let mut dt: Vec<f64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        dt.insert(0, dt[0]);
        dt
    }
}

/// Bounded-turn random walk confined to the floor rectangle, with optional
/// periodic returns through the start position.
pub fn simulate_trajectory(config: &ScenarioConfig, seed: u64) -> Result<TrajectorySeries> {
    config.validate()?;
    let floor = config.floor;
    let walker = &config.walker;
    let home = walker
        .start
        .unwrap_or([floor.width / 2.0, floor.height / 2.0]);
    if !floor.contains(home) {
        return Err(Error::config("walker start lies outside the floor"));
    }

    let mut rng = rng::substream(seed, stream::WALK, 0);
    let n = config.samples;
    let mut xy = Vec::with_capacity(n);
    let mut pos = home;
    let mut heading = rng.gen_range(0.0..2.0 * PI);
    let mut since_home = 0usize;
    xy.push(pos);

    for _ in 1..n {
        let step = walker.step_size * (1.0 + walker.step_jitter * rng.gen_range(-1.0..=1.0));
        let to_home = [home[0] - pos[0], home[1] - pos[1]];
        let home_dist = to_home[0].hypot(to_home[1]);
        let homing = walker.return_after > 0 && since_home >= walker.return_after;
        let turn = rng.gen_range(-1.0..=1.0) * walker.max_turn;
        if homing {
            heading = to_home[1].atan2(to_home[0]) + 0.1 * turn;
        } else {
            heading += turn;
        }
        if homing && home_dist <= step {
            since_home = 0;
        } else {
            since_home += 1;
        }

        let mut next = [pos[0] + step * heading.cos(), pos[1] + step * heading.sin()];
        if next[0] < 0.0 {
            next[0] = -next[0];
            heading = PI - heading;
        } else if next[0] > floor.width {
            next[0] = 2.0 * floor.width - next[0];
            heading = PI - heading;
        }
        if next[1] < 0.0 {
            next[1] = -next[1];
            heading = -heading;
        } else if next[1] > floor.height {
            next[1] = 2.0 * floor.height - next[1];
            heading = -heading;
        }
        next[0] = next[0].clamp(0.0, floor.width);
        next[1] = next[1].clamp(0.0, floor.height);
        pos = next;
        xy.push(pos);
    }

    let d = config.dims;
    let mut positions = Array2::zeros((n, d));
    for (i, p) in xy.iter().enumerate() {
        positions[[i, 0]] = p[0];
        positions[[i, 1]] = p[1];
        if d == 3 {
            positions[[i, 2]] = config.ue_height;
        }
    }
    let timestamps = (0..n).map(|i| i as f64 * walker.step_duration).collect();
    TrajectorySeries::from_positions(timestamps, positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::dead_reckon;
    use crate::sim::config::{Floor, WalkerConfig};

    fn unit_floor() -> ScenarioConfig {
        ScenarioConfig {
            samples: 10,
            floor: Floor {
                width: 1.0,
                height: 1.0,
            },
            trps: vec![[0.0, 0.0, 2.0]],
            walker: WalkerConfig {
                step_size: 0.2,
                ..WalkerConfig::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn confined_to_floor() {
        let t = simulate_trajectory(&unit_floor(), 0).unwrap();
        assert_eq!(t.len(), 10);
        for row in t.positions.rows() {
            assert!((0.0..=1.0).contains(&row[0]) && (0.0..=1.0).contains(&row[1]));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = ScenarioConfig::default();
        assert_eq!(simulate_trajectory(&cfg, 0).unwrap(), simulate_trajectory(&cfg, 0).unwrap());
        assert_ne!(simulate_trajectory(&cfg, 0).unwrap(), simulate_trajectory(&cfg, 1).unwrap());
    }

    #[test]
    fn derived_accelerations_reproduce_positions() {
        let mut cfg = ScenarioConfig::default();
        cfg.samples = 5000;
        let t = simulate_trajectory(&cfg, 3).unwrap();
        let dt = t.dt();
        let x0 = t.positions.row(0).to_owned();
        let v0 = t.velocities.row(0).to_owned();
        let (x, _) = dead_reckon(
            t.accelerations.slice(ndarray::s![1.., ..]),
            x0.view(),
            v0.view(),
            &dt[1..],
        )
        .unwrap();
        let truth = t.positions.slice(ndarray::s![1.., ..]);
        let err = (&x - &truth).iter().fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(err <= 1e-9, "reconstruction error {err}");
    }

    #[test]
    fn mean_step_matches_config() {
        let mut cfg = ScenarioConfig::default();
        cfg.samples = 4000;
        cfg.walker.step_size = 0.034;
        let t = simulate_trajectory(&cfg, 1).unwrap();
        let steps: Vec<f64> = (1..t.len())
            .map(|i| {
                let a = t.positions.row(i);
                let b = t.positions.row(i - 1);
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .collect();
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        // reflections at walls can only shorten a step
        assert!((mean - 0.034).abs() < 0.034 * 0.03, "mean step {mean}");
    }

    #[test]
    fn returns_through_start() {
        let mut cfg = ScenarioConfig::default();
        cfg.samples = 3000;
        cfg.walker.return_after = 200;
        let t = simulate_trajectory(&cfg, 5).unwrap();
        let start = t.positions.row(0).to_owned();
        let mut visits = 0;
        let mut inside = true;
        for row in t.positions.rows() {
            let d = (row[0] - start[0]).hypot(row[1] - start[1]);
            if d < 0.2 && !inside {
                visits += 1;
            }
            inside = d < 0.2;
        }
        assert!(visits >= 5, "only {visits} returns");
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let p = Array2::zeros((3, 2));
        assert!(TrajectorySeries::from_positions(vec![0.0, 1.0, 1.0], p).is_err());
    }
}
