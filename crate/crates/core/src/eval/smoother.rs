use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant-velocity Kalman/RTS smoother settings, applied per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    /// White-acceleration standard deviation (m/s^2).
    pub process_noise: f64,
    /// Position observation standard deviation (m).
    pub observation_noise: f64,
    /// Prior standard deviation of the initial velocity (m/s).
    pub initial_velocity_std: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.1,
            observation_noise: 0.1,
            initial_velocity_std: 1.0,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        for v in [self.process_noise, self.observation_noise, self.initial_velocity_std] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("smoother noise scales must be positive and finite"));
            }
        }
        Ok(())
    }
}

type M2 = [[f64; 2]; 2];

fn inv2(m: &M2) -> Option<M2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0 && det.is_finite()) {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Forward Kalman filter and backward Rauch-Tung-Striebel pass under a
/// constant-velocity model, independently on every column.
pub fn rts_smooth(positions: ArrayView2<f64>, timestamps: &[f64], cfg: &SmootherConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = positions.nrows();
    if n < 2 {
        return Err(Error::input("smoothing needs at least two samples"));
    }
    if timestamps.len() != n {
        return Err(Error::input(format!("{} timestamps for {n} positions", timestamps.len())));
    }
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::input("timestamps must be strictly increasing"));
    }
    let q = cfg.process_noise * cfg.process_noise;
    let r = cfg.observation_noise * cfg.observation_noise;
    let mut out = Array2::zeros(positions.dim());

    for (col, z) in positions.columns().into_iter().enumerate() {
        let mut xf = vec![[0.0; 2]; n];
        let mut pf = vec![[[0.0; 2]; 2]; n];
        let mut xp = vec![[0.0; 2]; n];
        let mut pp = vec![[[0.0; 2]; 2]; n];
        let mut x = [z[0], 0.0];
        let mut p: M2 = [[r, 0.0], [0.0, cfg.initial_velocity_std.powi(2)]];
        for k in 0..n {
            if k > 0 {
                let dt = timestamps[k] - timestamps[k - 1];
                let f: M2 = [[1.0, dt], [0.0, 1.0]];
                x = [x[0] + dt * x[1], x[1]];
                let mut fp = mul(&mul(&f, &p), &transpose(&f));
                fp[0][0] += q * dt.powi(3) / 3.0;
                fp[0][1] += q * dt.powi(2) / 2.0;
                fp[1][0] += q * dt.powi(2) / 2.0;
                fp[1][1] += q * dt;
                p = fp;
            }
            xp[k] = x;
            pp[k] = p;
            let s = p[0][0] + r;
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Numerical(format!("innovation variance {s} at sample {k}")));
            }
            let gain = [p[0][0] / s, p[1][0] / s];
            let innov = z[k] - x[0];
            x = [x[0] + gain[0] * innov, x[1] + gain[1] * innov];
            p = [
                [p[0][0] - gain[0] * p[0][0], p[0][1] - gain[0] * p[0][1]],
                [p[1][0] - gain[1] * p[0][0], p[1][1] - gain[1] * p[0][1]],
            ];
            xf[k] = x;
            pf[k] = p;
        }
        let mut xs = xf[n - 1];
        out[[n - 1, col]] = xs[0];
        for k in (0..n - 1).rev() {
            let dt = timestamps[k + 1] - timestamps[k];
            let f: M2 = [[1.0, dt], [0.0, 1.0]];
            let pinv = inv2(&pp[k + 1])
                .ok_or_else(|| Error::Numerical(format!("singular predicted covariance at sample {}", k + 1)))?;
            let c = mul(&mul(&pf[k], &transpose(&f)), &pinv);
            let d = [xs[0] - xp[k + 1][0], xs[1] - xp[k + 1][1]];
            xs = [
                xf[k][0] + c[0][0] * d[0] + c[0][1] * d[1],
                xf[k][1] + c[1][0] * d[0] + c[1][1] * d[1],
            ];
            out[[k, col]] = xs[0];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 0.16).collect()
    }

    #[test]
    fn constant_position_is_kept() {
        let p = Array2::from_shape_fn((50, 2), |(_, j)| [3.0, -1.0][j]);
        let cfg = SmootherConfig {
            process_noise: 1e-6,
            ..Default::default()
        };
        let s = rts_smooth(p.view(), &times(50), &cfg).unwrap();
        assert!((&s - &p).iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn straight_line_stays_on_line() {
        let t = times(80);
        let p = Array2::from_shape_fn((80, 2), |(i, j)| [1.0 + 0.3 * t[i], 2.0 - 0.7 * t[i]][j]);
        let s = rts_smooth(p.view(), &t, &SmootherConfig::default()).unwrap();
        // distance to the line through (1, 2) with direction (0.3, -0.7)
        let (ux, uy) = (0.3 / 0.58f64.sqrt(), -0.7 / 0.58f64.sqrt());
        for row in s.rows() {
            let (dx, dy) = (row[0] - 1.0, row[1] - 2.0);
            assert!((dx * uy - dy * ux).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_equivariant() {
        let mut r = Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let p = Array2::from_shape_fn((60, 3), |_| noise.sample(&mut r));
        let c = Array1::from_vec(vec![12.0, -7.5, 3.0]);
        let t = times(60);
        let a = rts_smooth(p.view(), &t, &SmootherConfig::default()).unwrap();
        let b = rts_smooth((&p + &c).view(), &t, &SmootherConfig::default()).unwrap();
        assert!((&(&a + &c) - &b).iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn reduces_noise_on_lines() {
        let noise = Normal::new(0.0, 0.05).unwrap();
        let t = times(200);
        let truth = Array2::from_shape_fn((200, 2), |(i, j)| [0.3 * t[i], 0.1 * t[i]][j]);
        let mut wins = 0;
        for seed in 0..100 {
            let mut r = Rng::seed_from_u64(seed);
            let noisy = truth.mapv(|v| v + noise.sample(&mut r));
            let s = rts_smooth(noisy.view(), &t, &SmootherConfig::default()).unwrap();
            let rmse = |x: &Array2<f64>| ((x - &truth).mapv(|e| e * e).mean().unwrap()).sqrt();
            if rmse(&s) < rmse(&noisy) {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}/100");
    }

    #[test]
    fn input_errors() {
        let p = Array2::zeros((3, 2));
        assert!(rts_smooth(p.view(), &[0.0, 1.0], &SmootherConfig::default()).is_err());
        assert!(rts_smooth(p.view(), &[0.0, 1.0, 1.0], &SmootherConfig::default()).is_err());
        assert!(rts_smooth(Array2::zeros((1, 2)).view(), &[0.0], &SmootherConfig::default()).is_err());
        let bad = SmootherConfig {
            observation_noise: 0.0,
            ..Default::default()
        };
        assert!(matches!(rts_smooth(p.view(), &[0.0, 1.0, 2.0], &bad), Err(Error::Config(_))));
    }
}
