use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::integrate::{backward_flat, forward_flat, Segment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub position: f64,
    pub velocity: f64,
    pub regularization: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 1e3,
            regularization: 1e4,
        }
    }
}

/// Unweighted loss terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FbLoss {
    pub total: f64,
    pub position: f64,
    pub velocity: f64,
    pub regularization: f64,
}

/// Per-state position targets from a trained model. States with an anchor
/// pull both integrations toward it; the rest keep the forward/backward
/// agreement term.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAnchors {
    /// `(N+1) x D`; rows without `present` are ignored.
    pub positions: Array2<f64>,
    pub present: Vec<bool>,
}

/// Reusable buffers for repeated loss/gradient evaluation on one segment.
pub(crate) struct FbProblem<'a> {
    n: usize,
    d: usize,
    dt: &'a [f64],
    accel: Vec<f64>,
    x0: Vec<f64>,
    v0: Vec<f64>,
    xn: Vec<f64>,
    vn: Vec<f64>,
    weights: LossWeights,
    anchors: Option<(Vec<f64>, &'a [bool])>,
    pub(crate) xf: Vec<f64>,
    pub(crate) vf: Vec<f64>,
    pub(crate) xb: Vec<f64>,
    pub(crate) vb: Vec<f64>,
    gxf: Vec<f64>,
    gvf: Vec<f64>,
    gxb: Vec<f64>,
    gvb: Vec<f64>,
}

impl<'a> FbProblem<'a> {
    pub(crate) fn new(segment: &'a Segment, weights: LossWeights, anchors: Option<&'a SegmentAnchors>) -> Result<Self> {
        let (n, d) = (segment.steps(), segment.dims());
        if [weights.position, weights.velocity, weights.regularization]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        let anchors = match anchors {
            Some(a) => {
                if a.positions.dim() != (n + 1, d) || a.present.len() != n + 1 {
                    return Err(Error::shape(format!(
                        "segment anchors {:?} / {} vs {} states of dim {d}",
                        a.positions.dim(),
                        a.present.len(),
                        n + 1
                    )));
                }
                Some((a.positions.iter().copied().collect(), a.present.as_slice()))
            }
            None => None,
        };
        let states = (n + 1) * d;
        Ok(Self {
            n,
            d,
            dt: &segment.dt,
            accel: segment.accel.iter().copied().collect(),
            x0: segment.start.position.to_vec(),
            v0: segment.start.velocity.to_vec(),
            xn: segment.end.position.to_vec(),
            vn: segment.end.velocity.to_vec(),
            weights,
            anchors,
            xf: vec![0.0; states],
            vf: vec![0.0; states],
            xb: vec![0.0; states],
            vb: vec![0.0; states],
            gxf: vec![0.0; states],
            gvf: vec![0.0; states],
            gxb: vec![0.0; states],
            gvb: vec![0.0; states],
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.n * self.d
    }

    /// Loss at `cor` (flat `N x D`); writes the gradient into `grad` if given.
    pub(crate) fn eval(&mut self, cor: &[f64], grad: Option<&mut [f64]>) -> FbLoss {
        let (n, d) = (self.n, self.d);
        forward_flat(self.dt, &self.accel, cor, d, &self.x0, &self.v0, &mut self.xf, &mut self.vf);
        backward_flat(self.dt, &self.accel, cor, d, &self.xn, &self.vn, &mut self.xb, &mut self.vb);
        let w = self.weights;

        let mut lx = 0.0;
        let mut lv = 0.0;
        for s in 0..=n {
            let anchor = self
                .anchors
                .as_ref()
                .and_then(|(m, present)| present[s].then(|| &m[s * d..(s + 1) * d]));
            for j in 0..d {
                let i = s * d + j;
                match anchor {
                    Some(m) => {
                        let ef = self.xf[i] - m[j];
                        let eb = self.xb[i] - m[j];
                        lx += ef * ef + eb * eb;
                        self.gxf[i] = 2.0 * w.position * ef;
                        self.gxb[i] = 2.0 * w.position * eb;
                    }
                    None => {
                        let e = self.xf[i] - self.xb[i];
                        lx += e * e;
                        self.gxf[i] = 2.0 * w.position * e;
                        self.gxb[i] = -2.0 * w.position * e;
                    }
                }
                let e = self.vf[i] - self.vb[i];
                lv += e * e;
                self.gvf[i] = 2.0 * w.velocity * e;
                self.gvb[i] = -2.0 * w.velocity * e;
            }
        }
        let lr: f64 = cor.iter().map(|c| c * c).sum();
        let loss = FbLoss {
            total: w.position * lx + w.velocity * lv + w.regularization * lr,
            position: lx,
            velocity: lv,
            regularization: lr,
        };

        if let Some(grad) = grad {
            for (g, c) in grad.iter_mut().zip(cor) {
                *g = 2.0 * w.regularization * c;
            }
            // forward chain, reverse sweep over states N..1
            let mut phi_x = vec![0.0; d];
            let mut phi_v = vec![0.0; d];
            for k in (1..=n).rev() {
                let h = self.dt[k - 1];
                for j in 0..d {
                    let i = k * d + j;
                    phi_x[j] += self.gxf[i];
                    phi_v[j] += self.gvf[i] + phi_x[j] * h;
                    grad[(k - 1) * d + j] += phi_v[j] * h;
                }
            }
            // backward chain, sweep over states 0..N
            let mut lam_x: Vec<f64> = self.gxb[..d].to_vec();
            let mut lam_v: Vec<f64> = self.gvb[..d].to_vec();
            for k in 1..=n {
                let h = self.dt[k - 1];
                for j in 0..d {
                    let i = k * d + j;
                    grad[(k - 1) * d + j] -= lam_v[j] * h;
                    lam_v[j] += self.gvb[i] - lam_x[j] * h;
                    lam_x[j] += self.gxb[i];
                }
            }
        }
        loss
    }
}

/// Forward/backward consistency loss and its gradient with respect to the
/// corrections.
pub fn fb_loss(
    segment: &Segment,
    corrections: ArrayView2<f64>,
    weights: &LossWeights,
    anchors: Option<&SegmentAnchors>,
) -> Result<(FbLoss, Array2<f64>)> {
    if corrections.dim() != segment.accel.dim() {
        return Err(Error::shape(format!(
            "corrections {:?} vs segment accel {:?}",
            corrections.dim(),
            segment.accel.dim()
        )));
    }
    let mut p = FbProblem::new(segment, *weights, anchors)?;
    let cor: Vec<f64> = corrections.iter().copied().collect();
    let mut grad = vec![0.0; cor.len()];
    let loss = p.eval(&cor, Some(&mut grad));
    Ok((loss, Array2::from_shape_vec(corrections.dim(), grad).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::integrate::{integrate_backward, integrate_forward, AnchorState};
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_segment(seed: u64, n: usize, d: usize) -> Segment {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dt: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.2)).collect();
        let accel = Array2::from_shape_fn((n, d), |_| rng.gen_range(-0.5..0.5));
        let mut anchor = || AnchorState {
            position: Array1::from_shape_fn(d, |_| rng.gen_range(-3.0..3.0)),
            velocity: Array1::from_shape_fn(d, |_| rng.gen_range(-0.5..0.5)),
        };
        let (a, b) = (anchor(), anchor());
        Segment::new(dt, accel, a, b).unwrap()
    }

    /// Direct evaluation from the public integrators.
    fn oracle_loss(seg: &Segment, cor: &Array2<f64>, w: &LossWeights, anchors: Option<&SegmentAnchors>) -> f64 {
        let (xf, vf) = integrate_forward(seg, cor.view()).unwrap();
        let (xb, vb) = integrate_backward(seg, cor.view()).unwrap();
        let mut lx = 0.0;
        for s in 0..xf.nrows() {
            match anchors.filter(|a| a.present[s]) {
                Some(a) => {
                    lx += (&xf.row(s) - &a.positions.row(s)).mapv(|e| e * e).sum();
                    lx += (&xb.row(s) - &a.positions.row(s)).mapv(|e| e * e).sum();
                }
                None => lx += (&xf.row(s) - &xb.row(s)).mapv(|e| e * e).sum(),
            }
        }
        let lv = (&vf - &vb).mapv(|e| e * e).sum();
        let lr = cor.mapv(|c| c * c).sum();
        w.position * lx + w.velocity * lv + w.regularization * lr
    }

    #[test]
    fn loss_matches_oracle() {
        let seg = random_segment(3, 40, 2);
        let cor = Array2::from_elem((40, 2), 0.01);
        let w = LossWeights::default();
        let (l, _) = fb_loss(&seg, cor.view(), &w, None).unwrap();
        let o = oracle_loss(&seg, &cor, &w, None);
        assert!((l.total - o).abs() <= 1e-9 * o.abs());
        assert!((l.total - (l.position + 1e3 * l.velocity + 1e4 * l.regularization)).abs() <= 1e-9 * l.total);
    }

    fn check_gradient(seg: &Segment, anchors: Option<&SegmentAnchors>, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = seg.accel.dim();
        let cor = Array2::from_shape_fn((n, d), |_| rng.gen_range(-0.05..0.05));
        let w = LossWeights::default();
        let (_, g) = fb_loss(seg, cor.view(), &w, anchors).unwrap();
        // the loss is quadratic, so central differences are exact up to rounding
        let h = 1e-4;
        for idx in [(0, 0), (n / 2, d - 1), (n - 1, 0), (n - 1, d - 1)] {
            let mut p = cor.clone();
            p[idx] += h;
            let mut m = cor.clone();
            m[idx] -= h;
            let fd = (oracle_loss(seg, &p, &w, anchors) - oracle_loss(seg, &m, &w, anchors)) / (2.0 * h);
            let tol = 1e-6 * (1.0 + fd.abs().max(g[idx].abs()));
            assert!((fd - g[idx]).abs() <= tol, "{idx:?}: fd {fd} vs analytic {}", g[idx]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, n, d) in [(1, 1, 1), (2, 2, 2), (3, 17, 2), (4, 60, 3)] {
            let seg = random_segment(seed, n, d);
            check_gradient(&seg, None, seed);
        }
    }

    #[test]
    fn anchored_gradient_matches_finite_differences() {
        let seg = random_segment(9, 30, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let anchors = SegmentAnchors {
            positions: Array2::from_shape_fn((31, 2), |_| rng.gen_range(-3.0..3.0)),
            present: (0..31).map(|i| i % 3 != 1).collect(),
        };
        check_gradient(&seg, Some(&anchors), 11);
    }

    #[test]
    fn consistent_segment_has_zero_loss_at_zero() {
        let mut seg = random_segment(5, 25, 2);
        let zero = Array2::zeros((25, 2));
        let (xf, vf) = integrate_forward(&seg, zero.view()).unwrap();
        seg.end = AnchorState {
            position: xf.row(25).to_owned(),
            velocity: vf.row(25).to_owned(),
        };
        let (l, g) = fb_loss(&seg, zero.view(), &LossWeights::default(), None).unwrap();
        assert!(l.total < 1e-20);
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn shape_and_weight_errors() {
        let seg = random_segment(1, 5, 2);
        assert!(fb_loss(&seg, Array2::zeros((4, 2)).view(), &LossWeights::default(), None).is_err());
        let w = LossWeights {
            velocity: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            fb_loss(&seg, Array2::zeros((5, 2)).view(), &w, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn regularization_is_quadratic_in_scale() {
        let seg = random_segment(8, 20, 2);
        let cor = Array2::from_shape_fn((20, 2), |(i, j)| ((i + 3 * j) as f64).cos() * 0.1);
        let (a, _) = fb_loss(&seg, cor.view(), &LossWeights::default(), None).unwrap();
        let (b, _) = fb_loss(&seg, (&cor * 3.0).view(), &LossWeights::default(), None).unwrap();
        assert!((b.regularization - 9.0 * a.regularization).abs() <= 1e-12 * b.regularization);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_finite(seed in any::<u64>(), n in 1usize..40, scale in 0.0f64..10.0) {
            let seg = random_segment(seed, n, 2);
            let cor = Array2::from_shape_fn((n, 2), |(i, j)| scale * ((i * 7 + j) as f64).sin());
            let (l, g) = fb_loss(&seg, cor.view(), &LossWeights::default(), None).unwrap();
            prop_assert!(l.total >= 0.0 && l.position >= 0.0 && l.velocity >= 0.0 && l.regularization >= 0.0);
            prop_assert!(l.total.is_finite());
            prop_assert!(g.iter().all(|v| v.is_finite()));
        }
    }
}
