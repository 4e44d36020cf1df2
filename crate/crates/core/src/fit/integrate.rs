use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Boundary state at a control point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorState {
    pub position: Array1<f64>,
    pub velocity: Array1<f64>,
}

/// IMU data between two anchors: `N` steps, `N + 1` states.
///
/// Step `k` (1-based) takes state `k - 1` to state `k` using `dt[k - 1]` and
/// `accel[k - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub dt: Vec<f64>,
    pub accel: Array2<f64>,
    pub start: AnchorState,
    pub end: AnchorState,
}

impl Segment {
    pub fn new(dt: Vec<f64>, accel: Array2<f64>, start: AnchorState, end: AnchorState) -> Result<Self> {
        let d = accel.ncols();
        if dt.is_empty() || dt.len() != accel.nrows() {
            return Err(Error::shape(format!(
                "segment needs N >= 1 steps with matching dt ({}) and accel ({}) rows",
                dt.len(),
                accel.nrows()
            )));
        }
        for s in [&start, &end] {
            if s.position.len() != d || s.velocity.len() != d {
                return Err(Error::shape("anchor dimension differs from acceleration"));
            }
            if s.position.iter().chain(s.velocity.iter()).any(|v| !v.is_finite()) {
                return Err(Error::input("segment anchors must be finite"));
            }
        }
        Ok(Self { dt, accel, start, end })
    }

    pub fn steps(&self) -> usize {
        self.dt.len()
    }

    pub fn dims(&self) -> usize {
        self.accel.ncols()
    }
}

/// Double integration with the velocity updated first:
/// `v_n = v_{n-1} + a_n dt_n`, `x_n = x_{n-1} + v_n dt_n`.
///
/// Returns the `N` positions and velocities after each step (the initial
/// state is not repeated).
pub fn dead_reckon(
    accel: ArrayView2<f64>,
    x0: ArrayView1<f64>,
    v0: ArrayView1<f64>,
    dt: &[f64],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, d) = accel.dim();
    if dt.len() != n || x0.len() != d || v0.len() != d {
        return Err(Error::shape(format!(
            "dead_reckon: accel {n}x{d}, dt {}, x0 {}, v0 {}",
            dt.len(),
            x0.len(),
            v0.len()
        )));
    }
    let mut x = x0.to_owned();
    let mut v = v0.to_owned();
    let mut xs = Array2::zeros((n, d));
    let mut vs = Array2::zeros((n, d));
    for i in 0..n {
        for k in 0..d {
            v[k] += accel[[i, k]] * dt[i];
            x[k] += v[k] * dt[i];
        }
        xs.row_mut(i).assign(&x);
        vs.row_mut(i).assign(&v);
    }
    Ok((xs, vs))
}

/// Forward pass from the start anchor, flat `(N+1) x D` outputs.
pub(crate) fn forward_flat(
    dt: &[f64],
    accel: &[f64],
    cor: &[f64],
    d: usize,
    x0: &[f64],
    v0: &[f64],
    xs: &mut [f64],
    vs: &mut [f64],
) {
    xs[..d].copy_from_slice(x0);
    vs[..d].copy_from_slice(v0);
    for (k, &h) in dt.iter().enumerate() {
        let (prev, cur) = (k * d, (k + 1) * d);
        for j in 0..d {
            let a = accel[prev + j] + cor[prev + j];
            let v = vs[prev + j] + a * h;
            vs[cur + j] = v;
            xs[cur + j] = xs[prev + j] + v * h;
        }
    }
}

/// Backward pass from the end anchor: `v_{n-1} = v_n - a_n dt_n`,
/// `x_{n-1} = x_n - v_n dt_n`.
pub(crate) fn backward_flat(
    dt: &[f64],
    accel: &[f64],
    cor: &[f64],
    d: usize,
    xn: &[f64],
    vn: &[f64],
    xs: &mut [f64],
    vs: &mut [f64],
) {
    let n = dt.len();
    xs[n * d..].copy_from_slice(xn);
    vs[n * d..].copy_from_slice(vn);
    for k in (1..=n).rev() {
        let h = dt[k - 1];
        let (cur, prev, a_off) = (k * d, (k - 1) * d, (k - 1) * d);
        for j in 0..d {
            let a = accel[a_off + j] + cor[a_off + j];
            vs[prev + j] = vs[cur + j] - a * h;
            xs[prev + j] = xs[cur + j] - vs[cur + j] * h;
        }
    }
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn check_corrections(segment: &Segment, corrections: ArrayView2<f64>) -> Result<()> {
    if corrections.dim() != segment.accel.dim() {
        return Err(Error::shape(format!(
            "corrections {:?} vs segment accel {:?}",
            corrections.dim(),
            segment.accel.dim()
        )));
    }
    Ok(())
}

/// Corrected forward integration; returns `(N+1) x D` positions and velocities
/// including the start anchor.
pub fn integrate_forward(segment: &Segment, corrections: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    check_corrections(segment, corrections)?;
    let (n, d) = (segment.steps(), segment.dims());
    let mut xs = vec![0.0; (n + 1) * d];
    let mut vs = vec![0.0; (n + 1) * d];
    forward_flat(
        &segment.dt,
        &flat(&segment.accel),
        &corrections.iter().copied().collect::<Vec<_>>(),
        d,
        segment.start.position.as_slice().unwrap(),
        segment.start.velocity.as_slice().unwrap(),
        &mut xs,
        &mut vs,
    );
    Ok((
        Array2::from_shape_vec((n + 1, d), xs).unwrap(),
        Array2::from_shape_vec((n + 1, d), vs).unwrap(),
    ))
}

/// Corrected backward integration from the end anchor.
pub fn integrate_backward(segment: &Segment, corrections: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    check_corrections(segment, corrections)?;
    let (n, d) = (segment.steps(), segment.dims());
    let mut xs = vec![0.0; (n + 1) * d];
    let mut vs = vec![0.0; (n + 1) * d];
    backward_flat(
        &segment.dt,
        &flat(&segment.accel),
        &corrections.iter().copied().collect::<Vec<_>>(),
        d,
        segment.end.position.as_slice().unwrap(),
        segment.end.velocity.as_slice().unwrap(),
        &mut xs,
        &mut vs,
    );
    Ok((
        Array2::from_shape_vec((n + 1, d), xs).unwrap(),
        Array2::from_shape_vec((n + 1, d), vs).unwrap(),
    ))
}
