use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected regressor: tanh on hidden layers, identity output.
///
/// Parameters live in one flat vector, layer by layer, weight (`in x out`,
/// row-major) then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations of every layer for one batch, input included.
pub(crate) struct ForwardCache {
    acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub(crate) fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

fn param_len(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Number of affine layers.
    pub const LAYERS: usize = 3;

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() != Self::LAYERS + 1 {
            return Err(Error::config(format!(
                "network needs {} widths (input, two hidden, output), got {widths:?}",
                Self::LAYERS + 1
            )));
        }
        if widths.contains(&0) {
            return Err(Error::config(format!("zero width in {widths:?}")));
        }
        Ok(())
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; param_len(widths)],
        })
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        let mut off = 0;
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let len = w[0] * w[1] + w[1];
            for p in &mut m.params[off..off + len] {
                *p = rng.gen_range(-bound..bound);
            }
            off += len;
        }
        Ok(m)
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_widths(widths)?;
        if params.len() != param_len(widths) {
            return Err(Error::shape(format!(
                "{} parameters for widths {widths:?} (expected {})",
                params.len(),
                param_len(widths)
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("network parameters must be finite"));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let off: usize = param_len(&self.widths[..=layer]);
        let (i, o) = (self.widths[layer], self.widths[layer + 1]);
        (off, off + i * o, off + i * o + o)
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (w0, b0, _) = self.offsets(layer);
        ArrayView2::from_shape((self.widths[layer], self.widths[layer + 1]), &self.params[w0..b0]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (_, b0, end) = self.offsets(layer);
        ArrayView1::from(&self.params[b0..end])
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, f64> {
        let (_, b0, end) = self.offsets(layer);
        ArrayViewMut1::from(&mut self.params[b0..end])
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let (w0, b0, _) = self.offsets(layer);
        let shape = (self.widths[layer], self.widths[layer + 1]);
        ArrayViewMut2::from_shape(shape, &mut self.params[w0..b0]).unwrap()
    }

    /// Parameters rounded through `f32`, as stored in checkpoints.
    pub fn rounded_to_f32(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            params: self.params.iter().map(|&p| p as f32 as f64).collect(),
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "feature width {} vs network input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_cache(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut acts = vec![x.to_owned()];
        for l in 0..Self::LAYERS {
            let mut z = acts[l].dot(&self.weight(l));
            z += &self.bias(l);
            if l + 1 < Self::LAYERS {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    /// Batch inference, `B x input` to `B x output`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cache(x)?.acts.pop().unwrap())
    }

    /// Gradient of a loss with respect to all parameters, given the loss
    /// gradient `dy` at the output.
    pub(crate) fn backward(&self, cache: &ForwardCache, dy: Array2<f64>, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = dy;
        for l in (0..Self::LAYERS).rev() {
            let (w0, b0, end) = self.offsets(l);
            let shape = (self.widths[l], self.widths[l + 1]);
            let mut gw = ArrayViewMut2::from_shape(shape, &mut grad[w0..b0]).unwrap();
            gw.assign(&cache.acts[l].t().dot(&delta));
            ArrayViewMut1::from(&mut grad[b0..end]).assign(&delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut da = delta.dot(&self.weight(l).t());
                da.zip_mut_with(&cache.acts[l], |d, &a| *d *= 1.0 - a * a);
                delta = da;
            }
        }
    }

    /// Smooth-L1 loss over the batch and its parameter gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, beta: f64) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cache(x)?;
        let (loss, dy) = smooth_l1(cache.output().view(), y, beta)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&cache, dy, &mut grad);
        Ok((loss, grad))
    }
}

/// Mean smooth-L1 over all elements and its gradient with respect to `pred`.
///
/// Per element: `0.5 r^2 / beta` for `|r| < beta`, else `|r| - 0.5 beta`.
pub fn smooth_l1(pred: ArrayView2<f64>, target: ArrayView2<f64>, beta: f64) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    if !(beta > 0.0) {
        return Err(Error::config("smooth-L1 beta must be positive"));
    }
    let n = pred.len().max(1) as f64;
    let mut grad = Array2::zeros(pred.dim());
    let mut total = 0.0;
    ndarray::Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p, &t| {
            let r = p - t;
            if r.abs() < beta {
                total += 0.5 * r * r / beta;
                *g = r / beta / n;
            } else {
                total += r.abs() - 0.5 * beta;
                *g = r.signum() / n;
            }
        });
    Ok((total / n, grad))
}

/// Pads or truncates label columns to the network output width (missing
/// coordinates are zero height).
pub fn pad_targets(labels: ArrayView2<f64>, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.nrows(), width));
    let k = labels.ncols().min(width);
    out.slice_mut(s![.., ..k]).assign(&labels.slice(s![.., ..k]));
    out
}

/// Column means of `labels`, used to start the output bias at the target mean.
pub fn target_mean(labels: ArrayView2<f64>) -> Array1<f64> {
    labels.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(labels.ncols()))
}
