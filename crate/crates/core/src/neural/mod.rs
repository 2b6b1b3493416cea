//! Small fully connected Q-network with batch normalization.
//!
//! Topology: `input -> [dense -> batch norm -> relu] x H -> dense`, with the
//! hidden widths given by `layer_sizes[1..len-1]`. Everything is generic over
//! the float type so the same code runs in `f32` for training and in `f64`
//! for gradient checks.

mod adam;
mod checkpoint;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_params, load_params_expecting, save_params, CHECKPOINT_MAGIC};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.99;

pub trait Scalar: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in network input")]
    NonFiniteInput,
    #[error("non-finite loss {0}; training diverged")]
    NonFiniteLoss(f64),
    #[error("train-mode forward needs a batch of at least 2 rows (got {0})")]
    BatchTooSmall(usize),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self, NeuralError> {
        if data.len() != rows * cols {
            return Err(NeuralError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[F]>>(rows: &[R]) -> Result<Self, NeuralError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NeuralError::Shape(format!(
                    "ragged rows: {} vs {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }
}

/// Fully connected layer. `weight` is stored input-major: `weight[i * outputs + o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![F::zero(); inputs * outputs],
            bias: vec![F::zero(); outputs],
        }
    }

    fn forward(&self, x: &Matrix<F>) -> Matrix<F> {
        let mut z = Matrix::zeros(x.rows, self.outputs);
        for b in 0..x.rows {
            let out = z.row_mut(b);
            out.copy_from_slice(&self.bias);
            for (i, &xi) in x.row(b).iter().enumerate() {
                if xi == F::zero() {
                    continue;
                }
                let w = &self.weight[i * self.outputs..(i + 1) * self.outputs];
                for (o, &wio) in out.iter_mut().zip(w) {
                    *o = *o + xi * wio;
                }
            }
        }
        z
    }

    /// Accumulates weight/bias gradients and returns the input gradient if asked.
    fn backward(
        &self,
        x: &Matrix<F>,
        dz: &Matrix<F>,
        dweight: &mut [F],
        dbias: &mut [F],
        want_input_grad: bool,
    ) -> Option<Matrix<F>> {
        for b in 0..x.rows {
            let g = dz.row(b);
            for (db, &gv) in dbias.iter_mut().zip(g) {
                *db = *db + gv;
            }
            for (i, &xi) in x.row(b).iter().enumerate() {
                if xi == F::zero() {
                    continue;
                }
                let dw = &mut dweight[i * self.outputs..(i + 1) * self.outputs];
                for (d, &gv) in dw.iter_mut().zip(g) {
                    *d = *d + xi * gv;
                }
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut dx = Matrix::zeros(x.rows, self.inputs);
        for b in 0..x.rows {
            let g = dz.row(b);
            for (i, d) in dx.row_mut(b).iter_mut().enumerate() {
                let w = &self.weight[i * self.outputs..(i + 1) * self.outputs];
                *d = w.iter().zip(g).fold(F::zero(), |acc, (&wv, &gv)| acc + wv * gv);
            }
        }
        Some(dx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    fn identity(width: usize) -> Self {
        Self {
            gamma: vec![F::one(); width],
            beta: vec![F::zero(); width],
            running_mean: vec![F::zero(); width],
            running_var: vec![F::one(); width],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; pure.
    Eval,
}

/// All parameters of one Q-network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<F> {
    layer_sizes: Vec<usize>,
    pub dense: Vec<Dense<F>>,
    pub norms: Vec<BatchNorm<F>>,
}

/// Per-hidden-layer values kept from a train-mode forward pass.
struct HiddenCache<F> {
    input: Matrix<F>,
    normalized: Matrix<F>,
    /// Post-affine, pre-activation.
    activated_mask: Vec<bool>,
    inv_std: Vec<F>,
    batch_mean: Vec<F>,
    batch_var: Vec<F>,
}

struct ForwardCache<F> {
    hidden: Vec<HiddenCache<F>>,
    last_input: Matrix<F>,
}

/// Gradients in the same order as [`NetworkParams::trainable`].
pub type Gradients<F> = Vec<Vec<F>>;

/// Batch statistics of one train-mode pass, per hidden layer.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub means: Vec<Vec<F>>,
    pub variances: Vec<Vec<F>>,
}

impl<F: Scalar> NetworkParams<F> {
    /// All-zero weights and biases, identity batch norm.
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(
            layer_sizes.len() >= 2 && layer_sizes.iter().all(|&n| n > 0),
            "need at least input and output widths, all positive"
        );
        let dense = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        let norms = layer_sizes[1..layer_sizes.len() - 1]
            .iter()
            .map(|&n| BatchNorm::identity(n))
            .collect();
        Self {
            layer_sizes: layer_sizes.to_vec(),
            dense,
            norms,
        }
    }

    /// He-style uniform initialization: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`
    /// weights, zero biases.
    pub fn random<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(layer_sizes);
        for layer in &mut p.dense {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weight {
                *w = F::lit(rng.random_range(-limit..limit));
            }
        }
        p
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty sizes")
    }

    /// Deep copy of `src` into `self`. Panics on different architectures.
    pub fn copy_from(&mut self, src: &Self) {
        assert_eq!(self.layer_sizes, src.layer_sizes, "architecture mismatch");
        self.clone_from(src);
    }

    /// Trainable tensors in canonical order: per hidden layer weight, bias,
    /// gamma, beta; then output weight and bias.
    pub fn trainable(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for (d, n) in self.dense.iter().zip(&self.norms) {
            out.extend([&d.weight[..], &d.bias[..], &n.gamma[..], &n.beta[..]]);
        }
        let last = self.dense.last().expect("output layer");
        out.extend([&last.weight[..], &last.bias[..]]);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [F]> {
        let hidden = self.norms.len();
        let (hidden_dense, last) = self.dense.split_at_mut(hidden);
        let mut out: Vec<&mut [F]> = Vec::new();
        for (d, n) in hidden_dense.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        out.push(&mut last[0].weight);
        out.push(&mut last[0].bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.trainable().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.norms.iter().all(|n| {
                n.running_mean.iter().all(|v| v.is_finite())
                    && n.running_var.iter().all(|v| v.is_finite() && *v >= F::zero())
            })
    }

    fn check_input(&self, x: &Matrix<F>) -> Result<(), NeuralError> {
        if x.cols != self.input_width() {
            return Err(NeuralError::Shape(format!(
                "input width {} but network expects {}",
                x.cols,
                self.input_width()
            )));
        }
        if x.rows == 0 {
            return Err(NeuralError::Shape("empty batch".into()));
        }
        if x.data.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFiniteInput);
        }
        Ok(())
    }

    /// Forward pass. Train mode normalizes with batch statistics and folds
    /// them into the running statistics; eval mode only reads them.
    pub fn forward(&mut self, x: &Matrix<F>, mode: Mode) -> Result<Matrix<F>, NeuralError> {
        match mode {
            Mode::Eval => self.predict(x),
            Mode::Train => {
                self.check_input(x)?;
                if x.rows < 2 {
                    return Err(NeuralError::BatchTooSmall(x.rows));
                }
                let (out, cache) = self.forward_train(x);
                self.update_running_stats(&BatchStats::from_cache(&cache));
                Ok(out)
            }
        }
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: &Matrix<F>) -> Result<Matrix<F>, NeuralError> {
        self.check_input(x)?;
        Ok(self.forward_eval(x))
    }

    /// Eval-mode Q-values for a single state.
    pub fn predict_one(&self, state: &[F]) -> Result<Vec<F>, NeuralError> {
        let x = Matrix::from_vec(1, state.len(), state.to_vec())?;
        Ok(self.predict(&x)?.data)
    }

    fn forward_eval(&self, x: &Matrix<F>) -> Matrix<F> {
        let eps = F::lit(BN_EPSILON);
        let mut h = x.clone();
        for (layer, bn) in self.dense.iter().zip(&self.norms) {
            let mut z = layer.forward(&h);
            let scale: Vec<F> = bn
                .running_var
                .iter()
                .zip(&bn.gamma)
                .map(|(&v, &g)| g / (v + eps).sqrt())
                .collect();
            for b in 0..z.rows {
                for (u, v) in z.row_mut(b).iter_mut().enumerate() {
                    let y = (*v - bn.running_mean[u]) * scale[u] + bn.beta[u];
                    *v = y.max(F::zero());
                }
            }
            h = z;
        }
        self.dense.last().expect("output layer").forward(&h)
    }

    fn forward_train(&self, x: &Matrix<F>) -> (Matrix<F>, ForwardCache<F>) {
        let eps = F::lit(BN_EPSILON);
        let n = F::from_usize(x.rows).expect("batch size");
        let mut hidden = Vec::with_capacity(self.norms.len());
        let mut h = x.clone();
        for (layer, bn) in self.dense.iter().zip(&self.norms) {
            let z = layer.forward(&h);
            let width = layer.outputs;
            let mut mean = vec![F::zero(); width];
            for b in 0..z.rows {
                for (m, &v) in mean.iter_mut().zip(z.row(b)) {
                    *m = *m + v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / n);
            let mut var = vec![F::zero(); width];
            for b in 0..z.rows {
                for ((s, &v), &m) in var.iter_mut().zip(z.row(b)).zip(&mean) {
                    let c = v - m;
                    *s = *s + c * c;
                }
            }
            var.iter_mut().for_each(|s| *s = *s / n);
            let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();

            let mut normalized = Matrix::zeros(z.rows, width);
            let mut out = Matrix::zeros(z.rows, width);
            let mut activated_mask = vec![false; z.rows * width];
            for b in 0..z.rows {
                for u in 0..width {
                    let xhat = (z.row(b)[u] - mean[u]) * inv_std[u];
                    normalized.row_mut(b)[u] = xhat;
                    let y = bn.gamma[u] * xhat + bn.beta[u];
                    if y > F::zero() {
                        activated_mask[b * width + u] = true;
                        out.row_mut(b)[u] = y;
                    }
                }
            }
            hidden.push(HiddenCache {
                input: h,
                normalized,
                activated_mask,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            });
            h = out;
        }
        let q = self.dense.last().expect("output layer").forward(&h);
        (
            q,
            ForwardCache {
                hidden,
                last_input: h,
            },
        )
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &BatchStats<F>) {
        let keep = F::lit(BN_MOMENTUM);
        let take = F::one() - keep;
        for ((bn, mean), var) in self.norms.iter_mut().zip(&stats.means).zip(&stats.variances) {
            for (r, &m) in bn.running_mean.iter_mut().zip(mean) {
                *r = keep * *r + take * m;
            }
            for (r, &v) in bn.running_var.iter_mut().zip(var) {
                *r = keep * *r + take * v;
            }
        }
    }

    /// Train-mode loss `mean_b (target_b - Q(x_b)[a_b])^2` and its gradient
    /// with respect to every trainable tensor. Does not touch `self`.
    pub fn loss_and_gradients(
        &self,
        x: &Matrix<F>,
        actions: &[usize],
        targets: &[F],
    ) -> Result<(F, Gradients<F>, BatchStats<F>), NeuralError> {
        self.check_input(x)?;
        if x.rows < 2 {
            return Err(NeuralError::BatchTooSmall(x.rows));
        }
        if actions.len() != x.rows || targets.len() != x.rows {
            return Err(NeuralError::Shape(format!(
                "{} rows, {} actions, {} targets",
                x.rows,
                actions.len(),
                targets.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.output_width()) {
            return Err(NeuralError::Shape(format!(
                "action {a} outside 0..{}",
                self.output_width()
            )));
        }

        let (q, cache) = self.forward_train(x);
        let n = F::from_usize(x.rows).expect("batch size");
        let two = F::lit(2.0);
        let mut loss = F::zero();
        let mut dq = Matrix::zeros(q.rows, q.cols);
        for (b, (&a, &t)) in actions.iter().zip(targets).enumerate() {
            let residual = q.row(b)[a] - t;
            loss = loss + residual * residual;
            dq.row_mut(b)[a] = two * residual / n;
        }
        loss = loss / n;

        let mut grads: Gradients<F> = self.trainable().iter().map(|t| vec![F::zero(); t.len()]).collect();
        let hidden_count = self.norms.len();
        let out_layer = &self.dense[hidden_count];
        let (g_w, rest) = grads[4 * hidden_count..].split_at_mut(1);
        let mut dh = out_layer
            .backward(&cache.last_input, &dq, &mut g_w[0], &mut rest[0], hidden_count > 0)
            .unwrap_or_else(|| Matrix::zeros(0, 0));

        for l in (0..hidden_count).rev() {
            let c = &cache.hidden[l];
            let bn = &self.norms[l];
            let width = bn.gamma.len();
            let rows = dh.rows;
            // dy: gradient at the batch-norm output, through the relu.
            let mut dy = dh;
            for (v, &on) in dy.data.iter_mut().zip(&c.activated_mask) {
                if !on {
                    *v = F::zero();
                }
            }
            let mut dgamma = vec![F::zero(); width];
            let mut dbeta = vec![F::zero(); width];
            for b in 0..rows {
                for u in 0..width {
                    let g = dy.row(b)[u];
                    dgamma[u] = dgamma[u] + g * c.normalized.row(b)[u];
                    dbeta[u] = dbeta[u] + g;
                }
            }
            // dz = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
            // with dxhat = dy * gamma, so the two sums are gamma * dbeta and gamma * dgamma.
            let mut dz = Matrix::zeros(rows, width);
            for b in 0..rows {
                for u in 0..width {
                    let dxhat = dy.row(b)[u] * bn.gamma[u];
                    let sum_dxhat = bn.gamma[u] * dbeta[u];
                    let sum_dxhat_xhat = bn.gamma[u] * dgamma[u];
                    dz.row_mut(b)[u] = c.inv_std[u] / n
                        * (n * dxhat - sum_dxhat - c.normalized.row(b)[u] * sum_dxhat_xhat);
                }
            }
            let base = 4 * l;
            grads[base + 2] = dgamma;
            grads[base + 3] = dbeta;
            let (g_w, rest) = grads[base..].split_at_mut(1);
            dh = self.dense[l]
                .backward(&c.input, &dz, &mut g_w[0], &mut rest[0], l > 0)
                .unwrap_or_else(|| Matrix::zeros(0, 0));
        }

        Ok((loss, grads, BatchStats::from_cache(&cache)))
    }
}

impl<F: Scalar> BatchStats<F> {
    fn from_cache(cache: &ForwardCache<F>) -> Self {
        Self {
            means: cache.hidden.iter().map(|h| h.batch_mean.clone()).collect(),
            variances: cache.hidden.iter().map(|h| h.batch_var.clone()).collect(),
        }
    }
}

/// One optimization step on the masked squared error. Returns the loss
/// measured before the update.
pub fn train_step<F: Scalar>(
    params: &mut NetworkParams<F>,
    optimizer: &mut Adam<F>,
    inputs: &Matrix<F>,
    actions: &[usize],
    targets: &[F],
) -> Result<F, NeuralError> {
    let (loss, grads, stats) = params.loss_and_gradients(inputs, actions, targets)?;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss(loss.to_f64().unwrap_or(f64::NAN)));
    }
    params.update_running_stats(&stats);
    optimizer.step(params, &grads);
    Ok(loss)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
