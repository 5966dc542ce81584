//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Batches are row-major [`Matrix`] values of shape `(batch, features)`; a single
//! sample is a batch of one. Parameters of an [`Mlp`] live in one flat buffer,
//! layer by layer, each layer as its weight matrix `(out, in)` row-major followed
//! by its bias vector. [`GradientTape`] and [`Adam`] moments mirror that buffer.

use std::fmt;
use std::path::Path;

use rand::Rng as _;

use crate::container::Container;
use crate::error::{ensure_finite, Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &self.data)
            .finish()
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a batch from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Concatenates columns of two batches with the same number of rows.
    pub fn hcat(left: &Matrix, right: &Matrix) -> Result<Matrix> {
        if left.rows != right.rows {
            return Err(Error::shape("Matrix::hcat", left.rows, right.rows));
        }
        let cols = left.cols + right.cols;
        let mut data = Vec::with_capacity(left.rows * cols);
        for i in 0..left.rows {
            data.extend_from_slice(left.row(i));
            data.extend_from_slice(right.row(i));
        }
        Ok(Matrix {
            rows: left.rows,
            cols,
            data,
        })
    }

    /// Copies columns `start..end` into a new batch.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Multilayer perceptron. `sizes[0]` is the input width, `sizes[last]` the output
/// width. Hidden layers share one activation; the last layer uses `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Layer inputs and outputs recorded by [`Mlp::forward_trace`]; consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    sizes: Vec<usize>,
    activations: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace holds at least the input")
    }
}

/// Gradient of a scalar loss with respect to every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    sizes: Vec<usize>,
    grads: Vec<f64>,
}

impl GradientTape {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            sizes: net.sizes.clone(),
            grads: vec![0.0; net.params.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, k: f64) {
        self.grads.iter_mut().for_each(|g| *g *= k);
    }

    pub fn accumulate(&mut self, other: &GradientTape) -> Result<()> {
        if self.sizes != other.sizes {
            return Err(Error::shape("GradientTape::accumulate", fmt_sizes(&self.sizes), fmt_sizes(&other.sizes)));
        }
        self.grads
            .iter_mut()
            .zip(&other.grads)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Result of a backward pass: parameter gradients and the gradient with respect
/// to the network input.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub tape: GradientTape,
    pub input_grad: Matrix,
}

fn fmt_sizes(sizes: &[usize]) -> String {
    sizes
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe views that stay inside `a`, `b` and `c`, which the
    // callers size as (m x k), (k x n) and (m x n) respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    fn validate_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 {
            return Err(Error::Config("an Mlp needs at least an input and an output layer".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be positive, got {}", fmt_sizes(sizes))));
        }
        Ok(())
    }

    /// All parameters zero.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out + fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// Builds a network from explicit parameters in declaration order.
    pub fn from_params(sizes: &[usize], hidden: Activation, output: Activation, params: Vec<f64>) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        if params.len() != param_count(sizes) {
            return Err(Error::shape("Mlp::from_params", param_count(sizes), params.len()));
        }
        ensure_finite(&params, "Mlp parameters")?;
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.hidden == other.hidden && self.output == other.output
    }

    /// `(weight_offset, bias_offset)` of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    /// Mutable view of the bias of layer `l`.
    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.layer_offsets(l);
        let n = self.sizes[l + 1];
        &mut self.params[b..b + n]
    }

    /// Mutable view of the weight matrix `(out, in)` of layer `l`.
    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.layer_offsets(l);
        &mut self.params[w..b]
    }

    fn activation_for(&self, l: usize) -> Activation {
        if l + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols != self.sizes[0] {
            return Err(Error::shape("Mlp::forward input width", self.sizes[0], input.cols));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &Matrix) -> Matrix {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.layer_offsets(l);
        let weight = &self.params[w..b];
        let bias = &self.params[b..b + fan_out];
        let mut out = Matrix::zeros(x.rows, fan_out);
        // out = x * W^T
        gemm(
            x.rows,
            fan_in,
            fan_out,
            &x.data,
            (fan_in as isize, 1),
            weight,
            (1, fan_in as isize),
            0.0,
            &mut out.data,
        );
        let act = self.activation_for(l);
        for row in out.data.chunks_mut(fan_out) {
            for (z, bj) in row.iter_mut().zip(bias) {
                *z = act.apply(*z + bj);
            }
        }
        out
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = self.layer_forward(0, input);
        for l in 1..self.sizes.len() - 1 {
            x = self.layer_forward(l, &x);
        }
        Ok(x)
    }

    /// Forward pass that keeps every layer's input for a later [`Mlp::backward`].
    pub fn forward_trace(&self, input: &Matrix) -> Result<(Matrix, Trace)> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.clone());
        for l in 0..self.sizes.len() - 1 {
            let next = self.layer_forward(l, &activations[l]);
            activations.push(next);
        }
        let out = activations.last().cloned().expect("at least one layer");
        Ok((
            out,
            Trace {
                sizes: self.sizes.clone(),
                activations,
            },
        ))
    }

    /// Backpropagates `upstream = dLoss/dOutput` through the recorded pass.
    pub fn backward(&self, trace: &Trace, upstream: &Matrix) -> Result<Backprop> {
        let mut tape = GradientTape::zeros_like(self);
        let input_grad = self.backward_into(trace, upstream, &mut tape)?;
        Ok(Backprop { tape, input_grad })
    }

    /// Like [`Mlp::backward`] but adds the parameter gradient into `tape`.
    pub fn backward_into(&self, trace: &Trace, upstream: &Matrix, tape: &mut GradientTape) -> Result<Matrix> {
        if tape.sizes != self.sizes {
            return Err(Error::shape("Mlp::backward tape", fmt_sizes(&self.sizes), fmt_sizes(&tape.sizes)));
        }
        self.backprop(trace, upstream, Some(tape))
    }

    /// Gradient with respect to the input only; parameter gradients are not formed.
    pub fn input_gradient(&self, trace: &Trace, upstream: &Matrix) -> Result<Matrix> {
        self.backprop(trace, upstream, None)
    }

    fn backprop(&self, trace: &Trace, upstream: &Matrix, mut tape: Option<&mut GradientTape>) -> Result<Matrix> {
        if trace.sizes != self.sizes {
            return Err(Error::Usage(format!(
                "backward called with a trace recorded on a {} network, this one is {}",
                fmt_sizes(&trace.sizes),
                fmt_sizes(&self.sizes)
            )));
        }
        let batch = trace.activations[0].rows;
        let out_dim = self.output_dim();
        if upstream.rows != batch || upstream.cols != out_dim {
            return Err(Error::shape(
                "Mlp::backward upstream",
                format!("{batch}x{out_dim}"),
                format!("{}x{}", upstream.rows, upstream.cols),
            ));
        }

        let mut grad = upstream.clone();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activation_for(l);
            let y = &trace.activations[l + 1];
            for (g, &yv) in grad.data.iter_mut().zip(&y.data) {
                *g *= act.derivative_from_output(yv);
            }
            let (w, b) = self.layer_offsets(l);
            if let Some(tape) = tape.as_deref_mut() {
                let x = &trace.activations[l];
                // dW (out x in) += delta^T * x
                gemm(
                    fan_out,
                    batch,
                    fan_in,
                    &grad.data,
                    (1, fan_out as isize),
                    &x.data,
                    (fan_in as isize, 1),
                    1.0,
                    &mut tape.grads[w..b],
                );
                let db = &mut tape.grads[b..b + fan_out];
                for row in grad.data.chunks(fan_out) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
            }
            // dx (batch x in) = delta * W
            let mut dx = Matrix::zeros(batch, fan_in);
            gemm(
                batch,
                fan_out,
                fan_in,
                &grad.data,
                (fan_out as isize, 1),
                &self.params[w..b],
                (fan_in as isize, 1),
                0.0,
                &mut dx.data,
            );
            grad = dx;
        }
        Ok(grad)
    }

    /// Appends this network to a container under `prefix`.
    pub fn write_entries(&self, prefix: &str, c: &mut Container) {
        let sizes: Vec<u64> = self.sizes.iter().map(|&s| s as u64).collect();
        c.push_u64(format!("{prefix}.sizes"), &sizes);
        c.push_str(format!("{prefix}.hidden"), self.hidden.tag());
        c.push_str(format!("{prefix}.output"), self.output.tag());
        c.push_f64(format!("{prefix}.params"), &self.params);
    }

    pub fn read_entries(prefix: &str, c: &Container) -> Result<Self> {
        let sizes: Vec<usize> = c
            .u64s(&format!("{prefix}.sizes"))?
            .iter()
            .map(|&s| s as usize)
            .collect();
        let hidden = Activation::from_tag(c.str(&format!("{prefix}.hidden"))?)?;
        let output = Activation::from_tag(c.str(&format!("{prefix}.output"))?)?;
        let params = c.f64s(&format!("{prefix}.params"))?.to_vec();
        Self::from_params(&sizes, hidden, output, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new("mlp");
        self.write_entries("net", &mut c);
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind("mlp")?;
        Self::read_entries("net", &c)
    }
}

/// Adam optimizer state for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_net(lr: f64, net: &Mlp) -> Self {
        Self::new(lr, net.param_count())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `-grads`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("Adam::update", self.m.len(), grads.len()));
        }
        ensure_finite(grads, "gradient")?;
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn write_entries(&self, prefix: &str, c: &mut Container) {
        c.push_f64(format!("{prefix}.hyper"), &[self.lr, self.beta1, self.beta2, self.eps]);
        c.push_u64(format!("{prefix}.step"), &[self.step]);
        c.push_f64(format!("{prefix}.m"), &self.m);
        c.push_f64(format!("{prefix}.v"), &self.v);
    }

    pub fn read_entries(prefix: &str, c: &Container) -> Result<Self> {
        let hyper = c.f64s(&format!("{prefix}.hyper"))?;
        let step = c.u64s(&format!("{prefix}.step"))?;
        let m = c.f64s(&format!("{prefix}.m"))?.to_vec();
        let v = c.f64s(&format!("{prefix}.v"))?.to_vec();
        if hyper.len() != 4 || step.len() != 1 || m.len() != v.len() {
            return Err(Error::Format {
                what: "adam state",
                reason: format!("inconsistent entries under `{prefix}`"),
            });
        }
        Ok(Self {
            lr: hyper[0],
            beta1: hyper[1],
            beta2: hyper[2],
            eps: hyper[3],
            step: step[0],
            m,
            v,
        })
    }
}

/// Applies one optimizer update to `net` using the gradients in `tape`.
pub fn optimizer_step(net: &mut Mlp, tape: &GradientTape, opt: &mut Adam) -> Result<()> {
    if tape.sizes != net.sizes {
        return Err(Error::shape("optimizer_step", fmt_sizes(&net.sizes), fmt_sizes(&tape.sizes)));
    }
    opt.update(&mut net.params, &tape.grads)
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * source`.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("soft update tau must lie in (0, 1], got {tau}")));
    }
    if !target.same_shape(source) {
        return Err(Error::shape("soft_update", fmt_sizes(&target.sizes), fmt_sizes(&source.sizes)));
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = (1.0 - tau) * *t + tau * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn affine(w: f64, b: f64) -> Mlp {
        Mlp::from_params(&[1, 1], Activation::Identity, Activation::Identity, vec![w, b]).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn affine_identity() {
        let out = affine(2.0, 1.0).forward(&Matrix::row_vector(&[3.0])).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn two_layer_matches_hand_computed_chain() {
        // W1 = [[1, -1], [0.5, 2]], b1 = [0.1, -0.2], tanh; W2 = [[1.5, -0.5], [0, 1]], b2 = [0.3, 0]
        let params = vec![1.0, -1.0, 0.5, 2.0, 0.1, -0.2, 1.5, -0.5, 0.0, 1.0, 0.3, 0.0];
        let net = Mlp::from_params(&[2, 2, 2], Activation::Tanh, Activation::Identity, params).unwrap();
        let x = [0.4, -0.3];
        let h0 = (1.0 * x[0] - 1.0 * x[1] + 0.1f64).tanh();
        let h1 = (0.5 * x[0] + 2.0 * x[1] - 0.2f64).tanh();
        let expected = [1.5 * h0 - 0.5 * h1 + 0.3, h1];
        let out = net.forward(&Matrix::row_vector(&x)).unwrap();
        for (o, e) in out.data().iter().zip(expected) {
            assert!((o - e).abs() < 1e-15, "{o} vs {e}");
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let mut rng = rng_from_seed(3);
        let net = Mlp::new(&[4, 16, 16, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]]).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn input_width_mismatch_is_rejected() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(net.forward(&Matrix::zeros(1, 2)), Err(Error::Shape { .. })));
        assert!(Mlp::zeros(&[3], Activation::Tanh, Activation::Identity).is_err());
        assert!(Mlp::zeros(&[3, 0, 1], Activation::Tanh, Activation::Identity).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_tape() {
        let mut rng = rng_from_seed(4);
        let net = Mlp::new(&[2, 8, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (_, trace) = net.forward_trace(&Matrix::row_vector(&[0.3, 0.7])).unwrap();
        let bp = net.backward(&trace, &Matrix::zeros(1, 1)).unwrap();
        assert!(bp.tape.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_gradient() {
        // f(w) = w * x with x = 3
        let net = affine(0.7, 0.0);
        let (_, trace) = net.forward_trace(&Matrix::row_vector(&[3.0])).unwrap();
        let bp = net.backward(&trace, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(bp.tape.as_slice(), &[3.0, 1.0]);
        assert_eq!(bp.input_grad.data(), &[0.7]);
    }

    #[test]
    fn trace_from_another_network_is_a_usage_error() {
        let a = Mlp::zeros(&[2, 3, 1], Activation::Tanh, Activation::Identity).unwrap();
        let b = Mlp::zeros(&[2, 4, 1], Activation::Tanh, Activation::Identity).unwrap();
        let (_, trace) = a.forward_trace(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(b.backward(&trace, &Matrix::zeros(1, 1)), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut rng = rng_from_seed(5);
        let mut net = Mlp::new(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Adam::for_net(1e-2, &net);
        let tape = GradientTape::zeros_like(&net);
        for _ in 0..10 {
            optimizer_step(&mut net, &tape, &mut opt).unwrap();
        }
        for (a, b) in net.params().iter().zip(before.params()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(opt.steps(), 10);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut net = affine(1.0, 2.0);
        let mut opt = Adam::for_net(0.0, &net);
        let mut tape = GradientTape::zeros_like(&net);
        tape.as_mut_slice().copy_from_slice(&[3.0, -4.0]);
        optimizer_step(&mut net, &tape, &mut opt).unwrap();
        assert_eq!(net.params(), &[1.0, 2.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // loss (w - 5)^2 on the bias of a 1x1 network, gradient 2 (w - 5)
        let mut net = affine(0.0, 0.0);
        let mut opt = Adam::for_net(0.05, &net);
        for _ in 0..5000 {
            let mut tape = GradientTape::zeros_like(&net);
            tape.as_mut_slice()[1] = 2.0 * (net.params()[1] - 5.0);
            optimizer_step(&mut net, &tape, &mut opt).unwrap();
        }
        assert!((net.params()[1] - 5.0).abs() < 1e-3, "{}", net.params()[1]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut net = affine(1.0, 0.0);
        let mut opt = Adam::for_net(0.1, &net);
        let mut tape = GradientTape::zeros_like(&net);
        tape.as_mut_slice()[0] = f64::NAN;
        assert!(matches!(optimizer_step(&mut net, &tape, &mut opt), Err(Error::NonFinite(_))));
        assert_eq!(net.params(), &[1.0, 0.0]);
    }

    #[test]
    fn soft_update_cases() {
        let mut target = affine(0.0, 0.0);
        let source = affine(2.0, 2.0);
        soft_update(&mut target, &source, 0.5).unwrap();
        assert_eq!(target.params(), &[1.0, 1.0]);
        soft_update(&mut target, &source, 1.0).unwrap();
        assert_eq!(target.params(), source.params());
        assert!(soft_update(&mut target, &source, 0.0).is_err());
        let other = Mlp::zeros(&[1, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert!(soft_update(&mut target, &other, 0.5).is_err());
    }

    #[test]
    fn soft_update_converges_geometrically() {
        let tau: f64 = 0.1;
        let mut target = affine(0.0, 0.0);
        let source = affine(1.0, -3.0);
        for k in 1..=50 {
            soft_update(&mut target, &source, tau).unwrap();
            let decay = (1.0 - tau).powi(k);
            assert!((target.params()[0] - (1.0 - decay)).abs() < 1e-12);
            assert!((target.params()[1] - (-3.0 * (1.0 - decay))).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_from_seed(9);
        let net = Mlp::new(&[3, 7, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let path = dir.path().join("net.bin");
        net.save(&path).unwrap();
        assert_eq!(Mlp::load(&path).unwrap(), net);
    }
}
