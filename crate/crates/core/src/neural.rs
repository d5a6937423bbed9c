//! Dense multilayer perceptrons with hand-written reverse mode, Adam, a
//! finite-difference gradient checker and the binary network checkpoint.
//!
//! Parameter layout: for each layer in order, the weight matrix stored
//! row-major as `fan_out x fan_in`, followed by the `fan_out` biases. Hidden
//! layers use ReLU (subgradient 0 at 0); the output layer is linear.

use std::io::{Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    weight_offset: usize,
    bias_offset: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Activations retained by a batched forward pass for the backward pass.
/// `activations[0]` is the input and the last entry is the output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

impl Mlp {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn validate_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Domain(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count_for(sizes)],
        })
    }

    /// Scaled-uniform initialization: every weight and bias of a layer is drawn
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new_random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in net.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let end = layer.bias_offset + layer.fan_out;
            for p in &mut net.params[layer.weight_offset..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        check_dim("Mlp::from_params", Self::param_count_for(sizes), params.len())?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("Mlp::set_params", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                offset += (w[0] + 1) * w[1];
                layer
            })
            .collect()
    }

    fn weights(&self, l: &Layer) -> ArrayView2<'_, f64> {
        let end = l.weight_offset + l.fan_in * l.fan_out;
        ArrayView2::from_shape((l.fan_out, l.fan_in), &self.params[l.weight_offset..end])
            .expect("layout matches layer shape")
    }

    fn bias(&self, l: &Layer) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.bias_offset..l.bias_offset + l.fan_out])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("Mlp::forward", self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.run(x, false)?.activations.pop().expect("non-empty"))
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.run(x, true)
    }

    fn run(&self, x: ArrayView2<'_, f64>, keep: bool) -> Result<ForwardCache> {
        check_dim("Mlp::forward", self.input_dim(), x.ncols())?;
        let layers = self.layers();
        let mut activations = Vec::with_capacity(if keep { layers.len() + 1 } else { 1 });
        let mut current = x.to_owned();
        for (i, layer) in layers.iter().enumerate() {
            let mut z = current.dot(&self.weights(layer).t());
            z += &self.bias(layer);
            if i + 1 < layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            let prev = std::mem::replace(&mut current, z);
            if keep {
                activations.push(prev);
            }
        }
        activations.push(current);
        Ok(ForwardCache { activations })
    }

    /// Reverse pass for one input. Returns `(param_grad, input_grad)`.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("Mlp::backward input", self.input_dim(), input.len())?;
        check_dim("Mlp::backward output_grad", self.output_dim(), output_grad.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        let cache = self.forward_cached(x)?;
        let mut param_grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_batch(&cache, g, Some(&mut param_grad))?;
        Ok((param_grad, input_grad.into_raw_vec_and_offset().0))
    }

    /// Batched reverse pass. Parameter gradients (summed over the batch) are
    /// accumulated into `param_grad` when given; the input gradient is always
    /// returned.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
        mut param_grad: Option<&mut [f64]>,
    ) -> Result<Array2<f64>> {
        check_dim("Mlp::backward_batch", self.output_dim(), output_grad.ncols())?;
        check_dim("Mlp::backward_batch rows", cache.input().nrows(), output_grad.nrows())?;
        if let Some(g) = param_grad.as_deref() {
            check_dim("Mlp::backward_batch param_grad", self.params.len(), g.len())?;
        }
        let layers = self.layers();
        let mut delta = output_grad.to_owned();
        for (i, layer) in layers.iter().enumerate().rev() {
            let a_prev = &cache.activations[i];
            if let Some(g) = param_grad.as_deref_mut() {
                let (w_grad, rest) = g[layer.weight_offset..].split_at_mut(layer.fan_in * layer.fan_out);
                let mut w_grad = ArrayViewMut2::from_shape((layer.fan_out, layer.fan_in), w_grad)
                    .expect("layout matches layer shape");
                general_mat_mul(1.0, &delta.t(), a_prev, 1.0, &mut w_grad);
                let mut b_grad = ArrayViewMut1::from(&mut rest[..layer.fan_out]);
                b_grad += &delta.sum_axis(Axis(0));
            }
            let mut upstream = delta.dot(&self.weights(layer));
            if i > 0 {
                upstream.zip_mut_with(a_prev, |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        Ok(delta)
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("Adam::step params", self.m.len(), params.len())?;
        check_dim("Adam::step grad", self.m.len(), grad.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Compares an analytic gradient against central differences of `loss`.
///
/// Returns the maximum over checked coordinates of
/// `|analytic - numeric| / max(|numeric|, 1e-3 * max|numeric|, 1e-12)`, so a
/// gradient scaled by two reports an error of one. `coords` restricts the
/// check to a subset of coordinates (all when `None`).
pub fn finite_difference_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    coords: Option<&[usize]>,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    check_dim("finite_difference_check", params.len(), analytic.len())?;
    if !(h > 0.0) {
        return Err(Error::Domain("step h must be positive".into()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss(&probe);
        probe[i] = orig - h;
        let down = loss(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Domain(format!("loss is not finite near coordinate {i}")));
        }
        numeric.push((up - down) / (2.0 * h));
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(coords
        .iter()
        .zip(&numeric)
        .map(|(&i, n)| {
            let denom = n.abs().max(1e-3 * scale).max(1e-12);
            (analytic[i] - n).abs() / denom
        })
        .fold(0.0, f64::max))
}

const NET_MAGIC: &[u8; 8] = b"GACNET01";

/// Writes a network as: magic `GACNET01`, `u64` layer count, each layer size
/// as `u64`, `u64` parameter count, then the parameters as `f64`. All
/// integers and reals are little-endian.
pub fn write_network<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    w.write_all(&(net.sizes.len() as u64).to_le_bytes())?;
    for s in &net.sizes {
        w.write_all(&(*s as u64).to_le_bytes())?;
    }
    w.write_all(&(net.params.len() as u64).to_le_bytes())?;
    for p in &net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Mlp> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(Error::Format("not a network blob".into()));
    }
    let n_layers = read_u64(r)? as usize;
    if !(2..=64).contains(&n_layers) {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let sizes = (0..n_layers)
        .map(|_| read_u64(r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = read_u64(r)? as usize;
    if count != Mlp::param_count_for(&sizes) {
        return Err(Error::Format("parameter count does not match layer sizes".into()));
    }
    let params = (0..count).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
    Mlp::from_params(&sizes, params)
}
