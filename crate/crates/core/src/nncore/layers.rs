//! Dense and convolutional primitives plus pointwise activations.

use rand::Rng;

use super::{NnError, Tensor};
use crate::degrade::reflect_index;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `x * sigmoid(x)`: ReLU-shaped but smooth, so finite differences converge.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        LinearParams {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::uniform(&[output], bound, rng),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut weight = Tensor::zeros(&[n, n]);
        for i in 0..n {
            weight.data_mut()[i * n + i] = 1.0;
        }
        LinearParams {
            weight,
            bias: Tensor::zeros(&[n]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn zero(&mut self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }

    pub fn scale(&mut self, k: f64) {
        self.weight.data_mut().iter_mut().for_each(|v| *v *= k);
        self.bias.data_mut().iter_mut().for_each(|v| *v *= k);
    }

    fn check(&self) -> Result<(), NnError> {
        let (o, _) = self.weight.dims2()?;
        if self.bias.shape() != [o] {
            return Err(NnError::Shape(format!(
                "linear bias {:?} does not match {o} outputs",
                self.bias.shape()
            )));
        }
        Ok(())
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check()?;
        let (o, i) = self.weight.dims2()?;
        if x.len() != i {
            return Err(NnError::Shape(format!("linear expects {i} inputs, got {}", x.len())));
        }
        let w = self.weight.data();
        Ok((0..o)
            .map(|r| {
                let row = &w[r * i..(r + 1) * i];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias.data()[r]
            })
            .collect())
    }

    /// Applies the map to every row of `[L, in]`.
    pub fn apply_rows(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let (l, i) = x.dims2()?;
        if i != self.in_features() {
            return Err(NnError::Shape(format!(
                "linear expects width {}, got {i}",
                self.in_features()
            )));
        }
        let mut out = Vec::with_capacity(l * self.out_features());
        for r in 0..l {
            out.extend(self.apply_vec(&x.data()[r * i..(r + 1) * i])?);
        }
        Tensor::from_vec(&[l, self.out_features()], out)
    }
}

/// Square convolution kernel stored `[C_out, C_in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        let bound = (1.0 / (c_in * k * k) as f64).sqrt();
        ConvParams {
            weight: Tensor::uniform(&[c_out, c_in, k, k], bound, rng),
            bias: Tensor::uniform(&[c_out], bound, rng),
        }
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(&[c_out, c_in, k, k]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn zero(&mut self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }

    pub fn scale(&mut self, k: f64) {
        self.weight.data_mut().iter_mut().for_each(|v| *v *= k);
        self.bias.data_mut().iter_mut().for_each(|v| *v *= k);
    }
}

/// Dilated cross-correlation with reflect padding; spatial size is kept.
pub fn conv2d(x: &Tensor, p: &ConvParams, dilation: usize) -> Result<Tensor, NnError> {
    let (c_in, h, w) = x.dims3()?;
    let ws = p.weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 {
        return Err(NnError::Shape(format!("conv weight must be [O, I, k, k] with odd k, got {ws:?}")));
    }
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != c_in {
        return Err(NnError::Shape(format!("conv expects {} input channels, got {c_in}", ws[1])));
    }
    if p.bias.shape() != [c_out] {
        return Err(NnError::Shape("conv bias does not match output channels".into()));
    }
    if dilation == 0 {
        return Err(NnError::Shape("dilation must be >= 1".into()));
    }
    let half = (k / 2) as isize;
    let d = dilation as isize;
    let wt = p.weight.data();
    let xd = x.data();
    let mut out = vec![0.0; c_out * h * w];
    for y in 0..h {
        for xx in 0..w {
            for o in 0..c_out {
                let mut acc = p.bias.data()[o];
                for i in 0..c_in {
                    for ky in 0..k {
                        let sy = reflect_index(y as isize + (ky as isize - half) * d, h);
                        for kx in 0..k {
                            let sx = reflect_index(xx as isize + (kx as isize - half) * d, w);
                            acc += wt[((o * c_in + i) * k + ky) * k + kx] * xd[(i * h + sy) * w + sx];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    Tensor::from_vec(&[c_out, h, w], out)
}

/// Max-subtracted softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor, NnError> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(NnError::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (d[idx(k)] - m).exp();
                d[idx(k)] = e;
                total += e;
            }
            for k in 0..n {
                d[idx(k)] /= total;
            }
        }
    }
    Ok(out)
}
