use rand::Rng;

use super::NnError;

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {n} samples, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Samples drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize), NnError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(NnError::Shape(format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize), NnError> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(NnError::Shape(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        if self.shape != other.shape {
            return Err(NnError::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NnError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, NnError> {
        let (_, h, w) = parts
            .first()
            .ok_or_else(|| NnError::Shape("nothing to concatenate".into()))?
            .dims3()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(NnError::Shape(format!(
                    "spatial mismatch {ph}x{pw} vs {h}x{w}"
                )));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(&[c_total, h, w], data)
    }

    /// `[C, H, W]` feature map → `[H*W, C]` token matrix.
    pub fn map_to_tokens(&self) -> Result<Tensor, NnError> {
        let (c, h, w) = self.dims3()?;
        let l = h * w;
        let mut out = vec![0.0; l * c];
        for ch in 0..c {
            for p in 0..l {
                out[p * c + ch] = self.data[ch * l + p];
            }
        }
        Tensor::from_vec(&[l, c], out)
    }

    /// Inverse of [`Tensor::map_to_tokens`].
    pub fn tokens_to_map(&self, h: usize, w: usize) -> Result<Tensor, NnError> {
        let (l, c) = self.dims2()?;
        if l != h * w {
            return Err(NnError::Shape(format!("{l} tokens do not tile {h}x{w}")));
        }
        let mut out = vec![0.0; l * c];
        for p in 0..l {
            for ch in 0..c {
                out[ch * l + p] = self.data[p * c + ch];
            }
        }
        Tensor::from_vec(&[c, h, w], out)
    }
}
