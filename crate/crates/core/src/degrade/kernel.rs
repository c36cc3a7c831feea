//! Blur kernels for the degradation cascade.
//!
//! All six families share one construction: a covariance built from
//! `(sigma_x, sigma_y, theta)`, the squared Mahalanobis radius `rho` of every
//! grid offset, and a radial profile applied to `rho`:
//!
//! | family                | profile              |
//! |-----------------------|----------------------|
//! | (an)isotropic         | `exp(-rho / 2)`      |
//! | generalized           | `exp(-rho^beta / 2)` |
//! | plateau               | `1 / (1 + rho^beta)` |
//!
//! Isotropic families force `sigma_y = sigma_x` and `theta = 0`.

use serde::{Deserialize, Serialize};

use super::DegradeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Isotropic,
    Anisotropic,
    GeneralizedIsotropic,
    GeneralizedAnisotropic,
    PlateauIsotropic,
    PlateauAnisotropic,
}

impl KernelFamily {
    /// Order matches the probability vector of [`super::DegradationConfig`].
    pub const ALL: [KernelFamily; 6] = [
        KernelFamily::Isotropic,
        KernelFamily::Anisotropic,
        KernelFamily::GeneralizedIsotropic,
        KernelFamily::GeneralizedAnisotropic,
        KernelFamily::PlateauIsotropic,
        KernelFamily::PlateauAnisotropic,
    ];

    pub fn is_isotropic(self) -> bool {
        matches!(
            self,
            KernelFamily::Isotropic
                | KernelFamily::GeneralizedIsotropic
                | KernelFamily::PlateauIsotropic
        )
    }

    pub fn uses_beta(self) -> bool {
        !matches!(self, KernelFamily::Isotropic | KernelFamily::Anisotropic)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|f| *f == self).unwrap()
    }
}

/// Shape parameters. `sigma_y` and `theta` are ignored by isotropic
/// families, `beta` by the two plain Gaussian families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub theta: f64,
    pub beta: f64,
}

impl KernelShape {
    pub fn isotropic(sigma: f64) -> Self {
        KernelShape {
            sigma_x: sigma,
            sigma_y: sigma,
            theta: 0.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub size: usize,
    /// Row-major `size x size`, non-negative, sums to one.
    pub weights: Vec<f64>,
    pub family: KernelFamily,
    pub shape: KernelShape,
}

impl BlurKernel {
    /// The delta kernel: convolution with it is the identity.
    pub fn identity(size: usize) -> Result<Self, DegradeError> {
        check_size(size)?;
        let mut weights = vec![0.0; size * size];
        weights[(size / 2) * size + size / 2] = 1.0;
        Ok(BlurKernel {
            size,
            weights,
            family: KernelFamily::Isotropic,
            shape: KernelShape::isotropic(0.0),
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn center(&self) -> f64 {
        self.at(self.size / 2, self.size / 2)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn check_size(size: usize) -> Result<(), DegradeError> {
    if size < 3 || size % 2 == 0 {
        return Err(DegradeError::InvalidKernel(format!(
            "kernel size must be odd and >= 3, got {size}"
        )));
    }
    Ok(())
}

pub fn make_kernel(
    family: KernelFamily,
    size: usize,
    shape: KernelShape,
) -> Result<BlurKernel, DegradeError> {
    check_size(size)?;
    let shape = if family.is_isotropic() {
        KernelShape {
            sigma_y: shape.sigma_x,
            theta: 0.0,
            ..shape
        }
    } else {
        shape
    };
    let KernelShape {
        sigma_x,
        sigma_y,
        theta,
        beta,
    } = shape;
    if !(sigma_x.is_finite() && sigma_x > 0.0 && sigma_y.is_finite() && sigma_y > 0.0) {
        return Err(DegradeError::InvalidKernel(format!(
            "sigmas must be positive and finite, got ({sigma_x}, {sigma_y})"
        )));
    }
    if !theta.is_finite() {
        return Err(DegradeError::InvalidKernel("rotation must be finite".into()));
    }
    if family.uses_beta() && !(beta.is_finite() && beta > 0.0) {
        return Err(DegradeError::InvalidKernel(format!(
            "shape exponent must be positive and finite, got {beta}"
        )));
    }

    // Inverse of R diag(sx^2, sy^2) R^T, written out as a 2x2 quadratic form.
    let (sin, cos) = theta.sin_cos();
    let (ix, iy) = (1.0 / (sigma_x * sigma_x), 1.0 / (sigma_y * sigma_y));
    let a = cos * cos * ix + sin * sin * iy;
    let b = cos * sin * (ix - iy);
    let c = sin * sin * ix + cos * cos * iy;

    let half = (size / 2) as isize;
    let mut weights = Vec::with_capacity(size * size);
    for row in -half..=half {
        for col in -half..=half {
            let (x, y) = (col as f64, row as f64);
            let rho = a * x * x + 2.0 * b * x * y + c * y * y;
            let w = match family {
                KernelFamily::Isotropic | KernelFamily::Anisotropic => (-0.5 * rho).exp(),
                KernelFamily::GeneralizedIsotropic | KernelFamily::GeneralizedAnisotropic => {
                    (-0.5 * rho.powf(beta)).exp()
                }
                KernelFamily::PlateauIsotropic | KernelFamily::PlateauAnisotropic => {
                    1.0 / (1.0 + rho.powf(beta))
                }
            };
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(DegradeError::InvalidKernel("kernel mass vanished".into()));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(BlurKernel {
        size,
        weights,
        family,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotate90(k: &BlurKernel) -> Vec<f64> {
        let n = k.size;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                out[c * n + (n - 1 - r)] = k.at(r, c);
            }
        }
        out
    }

    #[test]
    fn isotropic_is_normalized_and_symmetric() {
        let k = make_kernel(KernelFamily::Isotropic, 7, KernelShape::isotropic(1.0)).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-12);
        assert_eq!(rotate90(&k), k.weights);
    }

    #[test]
    fn tiny_sigma_approaches_delta() {
        // Oracle: the 7x7 Gaussian profile at sigma 1e-3 is exp(-0.5 * d^2 / 1e-6)
        // which underflows to zero everywhere except the center.
        let sigma: f64 = 1e-3;
        let mut oracle = [0.0f64; 49];
        for r in 0..7 {
            for c in 0..7 {
                let d2 = ((r as f64 - 3.0).powi(2) + (c as f64 - 3.0).powi(2)) / (sigma * sigma);
                oracle[r * 7 + c] = (-0.5 * d2).exp();
            }
        }
        let total: f64 = oracle.iter().sum();
        let oracle_center = oracle[24] / total;
        let k = make_kernel(KernelFamily::Isotropic, 7, KernelShape::isotropic(sigma)).unwrap();
        assert!(k.center() > 0.999);
        assert!((k.center() - oracle_center).abs() < 1e-12);
    }

    fn moments(k: &BlurKernel) -> (f64, f64) {
        let half = (k.size / 2) as f64;
        let (mut var_x, mut var_y) = (0.0, 0.0);
        for r in 0..k.size {
            for c in 0..k.size {
                let w = k.at(r, c);
                var_x += w * (c as f64 - half).powi(2);
                var_y += w * (r as f64 - half).powi(2);
            }
        }
        (var_x, var_y)
    }

    #[test]
    fn anisotropic_spreads_along_x() {
        let shape = KernelShape {
            sigma_x: 3.0,
            sigma_y: 1.0,
            theta: 0.0,
            beta: 1.0,
        };
        let k = make_kernel(KernelFamily::Anisotropic, 21, shape).unwrap();
        let (var_x, var_y) = moments(&k);
        assert!(var_x > var_y, "{var_x} vs {var_y}");
        // Rotating by 90 degrees swaps the axes.
        let k = make_kernel(
            KernelFamily::Anisotropic,
            21,
            KernelShape {
                theta: std::f64::consts::FRAC_PI_2,
                ..shape
            },
        )
        .unwrap();
        let (var_x, var_y) = moments(&k);
        assert!(var_y > var_x);
    }

    #[test]
    fn every_family_normalizes() {
        let shape = KernelShape {
            sigma_x: 2.1,
            sigma_y: 0.7,
            theta: 0.6,
            beta: 1.7,
        };
        for family in KernelFamily::ALL {
            for size in [3, 7, 13, 21] {
                let k = make_kernel(family, size, shape).unwrap();
                assert!((k.sum() - 1.0).abs() < 1e-12);
                assert!(k.weights.iter().all(|w| *w >= 0.0));
                if family.is_isotropic() {
                    let rot = rotate90(&k);
                    for (a, b) in rot.iter().zip(&k.weights) {
                        assert!((a - b).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn plateau_is_flatter_than_gaussian() {
        let g = make_kernel(KernelFamily::Isotropic, 21, KernelShape::isotropic(2.0)).unwrap();
        let p = make_kernel(
            KernelFamily::PlateauIsotropic,
            21,
            KernelShape {
                beta: 1.0,
                ..KernelShape::isotropic(2.0)
            },
        )
        .unwrap();
        // Heavier tails: the corner carries more mass.
        assert!(p.at(0, 0) > g.at(0, 0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = KernelShape::isotropic(1.0);
        assert!(make_kernel(KernelFamily::Isotropic, 8, s).is_err());
        assert!(make_kernel(KernelFamily::Isotropic, 1, s).is_err());
        assert!(make_kernel(KernelFamily::Isotropic, 7, KernelShape::isotropic(0.0)).is_err());
        assert!(make_kernel(
            KernelFamily::GeneralizedAnisotropic,
            7,
            KernelShape { beta: -1.0, ..s }
        )
        .is_err());
        assert!(BlurKernel::identity(4).is_err());
    }
}
