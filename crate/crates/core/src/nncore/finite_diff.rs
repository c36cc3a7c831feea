//! Central-difference gradient estimates.

use super::Tensor;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every element `i`.
pub fn finite_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite_diff needs a positive step");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

fn l2_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Convergence ratio `|D(eps) - D(eps/2)| / |D(eps/2) - D(eps/4)|`.
///
/// The truncation error of central differences is `O(eps^2)`, so the ratio
/// tends to 4 while truncation dominates round-off.
#[derive(Debug, Clone)]
pub struct Richardson {
    pub estimates: [Tensor; 3],
    pub ratio: f64,
}

impl Richardson {
    /// Richardson-extrapolated gradient `(4 D(eps/4) - D(eps/2)) / 3`.
    pub fn extrapolated(&self) -> Tensor {
        self.estimates[2]
            .scale(4.0 / 3.0)
            .add(&self.estimates[1].scale(-1.0 / 3.0))
            .expect("estimates share a shape")
    }
}

pub fn richardson(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Richardson {
    let d1 = finite_diff(&f, x, eps);
    let d2 = finite_diff(&f, x, eps / 2.0);
    let d3 = finite_diff(&f, x, eps / 4.0);
    let ratio = l2_distance(&d1, &d2) / l2_distance(&d2, &d3);
    Richardson {
        estimates: [d1, d2, d3],
        ratio,
    }
}
