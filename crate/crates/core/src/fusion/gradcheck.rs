use super::{adapter_forward, fuse, vsfm_forward, FusionParams};
use crate::nncore::{finite_diff, richardson, NnError, Tensor};

/// Base step for the Richardson sequence `eps, eps/2, eps/4`.
pub const RICHARDSON_EPS: f64 = 0.1;
/// Second step for the cross-step consistency check.
pub const CONSISTENCY_EPS: f64 = 0.01;

/// Finite-difference steps of a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSteps {
    pub richardson: f64,
    pub consistency: f64,
}

impl Default for GradSteps {
    fn default() -> Self {
        GradSteps {
            richardson: RICHARDSON_EPS,
            consistency: CONSISTENCY_EPS,
        }
    }
}
pub const RATIO_RANGE: (f64, f64) = (3.9, 4.1);
pub const CONSISTENCY_TOL: f64 = 1e-3;

/// Scalar probe `sum(output)` and the inputs it is differentiated against.
#[derive(Debug, Clone)]
pub enum GradProbe {
    /// `sum(F_as)` w.r.t. `X_q` (grid form) and `X_s`.
    Adapter { x_q: Tensor, x_s: Tensor },
    /// `sum(F_fq)` w.r.t. `X_as` and `X_q`.
    Vsfm { x_as: Tensor, x_q: Tensor },
    /// `sum(F_fq)` of the chained graphs w.r.t. `X_s` and `X_q`.
    Fused { x_s: Tensor, x_q: Tensor },
}

#[derive(Debug, Clone)]
pub struct InputGradient {
    pub name: &'static str,
    /// Extrapolated from the Richardson sequence.
    pub gradient: Tensor,
    pub nonfinite: Vec<usize>,
    pub ratio: f64,
    /// `|D(eps) - D(eps')| / |D(eps')|` for the two configured steps.
    pub relative_consistency: f64,
}

impl InputGradient {
    pub fn ratio_ok(&self) -> bool {
        (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&self.ratio)
    }

    pub fn passed(&self) -> bool {
        self.nonfinite.is_empty() && self.ratio_ok() && self.relative_consistency <= CONSISTENCY_TOL
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputGradient>,
    pub traces_finite: bool,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.traces_finite && self.inputs.iter().all(InputGradient::passed)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.traces_finite {
            out.push("non-finite activation in forward trace".to_string());
        }
        for g in &self.inputs {
            if !g.nonfinite.is_empty() {
                out.push(format!("{}: non-finite gradient at {:?}", g.name, g.nonfinite));
            }
            if !g.ratio_ok() {
                out.push(format!("{}: Richardson ratio {:.4}", g.name, g.ratio));
            }
            if g.relative_consistency > CONSISTENCY_TOL {
                out.push(format!("{}: step consistency {:.3e}", g.name, g.relative_consistency));
            }
        }
        out
    }
}

fn probe_value(params: &FusionParams, probe: &GradProbe, which: usize, x: &Tensor) -> Result<f64, NnError> {
    let pick = |a: &Tensor, b: &Tensor| if which == 0 { (x.clone(), b.clone()) } else { (a.clone(), x.clone()) };
    Ok(match probe {
        GradProbe::Adapter { x_q, x_s } => {
            let (q, s) = pick(x_q, x_s);
            adapter_forward(&q, &s, &params.adapter)?.f_as.sum()
        }
        GradProbe::Vsfm { x_as, x_q } => {
            let (a, q) = pick(x_as, x_q);
            vsfm_forward(&a, &q, &params.vsfm)?.f_fq.sum()
        }
        GradProbe::Fused { x_s, x_q } => {
            let (s, q) = pick(x_s, x_q);
            fuse(&s, &q, params, None)?.vsfm.f_fq.sum()
        }
    })
}

fn traces_finite(params: &FusionParams, probe: &GradProbe) -> Result<bool, NnError> {
    Ok(match probe {
        GradProbe::Adapter { x_q, x_s } => adapter_forward(x_q, x_s, &params.adapter)?.is_finite(),
        GradProbe::Vsfm { x_as, x_q } => vsfm_forward(x_as, x_q, &params.vsfm)?.is_finite(),
        GradProbe::Fused { x_s, x_q } => {
            let t = fuse(x_s, x_q, params, None)?;
            t.query_grid.is_finite() && t.adapter.is_finite() && t.vsfm.is_finite()
        }
    })
}

fn norm(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central-difference gradients of the probe w.r.t. each of its inputs.
pub fn grad_check_fusion(params: &FusionParams, probe: &GradProbe) -> Result<GradCheckReport, NnError> {
    grad_check_fusion_with(params, probe, GradSteps::default())
}

pub fn grad_check_fusion_with(
    params: &FusionParams,
    probe: &GradProbe,
    steps: GradSteps,
) -> Result<GradCheckReport, NnError> {
    let traces_finite = traces_finite(params, probe)?;
    let inputs: [(&'static str, &Tensor); 2] = match probe {
        GradProbe::Adapter { x_q, x_s } => [("x_q", x_q), ("x_s", x_s)],
        GradProbe::Vsfm { x_as, x_q } => [("x_as", x_as), ("x_q", x_q)],
        GradProbe::Fused { x_s, x_q } => [("x_s", x_s), ("x_q", x_q)],
    };
    let mut reports = Vec::new();
    for (which, (name, x)) in inputs.iter().enumerate() {
        // Shapes were validated by the forward pass above, so evaluation cannot fail here.
        let f = |t: &Tensor| probe_value(params, probe, which, t).unwrap_or(f64::NAN);
        let r = richardson(f, x, steps.richardson);
        let fine = finite_diff(f, x, steps.consistency);
        let diff = r.estimates[0].add(&fine.scale(-1.0))?;
        let gradient = r.extrapolated();
        let nonfinite = r
            .estimates
            .iter()
            .chain([&fine])
            .flat_map(|t| t.data().iter().enumerate().filter(|(_, v)| !v.is_finite()).map(|(i, _)| i))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        reports.push(InputGradient {
            name,
            gradient,
            nonfinite,
            ratio: r.ratio,
            relative_consistency: norm(&diff) / norm(&fine).max(f64::MIN_POSITIVE),
        });
    }
    Ok(GradCheckReport {
        inputs: reports,
        traces_finite,
    })
}
