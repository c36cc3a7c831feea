use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{make_kernel, BlurKernel, KernelFamily, KernelShape};
use super::ops::{NoiseKind, NoiseSpec, ResampleFilter};
use super::DegradeError;

/// Closed range `[low, high]` unless noted otherwise at the use site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }

    fn check(&self, name: &str, positive: bool) -> Result<(), DegradeError> {
        let ok = self.low.is_finite()
            && self.high.is_finite()
            && self.low <= self.high
            && (!positive || self.low > 0.0);
        if ok {
            Ok(())
        } else {
            Err(DegradeError::Config(format!(
                "invalid {name} range [{}, {}]",
                self.low, self.high
            )))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    /// Probabilities in [`KernelFamily::ALL`] order.
    pub family_probabilities: [f64; 6],
    pub kernel_sizes: Vec<usize>,
    pub sigma: Range,
    pub beta_generalized: Range,
    pub beta_plateau: Range,
    /// Open interval: endpoints are never drawn.
    pub scale: Range,
    pub gaussian_sigma: Range,
    pub poisson_scale: Range,
    pub gaussian_probability: f64,
    pub jpeg_quality: (u8, u8),
    pub stages: u32,
    pub restore_original_size: bool,
    pub seed: u64,
    /// Leading share of each sequence that gets degraded.
    pub fraction: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            family_probabilities: [0.45, 0.25, 0.12, 0.03, 0.12, 0.03],
            kernel_sizes: (7..=21).step_by(2).collect(),
            sigma: Range::new(0.2, 3.0),
            beta_generalized: Range::new(0.5, 4.0),
            beta_plateau: Range::new(1.0, 2.0),
            scale: Range::new(0.15, 1.5),
            gaussian_sigma: Range::new(1.0 / 255.0, 30.0 / 255.0),
            poisson_scale: Range::new(0.05, 3.0),
            gaussian_probability: 0.5,
            jpeg_quality: (20, 40),
            stages: 2,
            restore_original_size: true,
            seed: 0,
            fraction: 2.0 / 3.0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<(), DegradeError> {
        let p = &self.family_probabilities;
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DegradeError::Config("family probabilities must be non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DegradeError::Config(format!(
                "family probabilities sum to {total}, expected 1"
            )));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|s| *s < 3 || s % 2 == 0) {
            return Err(DegradeError::Config("kernel sizes must be odd and >= 3".into()));
        }
        self.sigma.check("sigma", true)?;
        self.beta_generalized.check("generalized beta", true)?;
        self.beta_plateau.check("plateau beta", true)?;
        self.scale.check("scale", true)?;
        if self.scale.low >= self.scale.high {
            return Err(DegradeError::Config("scale range must be a non-empty open interval".into()));
        }
        self.gaussian_sigma.check("gaussian sigma", false)?;
        self.poisson_scale.check("poisson scale", false)?;
        if self.gaussian_sigma.low < 0.0 || self.poisson_scale.low < 0.0 {
            return Err(DegradeError::Config("noise strengths must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gaussian_probability) {
            return Err(DegradeError::Config("gaussian probability must lie in [0, 1]".into()));
        }
        let (qlo, qhi) = self.jpeg_quality;
        if qlo < 1 || qhi > 100 || qlo > qhi {
            return Err(DegradeError::Config(format!("invalid JPEG quality range [{qlo}, {qhi}]")));
        }
        if self.stages < 1 {
            return Err(DegradeError::Config("stage count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(DegradeError::Config("fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One draw of every random operator parameter of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationStageSample {
    pub family: KernelFamily,
    pub kernel_size: usize,
    pub shape: KernelShape,
    pub scale: f64,
    pub resample_filter: ResampleFilter,
    pub noise: NoiseSpec,
    pub jpeg_quality: u8,
}

impl DegradationStageSample {
    pub fn kernel(&self) -> Result<BlurKernel, DegradeError> {
        make_kernel(self.family, self.kernel_size, self.shape)
    }
}

pub fn sample_stage<R: Rng + ?Sized>(
    rng: &mut R,
    config: &DegradationConfig,
) -> Result<DegradationStageSample, DegradeError> {
    config.validate()?;
    let family_index = WeightedIndex::new(config.family_probabilities)
        .map_err(|e| DegradeError::Config(e.to_string()))?
        .sample(rng);
    let family = KernelFamily::ALL[family_index];
    let kernel_size = config.kernel_sizes[rng.random_range(0..config.kernel_sizes.len())];

    let sigma_x = config.sigma.sample(rng);
    let (sigma_y, theta) = if family.is_isotropic() {
        (sigma_x, 0.0)
    } else {
        (
            config.sigma.sample(rng),
            rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI),
        )
    };
    let beta = match family {
        KernelFamily::Isotropic | KernelFamily::Anisotropic => 1.0,
        KernelFamily::GeneralizedIsotropic | KernelFamily::GeneralizedAnisotropic => {
            config.beta_generalized.sample(rng)
        }
        KernelFamily::PlateauIsotropic | KernelFamily::PlateauAnisotropic => {
            config.beta_plateau.sample(rng)
        }
    };

    let scale = loop {
        let s = rng.random_range(config.scale.low..config.scale.high);
        if s > config.scale.low {
            break s;
        }
    };
    let resample_filter = ResampleFilter::ALL[rng.random_range(0..3)];
    let noise = if rng.random_bool(config.gaussian_probability) {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            strength: config.gaussian_sigma.sample(rng),
        }
    } else {
        NoiseSpec {
            kind: NoiseKind::Poisson,
            strength: config.poisson_scale.sample(rng),
        }
    };
    let jpeg_quality = rng.random_range(config.jpeg_quality.0..=config.jpeg_quality.1);

    Ok(DegradationStageSample {
        family,
        kernel_size,
        shape: KernelShape {
            sigma_x,
            sigma_y,
            theta,
            beta,
        },
        scale,
        resample_filter,
        noise,
        jpeg_quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_config_is_valid() {
        DegradationConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = DegradationConfig::default();
        c.family_probabilities[0] = 0.5;
        assert!(c.validate().is_err());
        let c = DegradationConfig {
            stages: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DegradationConfig {
            kernel_sizes: vec![7, 8],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DegradationConfig {
            jpeg_quality: (40, 20),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DegradationConfig {
            fraction: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn draws_stay_in_range() {
        let cfg = DegradationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let s = sample_stage(&mut rng, &cfg).unwrap();
            assert!(s.kernel_size % 2 == 1 && (7..=21).contains(&s.kernel_size));
            assert!(s.scale > 0.15 && s.scale < 1.5);
            assert!((20..=40).contains(&s.jpeg_quality));
            assert!(cfg.sigma.contains(s.shape.sigma_x) && cfg.sigma.contains(s.shape.sigma_y));
            match s.noise.kind {
                NoiseKind::Gaussian => assert!(cfg.gaussian_sigma.contains(s.noise.strength)),
                NoiseKind::Poisson => assert!(cfg.poisson_scale.contains(s.noise.strength)),
            }
        }
    }

    #[test]
    fn fresh_stream_reproduces_sample() {
        let cfg = DegradationConfig::default();
        let a = sample_stage(&mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        let b = sample_stage(&mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
