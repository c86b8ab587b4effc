//! Noise schedules and the closed-form diffusion updates.
//!
//! Timesteps are 1-based: `t` ranges over `1..=T`, and `alpha_bar(0)` is 1.

use serde::{Deserialize, Serialize};
use vfi_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Parameters that fully determine a [`NoiseSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 2e-2 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// Linearly spaced betas, endpoints included.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let beta_tilde = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
        })
        .collect();
    Ok(NoiseSchedule { spec: ScheduleSpec { steps, beta_start, beta_end }, beta, alpha, alpha_bar, beta_tilde })
}

impl NoiseSchedule {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep { t, min: 1, max: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior variance; zero at `t = 1`.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn q_sample<S: Scalar>(z0: &Tensor<S>, t: usize, eps: &Tensor<S>, schedule: &NoiseSchedule) -> Result<Tensor<S>> {
    schedule.check(t)?;
    same_shape(z0, eps, "q_sample")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
    Ok(z0.zip_map(eps, |z, e| a * z + b * e))
}

/// Inverts [`q_sample`] for a given noise estimate.
pub fn predict_z0<S: Scalar>(
    z_t: &Tensor<S>,
    t: usize,
    eps_hat: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    schedule.check(t)?;
    same_shape(z_t, eps_hat, "predict_z0")?;
    let ab = schedule.alpha_bar(t);
    let (s, inv) = (S::of((1.0 - ab).sqrt()), S::of(1.0 / ab.sqrt()));
    Ok(z_t.zip_map(eps_hat, |z, e| (z - s * e) * inv))
}

/// Posterior mean `1/sqrt(a_t) (z_t - (1 - a_t)/sqrt(1 - abar_t) eps_hat)`.
pub fn ddpm_mean<S: Scalar>(
    z_t: &Tensor<S>,
    t: usize,
    eps_hat: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    schedule.check(t)?;
    same_shape(z_t, eps_hat, "ddpm_mean")?;
    let a = schedule.alpha(t);
    let inv = S::of(1.0 / a.sqrt());
    let c = S::of((1.0 - a) / (1.0 - schedule.alpha_bar(t)).sqrt());
    Ok(z_t.zip_map(eps_hat, |z, e| inv * (z - c * e)))
}

/// One ancestral step `mu_t + sigma_t * noise` with `sigma_t^2 = beta_tilde_t`.
///
/// `noise` is ignored at `t = 1`, where the step returns the mean.
pub fn ddpm_step<S: Scalar>(
    z_t: &Tensor<S>,
    t: usize,
    eps_hat: &Tensor<S>,
    noise: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    let mean = ddpm_mean(z_t, t, eps_hat, schedule)?;
    if t == 1 {
        return Ok(mean);
    }
    same_shape(z_t, noise, "ddpm_step")?;
    let sigma = S::of(schedule.beta_tilde(t).sqrt());
    Ok(mean.zip_map(noise, |m, n| m + sigma * n))
}

/// Deterministic (eta = 0) jump from `t` to `t_prev`.
pub fn ddim_step<S: Scalar>(
    z_t: &Tensor<S>,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!("ddim step needs t_prev < t, got {t_prev} >= {t}")));
    }
    let z0 = predict_z0(z_t, t, eps_hat, schedule)?;
    if t_prev == 0 {
        return Ok(z0);
    }
    let ab = schedule.alpha_bar(t_prev);
    let (a, b) = (S::of(ab.sqrt()), S::of((1.0 - ab).sqrt()));
    Ok(z0.zip_map(eps_hat, |z, e| a * z + b * e))
}

/// Descending timesteps `T, T - k, T - 2k, ...` of length `count`, `k = T / count`.
pub fn ddim_timesteps(steps: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > steps {
        return Err(Error::Config(format!("ddim step count must lie in 1..={steps}, got {count}")));
    }
    let stride = steps / count;
    Ok((0..count).map(|k| steps - k * stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        linear_schedule(1000, 1e-4, 2e-2).unwrap()
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(linear_schedule(0, 1e-4, 2e-2).is_err());
        assert!(linear_schedule(10, 0.0, 2e-2).is_err());
        assert!(linear_schedule(10, 0.3, 0.2).is_err());
        assert!(linear_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn single_step_schedule() {
        let s = linear_schedule(1, 0.01, 0.02).unwrap();
        assert_eq!(s.betas(), &[0.01]);
        assert_eq!(s.alpha_bars(), &[0.99]);
        assert_eq!(s.beta_tilde(1), 0.0);
    }

    #[test]
    fn identities_hold() {
        let s = sched();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        for t in 1..=1000 {
            assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() < 1e-15);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let bt = s.beta_tilde(t);
            assert!(bt <= s.beta(t) && (t == 1 || bt > 0.0));
        }
        assert!(s.alpha_bar(1000) < 0.05);
    }

    #[test]
    fn q_sample_edges() {
        let s = sched();
        let z0 = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let zero = Tensor::<f64>::zeros(&[3]);
        let zt = q_sample(&z0, 10, &zero, &s).unwrap();
        let a = s.alpha_bar(10).sqrt();
        assert!(zt.data().iter().zip(z0.data()).all(|(x, z)| (x - a * z).abs() < 1e-15));
        let zt = q_sample(&zero, 10, &z0, &s).unwrap();
        let b = (1.0 - s.alpha_bar(10)).sqrt();
        assert!(zt.data().iter().zip(z0.data()).all(|(x, z)| (x - b * z).abs() < 1e-15));
        assert!(q_sample(&z0, 0, &zero, &s).is_err());
        assert!(q_sample(&z0, 1001, &zero, &s).is_err());
    }

    #[test]
    fn eps_zero_inversion() {
        let s = sched();
        let zt = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let z0 = predict_z0(&zt, 500, &Tensor::zeros(&[2]), &s).unwrap();
        let r = s.alpha_bar(500).sqrt();
        assert!((z0.data()[0] - 0.3 / r).abs() < 1e-12);
    }

    #[test]
    fn terminal_ddpm_step_is_mean() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zt = Tensor::<f64>::randn(&[8], &mut rng);
        let eps = Tensor::randn(&[8], &mut rng);
        let noise = Tensor::randn(&[8], &mut rng);
        let out = ddpm_step(&zt, 1, &eps, &noise, &s).unwrap();
        assert_eq!(out, ddpm_mean(&zt, 1, &eps, &s).unwrap());
        let out = ddpm_step(&zt, 2, &eps, &noise, &s).unwrap();
        assert_ne!(out, ddpm_mean(&zt, 2, &eps, &s).unwrap());
    }

    #[test]
    fn ddim_to_zero_is_predict_z0() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zt = Tensor::<f64>::randn(&[5], &mut rng);
        let eps = Tensor::randn(&[5], &mut rng);
        assert_eq!(ddim_step(&zt, 40, 0, &eps, &s).unwrap(), predict_z0(&zt, 40, &eps, &s).unwrap());
        assert!(ddim_step(&zt, 40, 40, &eps, &s).is_err());
        let a = ddim_step(&zt, 40, 12, &eps, &s).unwrap();
        let b = ddim_step(&zt, 40, 12, &eps, &s).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn ddim_with_true_noise_lands_on_marginal() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z0 = Tensor::<f64>::randn(&[16], &mut rng);
        let eps = Tensor::randn(&[16], &mut rng);
        let zt = q_sample(&z0, 700, &eps, &s).unwrap();
        let stepped = ddim_step(&zt, 700, 350, &eps, &s).unwrap();
        let direct = q_sample(&z0, 350, &eps, &s).unwrap();
        assert!(stepped.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn timesteps() {
        assert_eq!(ddim_timesteps(10, 10).unwrap(), (1..=10).rev().collect::<Vec<_>>());
        let ts = ddim_timesteps(1000, 200).unwrap();
        assert_eq!(ts.len(), 200);
        assert_eq!(ts[0], 1000);
        assert_eq!(*ts.last().unwrap(), 5);
        assert!(ts.windows(2).all(|w| w[0] - w[1] == 5));
        assert_eq!(ddim_timesteps(1000, 1).unwrap(), vec![1000]);
        assert!(ddim_timesteps(10, 11).is_err());
        assert!(ddim_timesteps(10, 0).is_err());
        let odd = ddim_timesteps(10, 3).unwrap();
        assert_eq!(odd, vec![10, 7, 4]);
    }
}
