use crate::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out like the
/// parameters of the store they were created for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update. `grads[i]` belongs to the i-th parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::InvalidInput(format!(
                "adam: {} gradients / {} states for {} parameters",
                grads.len(),
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if g.len() != p.data.len() || m.len() != p.data.len() {
                return Err(Error::InvalidInput(format!(
                    "adam: gradient for {} has {} values, expected {}",
                    p.name,
                    g.len(),
                    p.data.len()
                )));
            }
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|x| *x *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("w", &[1], vec![w]).unwrap();
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = single(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[vec![0.0]]).unwrap();
        assert_eq!(store.iter().next().unwrap().data, vec![0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // f(w) = w², g = 2w = 2 at w = 1; bias-corrected first step is lr·g/|g|.
        let mut store = single(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        adam.step(&mut store, &[vec![2.0]]).unwrap();
        let w = store.iter().next().unwrap().data[0];
        assert!(w < 1.0);
        assert!((w - 0.9).abs() < 1e-7, "w = {w}");
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = Σ (w_i - c_i)²
        let target = [1.5, -2.0, 0.25];
        let mut store = ParamStore::new();
        store.insert("w", &[3], vec![0.0; 3]).unwrap();
        let loss = |w: &[f64]| -> f64 { w.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum() };
        let initial = loss(&store.iter().next().unwrap().data);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..200 {
            let w = store.iter().next().unwrap().data.clone();
            let g: Vec<f64> = w.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam.step(&mut store, &[g]).unwrap();
        }
        let fin = loss(&store.iter().next().unwrap().data);
        assert!(fin < initial * 1e-2, "{initial} -> {fin}");
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        let norm = clip_grad_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    }
}
