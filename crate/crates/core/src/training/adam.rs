use ndarray::Zip;

use crate::network::{ModelParams, ParamGrads, Real};

/// Adam with bias correction; defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: ParamGrads<T>,
    second: ParamGrads<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.zero_grads(),
            second: params.zero_grads(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c = |v: f64| T::from_f64(v).unwrap();
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let bias1 = c(1.0 - self.beta1.powi(t));
        let bias2 = c(1.0 - self.beta2.powi(t));
        let lr = c(self.learning_rate);
        let eps = c(self.epsilon);

        let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (((layer, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, ArchSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g / (|g| + eps) ~ lr * sign(g).
        let mut p: ModelParams<f64> =
            init_params(&ArchSpec::with_base(1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = p.clone();
        let mut g = p.zero_grads();
        g.layers[0].weight[[0, 0]] = 3.0;
        g.layers[0].weight[[0, 1]] = -0.5;
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &g);
        let d0 = p.layers[0].weight[[0, 0]] - before.layers[0].weight[[0, 0]];
        let d1 = p.layers[0].weight[[0, 1]] - before.layers[0].weight[[0, 1]];
        assert!((d0 + 0.01).abs() < 1e-9);
        assert!((d1 - 0.01).abs() < 1e-9);
        assert_eq!(p.layers[1], before.layers[1]);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p: ModelParams<f32> =
            init_params(&ArchSpec::with_base(1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = p.clone();
        let mut g = p.zero_grads();
        g.layers[3].weight.fill(0.7);
        let mut adam = Adam::new(&p, 0.0);
        adam.step(&mut p, &g);
        assert_eq!(p, before);
    }
}
