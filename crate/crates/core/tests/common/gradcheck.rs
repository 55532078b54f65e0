//! Central finite-difference checks shared by the gradient tests and the
//! acceptance suite. Each routine returns the worst relative error seen.

use super::oracles::{fd_plane, rel_err};
use hsv_retinex::losses::{self, PoolSpec};
use hsv_retinex::network::{self, ArchSpec, ModelParams, OutputActivation};
use hsv_retinex::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::from_fn(w, h, |_, _| rng.random::<f64>())
}

fn max_rel(a: &Plane, b: &Plane) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct LossGradErrors {
    pub rc: f64,
    pub ec: f64,
    pub ss: f64,
    pub is: f64,
}

impl LossGradErrors {
    pub fn worst(&self) -> f64 {
        self.rc.max(self.ec).max(self.ss).max(self.is)
    }
}

/// Every loss on `trials` random instances each of 8x8 (small pools) and
/// 16x16 (default pools).
pub fn loss_gradients(seed: u64, trials: usize) -> LossGradErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = PoolSpec {
        n_exposure: 4,
        m_structure: 2,
        e_target: 0.7,
    };
    let h = 1e-5;
    let mut e = LossGradErrors::default();
    for (size, spec) in [(8, small), (16, PoolSpec::default())] {
        for _ in 0..trials {
            let r = random_plane(size, size, &mut rng);
            let rp = random_plane(size, size, &mut rng);
            let v = random_plane(size, size, &mut rng);

            let (_, g) = losses::reflectance_consistency_grad(&r, &rp).unwrap();
            let fd = fd_plane(&r, h, |q| losses::reflectance_consistency(q, &rp).unwrap());
            e.rc = e.rc.max(max_rel(&g, &fd));

            let (_, g) = losses::exposure_control_grad(&r, &spec).unwrap();
            let fd = fd_plane(&r, h, |q| losses::exposure_control(q, &spec).unwrap());
            e.ec = e.ec.max(max_rel(&g, &fd));

            let (_, g) = losses::spatial_structure_grad(&r, &v, &spec).unwrap();
            let fd = fd_plane(&r, h, |q| losses::spatial_structure(q, &v, &spec).unwrap());
            e.ss = e.ss.max(max_rel(&g, &fd));

            let (_, g) = losses::total_variation_sq_grad(&r);
            let fd = fd_plane(&r, h, losses::total_variation_sq);
            e.is = e.is.max(max_rel(&g, &fd));
        }
    }
    e
}

/// Parameter gradient of `sum(cr * R) + sum(cl * L)` for a narrow f64
/// network on a 16x16 input, probing a few weights and one bias per layer.
pub fn network_gradients(act: OutputActivation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ArchSpec {
        base_channels: 2,
        output_activation: act,
    };
    let mut params: ModelParams<f64> = network::init_params(&spec, &mut rng).unwrap();
    for l in &mut params.layers {
        l.bias.mapv_inplace(|_| rng.random_range(-0.05..0.05));
    }
    let v = random_plane(16, 16, &mut rng);
    let cr = random_plane(16, 16, &mut rng).map(|x| x - 0.5);
    let cl = random_plane(16, 16, &mut rng).map(|x| x - 0.5);
    let dot = |a: &Plane, b: &Plane| -> f64 { a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum() };
    let objective = |p: &ModelParams<f64>| {
        let out = network::forward(p, &v).unwrap();
        dot(&out.reflectance, &cr) + dot(&out.inverse_illumination, &cl)
    };
    let (_, tape) = network::forward_with_tape(&params, &v).unwrap();
    let mut grads = params.zero_grads();
    network::backward(&params, tape, &cr, &cl, &mut grads).unwrap();

    // Larger steps keep roundoff below the truncation error for the small
    // gradients of deep layers.
    let h = 1e-4;
    let mut worst = 0.0f64;
    for li in 0..params.layers.len() {
        let cols = params.layers[li].weight.ncols();
        let n = params.layers[li].weight.len();
        for _ in 0..6 {
            let k = rng.random_range(0..n);
            let (o, i) = (k / cols, k % cols);
            let orig = params.layers[li].weight[[o, i]];
            params.layers[li].weight[[o, i]] = orig + h;
            let plus = objective(&params);
            params.layers[li].weight[[o, i]] = orig - h;
            let minus = objective(&params);
            params.layers[li].weight[[o, i]] = orig;
            worst = worst.max(rel_err(grads.layers[li].weight[[o, i]], (plus - minus) / (2.0 * h)));
        }
        let b = rng.random_range(0..params.layers[li].bias.len());
        let orig = params.layers[li].bias[b];
        params.layers[li].bias[b] = orig + h;
        let plus = objective(&params);
        params.layers[li].bias[b] = orig - h;
        let minus = objective(&params);
        params.layers[li].bias[b] = orig;
        worst = worst.max(rel_err(grads.layers[li].bias[b], (plus - minus) / (2.0 * h)));
    }
    worst
}
