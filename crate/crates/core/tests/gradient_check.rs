//! Analytic backprop against central finite differences on a 6³ net.

use lrcp_core::autoencoder::loss::LossKind;
use lrcp_core::autoencoder::net::{backward, forward_batch, AEParams, Mode};
use lrcp_core::autoencoder::train::batch_loss_and_grad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: [usize; 3] = [6, 6, 6];

fn inputs(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..216).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

fn loss_at(params: &AEParams, data: &[Vec<f64>], kind: LossKind) -> f64 {
    let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    batch_loss_and_grad(params, &refs, kind, 0.5).unwrap().0
}

fn check(kind: LossKind, seed: u64) -> (usize, f64) {
    let params = AEParams::init(DIMS, seed).unwrap();
    let data = inputs(seed + 100, 2);
    let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let (_, grads, _) = batch_loss_and_grad(&params, &refs, kind, 0.5).unwrap();
    let flat = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..40 {
        let i = rng.random_range(0..flat.len());
        let mut plus = params.clone();
        let mut f = flat.clone();
        f[i] += h;
        plus.set_flat(&f);
        let mut minus = params.clone();
        f[i] -= 2.0 * h;
        minus.set_flat(&f);
        let fd = (loss_at(&plus, &data, kind) - loss_at(&minus, &data, kind)) / (2.0 * h);
        let rel = (grads[i] - fd).abs() / fd.abs().max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    (checked, worst)
}

#[test]
fn mse_gradients_match_finite_differences() {
    let (n, worst) = check(LossKind::Mse, 1);
    assert!(n >= 20);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn combined_gradients_match_finite_differences() {
    let (_, worst) = check(LossKind::Combined, 2);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn zero_loss_gives_zero_gradients() {
    // target equal to the reconstruction itself
    let params = AEParams::init(DIMS, 3).unwrap();
    let data = inputs(4, 2);
    let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let pass = forward_batch(&params, &refs, Mode::Train).unwrap();
    let grad_out = vec![0.0; pass.reconstruction.len()];
    let g = backward(&params, &pass, &grad_out);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn doubling_loss_doubles_gradients() {
    let params = AEParams::init(DIMS, 5).unwrap();
    let data = inputs(6, 2);
    let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let pass = forward_batch(&params, &refs, Mode::Train).unwrap();
    let n = pass.reconstruction.len() as f64;
    let target: Vec<f64> = data.concat();
    let g1: Vec<f64> = pass.reconstruction.iter().zip(&target).map(|(r, t)| 2.0 * (r - t) / n).collect();
    let g2: Vec<f64> = g1.iter().map(|v| 2.0 * v).collect();
    let a = backward(&params, &pass, &g1);
    let b = backward(&params, &pass, &g2);
    for (x, y) in a.iter().zip(&b) {
        assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
    }
}
