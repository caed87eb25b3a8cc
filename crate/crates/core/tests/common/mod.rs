#![allow(dead_code)]

use mdtree_core::linalg::{psd_factor, Mat};
use mdtree_core::{NodeMap, ProblemInstance, SymMatrix, Tolerance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `Σ_X = A A^T + 0.5 I`, `D = Σ^{1/2} U diag(u) U^T Σ^{1/2}` with
/// `u ~ U(0.05, 0.95)` and `U` Haar-like orthogonal.
pub fn random_instance(m: usize, levels: usize, seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng, r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = gauss(&mut rng, m, m);
    let sigma = SymMatrix::from_mat(&a * a.transpose() + Mat::identity(m, m) * 0.5);
    let half = psd_factor(&sigma, &Tolerance::default()).unwrap();
    let ds = NodeMap::from_fn(levels, |_| {
        let q = gauss(&mut rng, m, m).qr().q();
        let u = Mat::from_fn(m, m, |i, j| if i == j { rng.random_range(0.05..0.95) } else { 0.0 });
        SymMatrix::from_mat(&half * &q * u * q.transpose() * half.transpose())
    });
    ProblemInstance::new(sigma, levels, ds).unwrap()
}

pub fn scalar_instance(sigma: f64, d: &[f64]) -> ProblemInstance {
    let levels = (d.len() + 1).trailing_zeros() as usize;
    let map = NodeMap::from_vec(levels, d.iter().map(|&x| SymMatrix::scalar(x)).collect()).unwrap();
    ProblemInstance::new(SymMatrix::scalar(sigma), levels, map).unwrap()
}
