//! Seed plumbing. Every random draw in a run comes from a ChaCha stream keyed
//! by `(run seed, role)` and, for per-step draws, a stream index.

use alloc::vec::Vec;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable sub-seed for a named role (FNV-1a over the role, mixed with the seed).
pub fn derive_seed(seed: u64, role: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in role.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn rng_for(seed: u64, role: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, role))
}

/// Stream `index` of the role's generator; streams never overlap.
pub fn stream(seed: u64, role: &str, index: u64) -> Rng {
    let mut rng = rng_for(seed, role);
    rng.set_stream(index);
    rng
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// Low-discrepancy times in [0, 1): `frac(u + i / n)` for one uniform `u`.
pub fn stratified_times(rng: &mut Rng, n: usize) -> Vec<f64> {
    let u = uniform(rng);
    (0..n)
        .map(|i| {
            let t = u + i as f64 / n as f64;
            if t >= 1.0 {
                t - 1.0
            } else {
                t
            }
        })
        .collect()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}
