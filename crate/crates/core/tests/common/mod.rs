#![allow(dead_code)]

use groupnewton::problems::{
    make_mlp, synth_dataset, Activation, LossKind, MlpSpec, QuadraticProblem, QuadraticSpec,
    SynthKind,
};
use groupnewton::{Expr, ParamVector, Partition, PartitionKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// PD quadratic with `P` in `2..=8`, eigenvalues in `[0.1, 10]`, and a
/// start point whose gradient has no zero entry.
pub fn pd_quadratic(seed: u64) -> (QuadraticProblem<f64>, ParamVector<f64>) {
    let mut r = rng(seed ^ 0x9e37);
    let dim = r.random_range(2..=8);
    let q = QuadraticProblem::generate(&QuadraticSpec {
        dim,
        eig_min: 0.1,
        eig_max: 10.0,
        seed,
    })
    .unwrap();
    loop {
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
        if q.gradient_at(&x).iter().all(|g| g.abs() > 1e-3) {
            return (q.clone(), q.point(x).unwrap());
        }
    }
}

/// Random grouping of `0..p` into `s` non-empty groups.
pub fn random_partition(p: usize, s: usize, seed: u64) -> Partition {
    let mut r = rng(seed);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(&mut r);
    let mut groups: Vec<Vec<usize>> = idx[..s].iter().map(|&i| vec![i]).collect();
    for &i in &idx[s..] {
        groups[r.random_range(0..s)].push(i);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Partition::from_groups(p, groups, vec![], PartitionKind::Custom).unwrap()
}

/// Width-`widths` tanh network on a small seeded moons set.
pub fn small_mlp(widths: &[usize], loss: LossKind, seed: u64) -> (Expr<f64>, ParamVector<f64>) {
    let data = synth_dataset(SynthKind::Moons, 16, seed).unwrap();
    let spec = MlpSpec {
        widths: widths.to_vec(),
        activation: Activation::Tanh,
        loss,
        seed,
        init_scale: 1.0,
    };
    make_mlp(&spec, &data).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
