use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use umaea_numcore::Tensor;

/// Glorot-uniform weights for a `fan_in × fan_out` map.
pub(crate) fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    uniform(rows, cols, (6.0 / (rows + cols) as f64).sqrt(), rng)
}

pub(crate) fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

pub(crate) fn normal<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}
