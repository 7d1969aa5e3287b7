use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use umaea_numcore::Tensor;

use crate::error::{Error, Result};

/// Fills rows without an image with draws from a per-dimension normal fitted
/// (mean, population std) to the rows that have one. Available rows are
/// copied through untouched.
pub fn impute_missing_visual(x_v: &Tensor, image_mask: &[bool], seed: u64) -> Result<Tensor> {
    if image_mask.len() != x_v.rows() {
        return Err(Error::Invalid(format!(
            "image mask has {} entries for {} feature rows",
            image_mask.len(),
            x_v.rows()
        )));
    }
    let available: Vec<usize> = (0..x_v.rows()).filter(|&r| image_mask[r]).collect();
    if available.is_empty() {
        return Err(Error::NoAvailableImages);
    }
    let mut out = x_v.clone();
    if available.len() == x_v.rows() {
        return Ok(out);
    }
    let d = x_v.cols();
    let n = available.len() as f64;
    let mut mean = vec![0.0; d];
    for &r in &available {
        for (m, v) in mean.iter_mut().zip(x_v.row_slice(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &r in &available {
        for ((s, v), m) in var.iter_mut().zip(x_v.row_slice(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let dists: Vec<Normal<f64>> = mean
        .iter()
        .zip(&var)
        .map(|(&m, &s)| Normal::new(m, (s / n).sqrt()).expect("finite std"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in (0..x_v.rows()).filter(|&r| !image_mask[r]) {
        for (v, dist) in out.row_slice_mut(r).iter_mut().zip(&dists) {
            *v = dist.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mask_is_identity() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(impute_missing_visual(&x, &[true, true], 1).unwrap(), x);
    }

    #[test]
    fn single_row_copies_exactly() {
        let x = Tensor::from_rows(&[vec![0.25, -1.5, 7.0], vec![0.0; 3], vec![0.0; 3]]).unwrap();
        let y = impute_missing_visual(&x, &[true, false, false], 3).unwrap();
        for r in 0..3 {
            assert_eq!(y.row_slice(r), x.row_slice(0));
        }
    }

    #[test]
    fn no_images_is_an_error() {
        let x = Tensor::zeros(2, 2);
        assert!(matches!(
            impute_missing_visual(&x, &[false, false], 1),
            Err(Error::NoAvailableImages)
        ));
    }

    #[test]
    fn deterministic_and_preserves_available_rows() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![0.0, 0.0], vec![3.0, -1.0]]).unwrap();
        let mask = [true, false, true];
        let a = impute_missing_visual(&x, &mask, 9).unwrap();
        assert_eq!(a, impute_missing_visual(&x, &mask, 9).unwrap());
        assert_eq!(a.row_slice(0), x.row_slice(0));
        assert_eq!(a.row_slice(2), x.row_slice(2));
        assert!(a.row_slice(1).iter().any(|&v| v != 0.0));
    }
}
