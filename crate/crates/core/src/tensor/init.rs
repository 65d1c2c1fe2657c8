use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Weight matrix of shape `[fan_out, fan_in]` with entries drawn i.i.d. from
/// `U(-b, b)`, `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "xavier init needs positive fans, got fan_in={fan_in} fan_out={fan_out}"
        )));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_init(&[fan_out, fan_in], bound, rng)
}

/// Entries i.i.d. `U(-bound, bound)`, rounded to `f32`.
pub fn uniform_init<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Result<Tensor> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::InvalidArgument(format!("uniform bound must be positive, got {bound}")));
    }
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..=bound) as f32 as f64)
        .map(|v| v.clamp(-bound, bound))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_three_by_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = xavier_uniform_init(3, 3, &mut rng).unwrap();
        assert_eq!(w.shape(), &[3, 3]);
        assert!(w.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn distribution_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = xavier_uniform_init(100, 200, &mut rng).unwrap();
        let b = 0.02f64.sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= b));
        let n = w.numel() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        // std of the sample mean of U(-b, b) is b / sqrt(3 n)
        let sigma = b / (3.0 * n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - b * b / 3.0).abs() < 0.05 * b * b / 3.0);
        // the bound is actually approached
        let max = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.99 * b);
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = xavier_uniform_init(5, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = xavier_uniform_init(5, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_fan_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(xavier_uniform_init(0, 3, &mut rng).is_err());
        assert!(xavier_uniform_init(3, 0, &mut rng).is_err());
    }
}
