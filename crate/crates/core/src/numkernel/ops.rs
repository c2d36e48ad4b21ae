use rand::Rng;

use super::tape::log_softmax;
use crate::error::{Error, Result};

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(log_softmax(logits)?.into_iter().map(f64::exp).collect())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
}

pub fn apply_dropout<R: Rng + ?Sized>(
    v: &[f64],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(v.to_vec());
    }
    let mask = dropout_mask(v.len(), rate, rng)?;
    Ok(v.iter().zip(mask).map(|(x, m)| x * m).collect())
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(softmax(&[f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(softmax(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = vec![1.0, -2.0, 3.0];
        assert_eq!(apply_dropout(&v, 0.0, true, &mut rng).unwrap(), v);
        assert_eq!(apply_dropout(&v, 0.9, false, &mut rng).unwrap(), v);
        assert!(matches!(apply_dropout(&v, 1.0, true, &mut rng), Err(Error::Config(_))));
        assert!(matches!(apply_dropout(&v, -0.1, false, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_keep_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v = vec![1.0; 100_000];
        let out = apply_dropout(&v, 0.2, true, &mut rng).unwrap();
        let kept = out.iter().filter(|&&x| x != 0.0).count() as f64 / 1e5;
        assert!((kept - 0.8).abs() <= 0.01, "keep fraction {kept}");
        assert!(out.iter().all(|&x| x == 0.0 || (x - 1.25).abs() < 1e-12));
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
