use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::standard_normal;
use crate::scalar::Scalar;

/// Posterior parameters together with the latent drawn from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub z: Vec<T>,
    /// Noise used for `z`.
    pub eps: Vec<T>,
}

/// `z = mu + exp(0.5·logvar) ⊙ eps` for an explicit `eps`.
pub fn reparameterize_with<T: Scalar>(mu: &[T], logvar: &[T], eps: &[T]) -> LatentSample<T> {
    assert_eq!(mu.len(), logvar.len(), "mu/logvar dimension");
    assert_eq!(mu.len(), eps.len(), "mu/eps dimension");
    let half = T::of(0.5);
    let z = mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    LatentSample {
        mu: mu.to_vec(),
        logvar: logvar.to_vec(),
        z,
        eps: eps.to_vec(),
    }
}

/// Draws `eps ~ N(0, I)` from `rng` and reparameterizes.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(mu: &[T], logvar: &[T], rng: &mut R) -> LatentSample<T> {
    let eps = standard_normal(mu.len(), rng);
    reparameterize_with(mu, logvar, &eps)
}

/// Closed-form `KL(N(mu, diag(exp(logvar))) ‖ N(0, I))`.
pub fn kl_divergence<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    assert_eq!(mu.len(), logvar.len(), "mu/logvar dimension");
    let half = T::of(0.5);
    let sum: T = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| lv.exp() + m * m - T::one() - lv)
        .sum();
    half * sum
}

/// Jaccard overlap of the two lines' word sets; two empty lines overlap fully.
pub fn token_overlap(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<_> = a.iter().collect();
    let sb: BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Token-level Levenshtein distance.
pub fn edit_distance<E: PartialEq>(a: &[E], b: &[E]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_returns_mean() {
        let s = reparameterize_with(&[0.3, -1.0], &[0.7, 2.0], &[0.0, 0.0]);
        assert_eq!(s.z, vec![0.3, -1.0]);
    }

    #[test]
    fn vanishing_variance_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = reparameterize::<f64, _>(&[1.5, -2.0, 0.0], &[-50.0; 3], &mut rng);
        for (z, m) in s.z.iter().zip(&s.mu) {
            assert!((z - m).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_known_values() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_divergence::<f64>(&[1.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overlap_and_edit_distance() {
        assert_eq!(token_overlap(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(token_overlap(&[1, 2], &[3, 4]), 0.0);
        assert!((token_overlap(&[1, 2, 3], &[2, 3, 4]) - 0.5).abs() < 1e-15);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance::<u8>(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&["a", "b"], &["b", "a"]), 2);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(
            pairs in proptest::collection::vec((-5.0f64..5.0, -8.0f64..4.0), 1..16)
        ) {
            let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let kl = kl_divergence(&mu, &lv);
            prop_assert!(kl >= -1e-12);
            let away_from_prior = mu.iter().chain(&lv).any(|&v| v.abs() > 1e-3);
            if away_from_prior {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
