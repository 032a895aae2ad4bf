//! Sequential uniform sampling (Vitter's method D with method A for the
//! tail) and weighted sampling by exponential keys.

use rand::Rng;

use crate::error::{Error, Result};

/// Method D switches to method A once `n > N / ALPHA_INV`.
const ALPHA_INV: usize = 13;

/// Uniform in (0, 1], safe to take the log of.
fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Draws `k` distinct indices from `0..n` in one forward pass. Every
/// `k`-subset is equally likely; the result is ascending.
pub fn algorithm_d<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {k} of {n} without replacement"
        )));
    }
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return Ok(out);
    }
    if k == n {
        out.extend(0..n);
        return Ok(out);
    }
    method_d(k, n, rng, &mut out);
    debug_assert_eq!(out.len(), k);
    Ok(out)
}

fn method_d<R: Rng + ?Sized>(k: usize, total: usize, rng: &mut R, out: &mut Vec<usize>) {
    let mut n = k;
    let mut big_n = total;
    let mut current = 0usize;

    let mut nreal = n as f64;
    let mut ninv = 1.0 / nreal;
    let mut big_nreal = big_n as f64;
    let mut vprime = (unit_open(rng).ln() * ninv).exp();
    let mut qu1 = big_n + 1 - n;
    let mut qu1real = qu1 as f64;
    let mut threshold = ALPHA_INV * n;

    while n > 1 && threshold < big_n {
        let nmin1inv = 1.0 / (nreal - 1.0);
        let s;
        loop {
            let (x, cand) = loop {
                let x = big_nreal * (1.0 - vprime);
                let cand = x as usize;
                if cand < qu1 {
                    break (x, cand);
                }
                vprime = (unit_open(rng).ln() * ninv).exp();
            };
            let u = unit_open(rng);
            let neg_s = -(cand as f64);
            let y1 = ((u * big_nreal / qu1real).ln() * nmin1inv).exp();
            vprime = y1 * (1.0 - x / big_nreal) * (qu1real / (neg_s + qu1real));
            if vprime <= 1.0 {
                s = cand;
                break;
            }
            let mut y2 = 1.0;
            let mut top = big_nreal - 1.0;
            let (mut bottom, limit) = if n - 1 > cand {
                (big_nreal - nreal, big_n - cand)
            } else {
                (big_nreal - 1.0 + neg_s, qu1)
            };
            let mut t = big_n - 1;
            while t >= limit {
                y2 = y2 * top / bottom;
                top -= 1.0;
                bottom -= 1.0;
                t -= 1;
            }
            if big_nreal / (big_nreal - x) >= y1 * (y2.ln() * nmin1inv).exp() {
                vprime = (unit_open(rng).ln() * nmin1inv).exp();
                s = cand;
                break;
            }
            vprime = (unit_open(rng).ln() * ninv).exp();
        }

        current += s;
        out.push(current);
        current += 1;
        big_n -= s + 1;
        big_nreal = big_n as f64;
        n -= 1;
        nreal -= 1.0;
        ninv = nmin1inv;
        qu1 -= s;
        qu1real = qu1 as f64;
        threshold -= ALPHA_INV;
    }

    if n > 1 {
        method_a(n, big_n, current, rng, out);
    } else {
        let s = ((big_n as f64 * vprime) as usize).min(big_n - 1);
        out.push(current + s);
    }
}

fn method_a<R: Rng + ?Sized>(
    mut n: usize,
    total: usize,
    mut current: usize,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    let mut top = (total - n) as f64;
    let mut big_nreal = total as f64;
    while n >= 2 {
        let v: f64 = rng.gen();
        let mut s = 0usize;
        let mut quot = top / big_nreal;
        while quot > v {
            s += 1;
            top -= 1.0;
            big_nreal -= 1.0;
            quot = quot * top / big_nreal;
        }
        current += s;
        out.push(current);
        current += 1;
        big_nreal -= 1.0;
        n -= 1;
    }
    let remaining = big_nreal.round() as usize;
    let s = ((remaining as f64 * rng.gen::<f64>()) as usize).min(remaining - 1);
    out.push(current + s);
}

/// Exponential key of an item with weight `w`: `ln(u) / w`, the logarithm of
/// `u^(1/w)`. Ordering by key equals ordering by `u^(1/w)` and does not
/// underflow for small weights.
pub fn aes_key<R: Rng + ?Sized>(w: f64, rng: &mut R) -> f64 {
    unit_open(rng).ln() / w
}

/// Weighted sampling without replacement: returns the `k` indices with the
/// largest keys together with their keys, both ordered by index. Keys are the
/// log scores from [`aes_key`].
pub fn algorithm_a_es<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if k > weights.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {k} of {} without replacement",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "weights must be positive and finite, got {w}"
        )));
    }
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (aes_key(w, rng), i))
        .collect();
    if k < keyed.len() && k > 0 {
        keyed.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    }
    keyed.truncate(k);
    keyed.sort_unstable_by_key(|&(_, i)| i);
    Ok(keyed.into_iter().map(|(s, i)| (i, s)).unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
        let stat: f64 = observed
            .iter()
            .zip(expected)
            .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
            .sum();
        let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
        1.0 - dist.cdf(stat)
    }

    fn within_3_sigma(hits: u64, trials: u64, p: f64) -> bool {
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        (hits as f64 - mean).abs() <= 3.0 * sigma
    }

    #[test]
    fn edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(algorithm_d(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(algorithm_d(5, 0, &mut rng).unwrap().is_empty());
        assert!(algorithm_d(3, 4, &mut rng).is_err());
        assert_eq!(algorithm_d(1, 1, &mut rng).unwrap(), vec![0]);
    }

    #[test]
    fn output_is_sorted_distinct_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2usize, 7, 40, 100, 1000, 100_000] {
            for k in [1usize, 2, 3, n / 3, n - 1] {
                if k == 0 || k > n {
                    continue;
                }
                let s = algorithm_d(n, k, &mut rng).unwrap();
                assert_eq!(s.len(), k, "n={n} k={k}");
                assert!(s.windows(2).all(|w| w[0] < w[1]));
                assert!(*s.last().unwrap() < n);
            }
        }
    }

    fn pair_frequencies(n: usize, trials: u64, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; n * n];
        for _ in 0..trials {
            let s = algorithm_d(n, 2, &mut rng).unwrap();
            counts[s[0] * n + s[1]] += 1;
        }
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| counts[i * n + j])
            .collect()
    }

    #[test]
    fn six_choose_two_pairs_uniform() {
        let trials = 60_000;
        let freq = pair_frequencies(6, trials, 2);
        assert_eq!(freq.len(), 15);
        for &c in &freq {
            assert!(within_3_sigma(c, trials, 1.0 / 15.0), "{freq:?}");
        }
    }

    #[test]
    fn method_d_path_pairs_uniform() {
        // 60 > 13 * 2, so the first pick runs the method D rejection loop
        let freq = pair_frequencies(60, 200_000, 3);
        let e = 200_000.0 / freq.len() as f64;
        let p = chi_square_p(&freq, &vec![e; freq.len()]);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn method_d_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, k, trials) = (500usize, 7usize, 40_000u64);
        let mut counts = vec![0u64; n];
        for _ in 0..trials {
            for i in algorithm_d(n, k, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let e = trials as f64 * k as f64 / n as f64;
        let p = chi_square_p(&counts, &vec![e; n]);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn aes_all_when_k_is_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ix, keys) = algorithm_a_es(&[1.0, 2.0, 0.5], 3, &mut rng).unwrap();
        assert_eq!(ix, vec![0, 1, 2]);
        assert_eq!(keys.len(), 3);
        assert!(keys.iter().all(|k| *k <= 0.0));
    }

    #[test]
    fn aes_rejects_bad_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(algorithm_a_es(&[1.0, 0.0], 1, &mut rng).is_err());
        assert!(algorithm_a_es(&[1.0, -1.0], 1, &mut rng).is_err());
        assert!(algorithm_a_es(&[1.0], 2, &mut rng).is_err());
    }

    #[test]
    fn aes_first_inclusion_matches_weight_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000u64;
        let mut heavy = 0;
        for _ in 0..trials {
            let (ix, _) = algorithm_a_es(&[1.0, 3.0], 1, &mut rng).unwrap();
            heavy += (ix[0] == 1) as u64;
        }
        assert!(within_3_sigma(heavy, trials, 0.75), "{heavy}");
    }

    #[test]
    fn aes_equal_weights_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trials = 60_000u64;
        let mut counts = [0u64; 36];
        for _ in 0..trials {
            let (ix, _) = algorithm_a_es(&[2.0; 6], 2, &mut rng).unwrap();
            counts[ix[0] * 6 + ix[1]] += 1;
        }
        let pairs: Vec<u64> = (0..6)
            .flat_map(|i| (i + 1..6).map(move |j| (i, j)))
            .map(|(i, j)| counts[i * 6 + j])
            .collect();
        let p = chi_square_p(&pairs, &[trials as f64 / 15.0; 15]);
        assert!(p > 0.001, "p = {p}, {pairs:?}");
    }

}
