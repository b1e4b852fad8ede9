//! Independent reference computations shared by the statistical suites.
//! Nothing here calls the crate's own mass functions.

#![allow(dead_code)]

use std::collections::BTreeMap;

use statrs::function::gamma::ln_gamma;

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `∫ Poi(x | λ) Gamma(λ | shape, rate) dλ` by the trapezoid rule in
/// `u = ln λ`, where the integrand is smooth and decays doubly
/// exponentially to the right and exponentially to the left.
pub fn quad_poisson_gamma(x: u64, shape: f64, rate: f64) -> f64 {
    ln_quad_poisson_gamma(x, shape, rate).exp()
}

/// Logarithm of [`quad_poisson_gamma`], for tails that underflow.
pub fn ln_quad_poisson_gamma(x: u64, shape: f64, rate: f64) -> f64 {
    let xf = x as f64;
    let s = shape + xf;
    let peak = (s / (rate + 1.0)).ln();
    let lo = peak - 60.0 / s - 12.0 / s.sqrt();
    let hi = peak + (1.0 + 80.0 / s).ln() + 12.0 / s.sqrt();
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let norm = shape * rate.ln() - ln_gamma(shape) - ln_gamma(xf + 1.0);
    let terms: Vec<f64> = (0..=n)
        .map(|i| {
            let u = lo + i as f64 * h;
            let lam = u.exp();
            let w = if i == 0 || i == n { 0.5f64.ln() } else { 0.0 };
            w + norm + s * u - (rate + 1.0) * lam
        })
        .collect();
    log_sum_exp(&terms) + h.ln()
}

/// `E[Poi(x | λ)²]` under `λ ~ Gamma(shape, rate)`, closed form.
pub fn poisson_gamma_second_moment(x: u64, shape: f64, rate: f64) -> f64 {
    ln_poisson_gamma_second_moment(x, shape, rate).exp()
}

pub fn ln_poisson_gamma_second_moment(x: u64, shape: f64, rate: f64) -> f64 {
    let xf = x as f64;
    ln_gamma(2.0 * xf + shape) - 2.0 * ln_gamma(xf + 1.0) - ln_gamma(shape) + shape * rate.ln()
        - (2.0 * xf + shape) * (rate + 2.0).ln()
}

/// Every set partition of `0..n` as a restricted-growth label vector.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().copied().max().map_or(0, |m| m + 1);
        for label in 0..=next {
            prefix.push(label);
            rec(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), n, &mut out);
    out
}

/// Relabels by first appearance so equal partitions compare equal.
pub fn canonical<T: Ord + Copy>(labels: &[T]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Exact DP-mixture posterior over set partitions: Ewens prior times the
/// closed-form Poisson-Gamma marginal of each block.
pub fn partition_posterior(
    data: &[u64],
    alpha: f64,
    shape: f64,
    rate: f64,
) -> BTreeMap<Vec<usize>, f64> {
    let parts = set_partitions(data.len());
    let ln_w: Vec<f64> = parts
        .iter()
        .map(|labels| {
            let k = labels.iter().max().unwrap() + 1;
            (0..k)
                .map(|b| {
                    let members: Vec<u64> = labels
                        .iter()
                        .zip(data)
                        .filter(|(l, _)| **l == b)
                        .map(|(_, x)| *x)
                        .collect();
                    let m = members.len() as f64;
                    let sum = members.iter().sum::<u64>() as f64;
                    alpha.ln() + ln_gamma(m) + shape * rate.ln() - ln_gamma(shape)
                        + ln_gamma(shape + sum)
                        - (shape + sum) * (rate + m).ln()
                        - members
                            .iter()
                            .map(|&x| ln_gamma(x as f64 + 1.0))
                            .sum::<f64>()
                })
                .sum()
        })
        .collect();
    let z = log_sum_exp(&ln_w);
    parts
        .into_iter()
        .zip(ln_w)
        .map(|(p, w)| (p, (w - z).exp()))
        .collect()
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index<A: Ord + Copy, B: Ord + Copy>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(A, B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<B, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sr: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sc: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = sr * sc / total;
    let max = 0.5 * (sr + sc);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Two-sided permutation test on the difference of means. Uses a fixed
/// xorshift stream so results are reproducible without extra crates.
pub fn permutation_p_value(a: &[f64], b: &[f64], permutations: usize) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut extreme = 0;
    for _ in 0..permutations {
        for i in (1..pool.len()).rev() {
            let j = (next() % (i as u64 + 1)) as usize;
            pool.swap(i, j);
        }
        let d = (mean(&pool[..a.len()]) - mean(&pool[a.len()..])).abs();
        if d >= observed - 1e-12 {
            extreme += 1;
        }
    }
    (1 + extreme) as f64 / (1 + permutations) as f64
}

/// Total-variation distance between two distributions on the same keys.
pub fn total_variation<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let keys: std::collections::BTreeSet<K> = p.keys().chain(q.keys()).cloned().collect();
    0.5 * keys
        .iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
