//! Empirical distributions and the distances used by the convergence
//! studies: total variation on finite supports, Kolmogorov-Smirnov on
//! continuous samples.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Counted outcomes over an ordered label type.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution<L: Ord> {
    counts: BTreeMap<L, u64>,
    total: u64,
}

impl<L: Ord> Default for EmpiricalDistribution<L> {
    fn default() -> Self {
        Self {
            counts: BTreeMap::new(),
            total: 0,
        }
    }
}

impl<L: Ord> EmpiricalDistribution<L> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, outcome: L) {
        *self.counts.entry(outcome).or_insert(0) += 1;
        self.total += 1;
    }

    /// Merge counts from another distribution; commutative, so replicate
    /// workers can be folded in any order.
    pub fn merge(&mut self, other: EmpiricalDistribution<L>) {
        for (l, c) in other.counts {
            *self.counts.entry(l).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<L, u64> {
        &self.counts
    }

    /// Normalized probabilities.
    pub fn probs(&self) -> Result<BTreeMap<L, f64>>
    where
        L: Clone,
    {
        if self.total == 0 {
            return Err(Error::EmptyDistribution);
        }
        Ok(self
            .counts
            .iter()
            .map(|(l, &c)| (l.clone(), c as f64 / self.total as f64))
            .collect())
    }
}

/// Total variation distance `(1/2) sum |p - q|` between two probability
/// tables; labels missing on one side carry probability zero there.
pub fn tv_distance<L: Ord>(a: &BTreeMap<L, f64>, b: &BTreeMap<L, f64>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut sum = 0.0;
    it_union(a, b, |pa, pb| sum += (pa - pb).abs());
    Ok(0.5 * sum)
}

/// Delta-method standard error of an empirical-vs-exact TV estimate from
/// `n` samples: with sign vector `s` fixed at the observed signs,
/// `TV ~ (1/2) sum_s s (p_hat - q)` and
/// `Var = (1 - (sum_s s p)^2) / (4 n)`.
pub fn tv_standard_error<L: Ord>(
    empirical: &BTreeMap<L, f64>,
    exact: &BTreeMap<L, f64>,
    n: u64,
) -> f64 {
    let mut signed_mass = 0.0;
    it_union(empirical, exact, |pe, pq| {
        signed_mass += if pe >= pq { pe } else { -pe };
    });
    (((1.0 - signed_mass * signed_mass) / n as f64).max(0.0)).sqrt() * 0.5
}

fn it_union<L: Ord>(a: &BTreeMap<L, f64>, b: &BTreeMap<L, f64>, mut f: impl FnMut(f64, f64)) {
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((ka, &va)), Some((kb, &vb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    f(va, 0.0);
                    ia.next();
                }
                std::cmp::Ordering::Greater => {
                    f(0.0, vb);
                    ib.next();
                }
                std::cmp::Ordering::Equal => {
                    f(va, vb);
                    ia.next();
                    ib.next();
                }
            },
            (Some((_, &va)), None) => {
                f(va, 0.0);
                ia.next();
            }
            (None, Some((_, &vb))) => {
                f(0.0, vb);
                ib.next();
            }
            (None, None) => break,
        }
    }
}

/// Kolmogorov-Smirnov statistic: sup-norm distance between the empirical
/// CDF of `samples` and the reference `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((i as f64 / n - f).abs());
        sup = sup.max(((i as f64 + 1.0) / n - f).abs());
    }
    Ok(sup)
}

/// Empirical `q`-quantile (0 < q <= 1) by the ceil-rank convention.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples must not contain NaN"));
    let rank = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn tv_identical_is_zero() {
        let a: BTreeMap<u32, f64> = [(0, 0.5), (1, 0.5)].into();
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn tv_disjoint_is_one() {
        let a: BTreeMap<u32, f64> = [(0, 0.4), (1, 0.6)].into();
        let b: BTreeMap<u32, f64> = [(2, 1.0)].into();
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tv_three_point_example() {
        let a: BTreeMap<u32, f64> = [(0, 0.5), (1, 0.3), (2, 0.2)].into();
        let b: BTreeMap<u32, f64> = [(0, 0.2), (1, 0.3), (2, 0.5)].into();
        assert!((tv_distance(&a, &b).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tv_empty_rejected() {
        let a: BTreeMap<u32, f64> = BTreeMap::new();
        let b: BTreeMap<u32, f64> = [(0, 1.0)].into();
        assert!(tv_distance(&a, &b).is_err());
    }

    #[test]
    fn empirical_counts_and_merge() {
        let mut a = EmpiricalDistribution::new();
        a.add(1u32);
        a.add(1);
        a.add(2);
        let mut b = EmpiricalDistribution::new();
        b.add(2u32);
        a.merge(b);
        assert_eq!(a.total(), 4);
        let p = a.probs().unwrap();
        assert_eq!(p[&1], 0.5);
        assert_eq!(p[&2], 0.5);
    }

    #[test]
    fn ks_single_sample_at_median() {
        let stat = ks_statistic(&[0.0], |x| if x < 0.0 { 0.25 } else { 0.5 }).unwrap();
        assert!((stat - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_exponential_self_test() {
        let mut rng = Rng::new(2718);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.exponential(2.0)).collect();
        let stat = ks_statistic(&samples, |x| 1.0 - (-2.0 * x).exp()).unwrap();
        assert!(stat < 0.01, "ks = {stat}");
    }

    #[test]
    fn ks_detects_wrong_rate() {
        let mut rng = Rng::new(2718);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.exponential(2.0)).collect();
        let stat = ks_statistic(&samples, |x| 1.0 - (-1.0 * x).exp()).unwrap();
        assert!(stat > 0.1, "ks should reject a halved rate, got {stat}");
    }

    #[test]
    fn percentile_ranks() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.95).unwrap(), 95.0);
        assert_eq!(percentile(&xs, 1.0).unwrap(), 100.0);
        assert_eq!(percentile(&xs, 0.001).unwrap(), 1.0);
    }

    #[test]
    fn tv_standard_error_scale() {
        let exact: BTreeMap<u32, f64> = [(0, 0.5), (1, 0.5)].into();
        let emp: BTreeMap<u32, f64> = [(0, 0.52), (1, 0.48)].into();
        let se = tv_standard_error(&emp, &exact, 10_000);
        assert!(se > 0.0 && se < 0.01, "se = {se}");
    }
}
