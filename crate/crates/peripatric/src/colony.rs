//! The colony-count process: a pure death density-dependent chain with
//! immigration, its stationary law, and its deterministic fluid limit.
//!
//! The count `k` jumps `k -> k+1` at rate `N * theta_N` and `k -> k-1` at
//! rate `gamma_N * k^alpha`. Its stationary distribution has weights
//! `lambda^k / (k!)^alpha` with `lambda = N * theta_N / gamma_N`; weights
//! are evaluated in log space because `lambda` grows like `eps^-alpha`
//! under the scaling regime and direct powers overflow.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{pow_real, ModelParams};
use crate::rng::Rng;

/// Default per-path event budget; hitting it signals runaway rates.
pub const DEFAULT_COLONY_EVENT_CAP: u64 = 200_000_000;

const MAX_SUPPORT: usize = 20_000_000;

/// Jump rates of the colony-count chain at count `k`.
///
/// Returns `(up, down)`: `up = N * theta_N` (constant in `k`) and
/// `down = gamma_N * k^alpha` (zero exactly at `k = 0`).
pub fn colony_rates(params: &ModelParams, k: u64) -> (f64, f64) {
    let up = params.n_big as f64 * params.theta_n;
    let down = if k == 0 {
        0.0
    } else {
        params.gamma_n * params.pow_alpha(k as f64)
    };
    (up, down)
}

/// Stationary colony-count distribution truncated to a finite support.
#[derive(Debug, Clone)]
pub struct TruncatedPmf {
    /// Largest count carried by the table.
    pub support_max: usize,
    /// Normalized probabilities for counts `0..=support_max`.
    pub probs: Vec<f64>,
    /// Geometric estimate of the truncated tail mass.
    pub tail_bound: f64,
    cdf: Vec<f64>,
}

impl TruncatedPmf {
    /// Mean of the table.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Probabilities as a map, for distance computations.
    pub fn prob_map(&self) -> BTreeMap<u64, f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, &p)| (k as u64, p))
            .collect()
    }

    /// Draw a count by inverse transform over the truncated table.
    pub fn sample(&self, rng: &mut Rng) -> u64 {
        let u = rng.uniform();
        match self.cdf.iter().position(|&c| u < c) {
            Some(k) => k as u64,
            None => self.support_max as u64,
        }
    }
}

/// Stationary law for the given parameter set (`lambda = N*theta_N/gamma_N`).
pub fn stationary_pmf(params: &ModelParams, tail_tol: f64) -> Result<TruncatedPmf> {
    stationary_pmf_from(params.lambda(), params.alpha, tail_tol)
}

/// Stationary law with weights `lambda^k / (k!)^alpha`, truncated at the
/// smallest `K >= 4 * ceil(lambda^(1/alpha))` whose successive-term ratio
/// has dropped below 1/2 and whose geometric tail estimate is below
/// `tail_tol`.
pub fn stationary_pmf_from(lambda: f64, alpha: f64, tail_tol: f64) -> Result<TruncatedPmf> {
    if !(tail_tol > 0.0 && tail_tol <= 1e-3) {
        return Err(Error::InvalidParams(format!(
            "tail_tol must lie in (0, 1e-3], got {tail_tol}"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Numerical(format!(
            "stationary weights need a finite positive lambda, got {lambda}"
        )));
    }
    if alpha < 1.0 {
        return Err(Error::InvalidParams(format!("alpha must be >= 1, got {alpha}")));
    }
    let log_lambda = lambda.ln();
    let k_floor = 4.0 * pow_real(lambda, 1.0 / alpha).ceil();
    if k_floor as usize >= MAX_SUPPORT {
        return Err(Error::Numerical(format!(
            "stationary support would exceed {MAX_SUPPORT} states (lambda = {lambda})"
        )));
    }

    // Streaming log-sum-exp over log-weights lw[k] = k ln(lambda) - alpha ln(k!).
    let mut log_w = vec![0.0f64];
    let mut running_max = 0.0f64;
    let mut running_sum = 1.0f64; // sum of exp(lw - running_max)
    let mut lw = 0.0f64;
    let mut k = 0usize;
    let (support_max, log_tail) = loop {
        // Ratio of the next weight to the current one.
        let ratio_next = lambda / pow_real((k + 1) as f64, alpha);
        if k as f64 >= k_floor && ratio_next < 0.5 {
            // Geometric tail: sum_{j > K} w_j <= w_{K+1} / (1 - r) with
            // r the (decreasing) ratio at K+1 -> K+2.
            let lw_next = lw + log_lambda - alpha * ((k + 1) as f64).ln();
            let r = lambda / pow_real((k + 2) as f64, alpha);
            let log_tail = lw_next - (1.0 - r).ln();
            let log_norm = running_max + running_sum.ln();
            if (log_tail - log_norm).exp() < tail_tol {
                break (k, log_tail - log_norm);
            }
        }
        k += 1;
        if k >= MAX_SUPPORT {
            return Err(Error::Numerical(format!(
                "stationary support did not truncate below {MAX_SUPPORT} states"
            )));
        }
        lw += log_lambda - alpha * (k as f64).ln();
        log_w.push(lw);
        if lw > running_max {
            running_sum = running_sum * (running_max - lw).exp() + 1.0;
            running_max = lw;
        } else {
            running_sum += (lw - running_max).exp();
        }
    };

    let log_norm = running_max + running_sum.ln();
    let mut probs: Vec<f64> = log_w.iter().map(|&l| (l - log_norm).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cdf.push(acc);
    }
    Ok(TruncatedPmf {
        support_max,
        probs,
        tail_bound: log_tail.exp(),
        cdf,
    })
}

/// Draw a stationary colony count.
pub fn sample_stationary(pmf: &TruncatedPmf, rng: &mut Rng) -> u64 {
    pmf.sample(rng)
}

/// A realized colony-count path; counts change by exactly one per event.
#[derive(Debug, Clone)]
pub struct ColonyTrajectory {
    /// Event times, starting at 0.
    pub times: Vec<f64>,
    /// Counts after each event; `counts[0]` is the initial count.
    pub counts: Vec<u64>,
    /// End of the simulated window.
    pub horizon: f64,
}

impl ColonyTrajectory {
    pub fn n_events(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    /// Fraction of `[0, horizon]` spent in each count.
    pub fn occupation_distribution(&self) -> BTreeMap<u64, f64> {
        let mut occ = BTreeMap::new();
        for i in 0..self.times.len() {
            let end = if i + 1 < self.times.len() {
                self.times[i + 1]
            } else {
                self.horizon
            };
            *occ.entry(self.counts[i]).or_insert(0.0) += end - self.times[i];
        }
        for w in occ.values_mut() {
            *w /= self.horizon;
        }
        occ
    }

    /// Largest deviation of `eps * k` from `target` over the whole window.
    pub fn sup_scaled_deviation(&self, eps: f64, target: f64) -> f64 {
        self.counts
            .iter()
            .map(|&k| (eps * k as f64 - target).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact event-driven simulation of the colony-count chain from `k0` up to
/// `horizon`; the first event drawn beyond the horizon is discarded.
pub fn simulate_colony_path(
    params: &ModelParams,
    k0: u64,
    horizon: f64,
    rng: &mut Rng,
) -> Result<ColonyTrajectory> {
    simulate_colony_path_capped(params, k0, horizon, rng, DEFAULT_COLONY_EVENT_CAP)
}

/// As [`simulate_colony_path`] with an explicit event budget.
pub fn simulate_colony_path_capped(
    params: &ModelParams,
    k0: u64,
    horizon: f64,
    rng: &mut Rng,
    event_cap: u64,
) -> Result<ColonyTrajectory> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut times = vec![0.0];
    let mut counts = vec![k0];
    let mut t = 0.0;
    let mut k = k0;
    let mut events = 0u64;
    loop {
        let (up, down) = colony_rates(params, k);
        let total = up + down;
        if total <= 0.0 {
            break;
        }
        t += rng.exponential(total);
        if t > horizon {
            break;
        }
        events += 1;
        if events > event_cap {
            return Err(Error::EventCapExceeded { events });
        }
        if rng.uniform() * total < up {
            k += 1;
        } else {
            k -= 1;
        }
        times.push(t);
        counts.push(k);
    }
    Ok(ColonyTrajectory {
        times,
        counts,
        horizon,
    })
}

/// Equilibrium of the fluid limit: `(theta / gamma)^(1/alpha)`.
pub fn scaled_equilibrium(theta: f64, gamma: f64, alpha: f64) -> f64 {
    debug_assert!(theta > 0.0 && gamma > 0.0 && alpha >= 1.0);
    pow_real(theta / gamma, 1.0 / alpha)
}

/// Fixed-step fourth-order integration of `z' = theta - gamma * z^alpha`.
///
/// Fails if the solution leaves `[-..., 10 * max(z0, equilibrium)]`, which
/// signals an unstable step size.
pub fn integrate_fluid_limit(
    theta: f64,
    gamma: f64,
    alpha: f64,
    z0: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    if z0 < 0.0 {
        return Err(Error::InvalidParams(format!(
            "z0 must be non-negative, got {z0}"
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let eq = scaled_equilibrium(theta, gamma, alpha);
    let bound = 10.0 * z0.max(eq).max(1e-12);
    let rhs = |z: f64| theta - gamma * pow_real(z.max(0.0), alpha);

    let mut out = vec![(0.0, z0)];
    let mut t = 0.0;
    let mut z = z0;
    while t < horizon {
        let h = dt.min(horizon - t);
        let k1 = rhs(z);
        let k2 = rhs(z + 0.5 * h * k1);
        let k3 = rhs(z + 0.5 * h * k2);
        let k4 = rhs(z + h * k3);
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        if !z.is_finite() || z.abs() > bound {
            return Err(Error::Numerical(format!(
                "fluid-limit integration left the stable region at t = {t} (z = {z}); reduce dt"
            )));
        }
        out.push((t, z));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_basic() -> ModelParams {
        ModelParams::new(100, 0.1, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rates_direct_substitution() {
        let p = params_basic();
        let (up, down) = colony_rates(&p, 3);
        assert!((up - 0.1).abs() < 1e-15, "up = {up}");
        assert!((down - 0.03).abs() < 1e-15, "down = {down}");
    }

    #[test]
    fn down_rate_zero_only_at_zero() {
        let p = params_basic();
        assert_eq!(colony_rates(&p, 0).1, 0.0);
        for k in 1..50 {
            assert!(colony_rates(&p, k).1 > 0.0);
        }
    }

    #[test]
    fn rates_hand_evaluated_oracle() {
        // N = 1e4, eps = 0.01, theta = 2, gamma = 3, alpha = 2, k = 50:
        // up = theta / (eps * N) = 0.02; gamma_N = 3 * 0.01 / 1e4 = 3e-6;
        // down = 3e-6 * 2500 = 7.5e-3. Evaluated by hand before the build.
        let p = ModelParams::new(10_000, 0.01, 2.0, 3.0, 2.0).unwrap();
        let (up, down) = colony_rates(&p, 50);
        assert!((up - 0.02).abs() < 1e-15, "up = {up}");
        assert!((down - 0.0075).abs() < 1e-15, "down = {down}");
    }

    #[test]
    fn up_constant_down_increasing() {
        let p = ModelParams::new(1000, 0.05, 2.0, 0.5, 1.7).unwrap();
        let (up0, _) = colony_rates(&p, 0);
        let mut prev_down = 0.0;
        for k in 1..200 {
            let (up, down) = colony_rates(&p, k);
            assert_eq!(up, up0);
            assert!(down > prev_down);
            prev_down = down;
        }
    }

    #[test]
    fn poisson_case_matches_brute_force() {
        let pmf = stationary_pmf_from(2.0, 1.0, 1e-13).unwrap();
        assert!((pmf.probs[0] - (-2.0f64).exp()).abs() < 1e-10);
        // Brute-force normalization of lambda^k / k! over k <= 100.
        let mut w = vec![1.0f64];
        for k in 1..=100usize {
            let last = *w.last().unwrap();
            w.push(last * 2.0 / k as f64);
        }
        let norm: f64 = w.iter().sum();
        for (k, &p) in pmf.probs.iter().enumerate() {
            assert!(
                (p - w[k] / norm).abs() < 1e-12,
                "k = {k}: {p} vs {}",
                w[k] / norm
            );
        }
        assert!(pmf.tail_bound < 1e-13);
    }

    #[test]
    fn alpha_two_matches_direct_summation() {
        let pmf = stationary_pmf_from(4.0, 2.0, 1e-13).unwrap();
        let mut w = vec![1.0f64];
        for k in 1..=200usize {
            let last = *w.last().unwrap();
            w.push(last * 4.0 / (k as f64 * k as f64));
        }
        let norm: f64 = w.iter().sum();
        for (k, &p) in pmf.probs.iter().enumerate() {
            assert!((p - w[k] / norm).abs() < 1e-12, "mismatch at k = {k}");
        }
    }

    #[test]
    fn tiny_lambda_concentrates_at_zero() {
        let pmf = stationary_pmf_from(1e-12, 1.5, 1e-6).unwrap();
        assert!(pmf.probs[0] > 1.0 - 1e-11);
    }

    #[test]
    fn probabilities_normalized() {
        for (lambda, alpha) in [(2.0, 1.0), (1e4, 1.0), (50.0, 2.0), (3.0, 1.5)] {
            let pmf = stationary_pmf_from(lambda, alpha, 1e-10).unwrap();
            let s: f64 = pmf.probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "sum {s} for lambda {lambda}");
        }
    }

    #[test]
    fn detailed_balance_on_truncated_support() {
        let p = ModelParams::new(100, 0.1, 2.0, 1.0, 1.0).unwrap();
        let pmf = stationary_pmf(&p, 1e-10).unwrap();
        for k in 0..pmf.support_max {
            let (up, _) = colony_rates(&p, k as u64);
            let (_, down_next) = colony_rates(&p, k as u64 + 1);
            let lhs = pmf.probs[k] * up;
            let rhs = pmf.probs[k + 1] * down_next;
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
                "detailed balance broken at k = {k}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn degenerate_pmf_always_zero() {
        let pmf = stationary_pmf_from(1e-12, 1.0, 1e-6).unwrap();
        let mut rng = Rng::new(1);
        for _ in 0..1000 {
            assert_eq!(pmf.sample(&mut rng), 0);
        }
    }

    #[test]
    fn sampling_deterministic_per_seed() {
        let pmf = stationary_pmf_from(2.0, 1.0, 1e-9).unwrap();
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..1000 {
            assert_eq!(pmf.sample(&mut a), pmf.sample(&mut b));
        }
    }

    #[test]
    fn sampling_mean_poisson_two() {
        let pmf = stationary_pmf_from(2.0, 1.0, 1e-9).unwrap();
        let mut rng = Rng::new(314159);
        let n = 1_000_000u64;
        let mut sum = 0u64;
        for _ in 0..n {
            sum += pmf.sample(&mut rng);
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn path_from_zero_first_jump_up() {
        let p = ModelParams::new(100, 0.1, 5.0, 1.0, 1.0).unwrap();
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let traj = simulate_colony_path(&p, 0, 1000.0, &mut rng).unwrap();
            assert!(traj.counts.len() > 1);
            assert_eq!(traj.counts[1], 1, "first event from 0 must be a birth");
        }
    }

    #[test]
    fn path_monotone_without_immigration() {
        // theta -> 0: immigration rate ~ 1e-15, so paths only step down.
        let p = ModelParams::new(100, 0.1, 1e-12, 1.0, 1.0).unwrap();
        let mut rng = Rng::new(3);
        let traj = simulate_colony_path(&p, 20, 1e4, &mut rng).unwrap();
        for w in traj.counts.windows(2) {
            assert!(w[1] <= w[0], "count increased without immigration");
        }
    }

    #[test]
    fn path_steps_by_one_and_times_increase() {
        let p = params_basic();
        let mut rng = Rng::new(4);
        let traj = simulate_colony_path(&p, 5, 5000.0, &mut rng).unwrap();
        for i in 1..traj.times.len() {
            assert!(traj.times[i] > traj.times[i - 1]);
            let d = traj.counts[i] as i64 - traj.counts[i - 1] as i64;
            assert_eq!(d.abs(), 1);
        }
        assert!(*traj.times.last().unwrap() <= traj.horizon);
    }

    #[test]
    fn event_cap_signals_misconfiguration() {
        let p = params_basic();
        let mut rng = Rng::new(4);
        let err = simulate_colony_path_capped(&p, 5, 1e9, &mut rng, 100).unwrap_err();
        assert!(matches!(err, Error::EventCapExceeded { .. }));
    }

    #[test]
    fn long_run_occupation_matches_stationary() {
        // alpha = 1, lambda = 2; run ~1e6 events from a stationary start and
        // compare time-weighted occupation with the stationary law.
        let p = ModelParams::new(100, 0.1, 0.2, 1.0, 1.0).unwrap();
        assert!((p.lambda() - 2.0).abs() < 1e-12);
        let pmf = stationary_pmf(&p, 1e-10).unwrap();
        let mut rng = Rng::new(2024);
        let k0 = pmf.sample(&mut rng);
        // Mean total rate ~ 2 * up = 0.04 per unit, so 1e6 events need a
        // horizon of about 2.5e7 time units.
        let traj = simulate_colony_path(&p, k0, 2.6e7, &mut rng).unwrap();
        assert!(traj.n_events() >= 1_000_000, "events: {}", traj.n_events());
        let occ = traj.occupation_distribution();
        let mut tv = 0.0;
        for k in 0..=pmf.support_max as u64 {
            let emp = occ.get(&k).copied().unwrap_or(0.0);
            tv += (emp - pmf.probs[k as usize]).abs();
        }
        tv *= 0.5;
        assert!(tv < 0.02, "occupation tv = {tv}");
    }

    #[test]
    fn equilibrium_values() {
        assert!((scaled_equilibrium(4.0, 1.0, 2.0) - 2.0).abs() < 1e-15);
        for alpha in [1.0, 1.3, 2.0, 5.0] {
            assert!((scaled_equilibrium(3.0, 3.0, alpha) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn equilibrium_matches_bisection_root() {
        // Independent root of theta - gamma * z^alpha = 0 by bisection.
        let (theta, gamma, alpha) = (3.0, 7.0, 1.5);
        let f = |z: f64| theta - gamma * z.powf(alpha);
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((scaled_equilibrium(theta, gamma, alpha) - root).abs() < 1e-12);
    }

    #[test]
    fn fluid_limit_constant_at_equilibrium() {
        let eq = scaled_equilibrium(2.0, 3.0, 1.4);
        let path = integrate_fluid_limit(2.0, 3.0, 1.4, eq, 2.0, 1e-3).unwrap();
        for &(_, z) in &path {
            assert!((z - eq).abs() < 1e-12);
        }
    }

    #[test]
    fn fluid_limit_linear_case_matches_closed_form() {
        // alpha = 1: z(t) = theta/gamma + (z0 - theta/gamma) e^{-gamma t}.
        let (theta, gamma, z0) = (2.0, 0.7, 5.0);
        let path = integrate_fluid_limit(theta, gamma, 1.0, z0, 4.0, 1e-3).unwrap();
        for &(t, z) in &path {
            let exact = theta / gamma + (z0 - theta / gamma) * (-gamma * t).exp();
            assert!((z - exact).abs() < 1e-8, "t = {t}: {z} vs {exact}");
        }
    }

    #[test]
    fn fluid_limit_monotone_rise_from_zero() {
        let path = integrate_fluid_limit(1.0, 1.0, 2.0, 0.0, 6.0, 1e-3).unwrap();
        let mut prev = -1.0;
        for &(_, z) in &path {
            assert!(z > prev, "solution must increase strictly");
            assert!(z <= 1.0 + 1e-9, "solution must not overshoot equilibrium");
            prev = z;
        }
        assert!((path.last().unwrap().1 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn fluid_limit_rejects_unstable_step() {
        // Stiff setup with a huge step blows past the stability bound.
        let err = integrate_fluid_limit(1.0, 1.0, 8.0, 9.0, 10.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
