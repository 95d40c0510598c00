//! Convergence studies tying the finite-size simulators to their limits,
//! with reproducible machine-readable reports.
//!
//! Each study fans replicates out to a worker pool; every replicate owns a
//! stream derived purely from `(seed, scale, index)`, so reports are
//! byte-identical regardless of worker count or scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::ancestral::{ancestry_states_at, sample_conditioned_k, AncestryOptions, ColonyInit};
use crate::coalescent::{
    censored_coalescence_times, censored_generator, kingman_rates, transition_row, CensoredState,
};
use crate::colony::{scaled_equilibrium, simulate_colony_path, stationary_pmf};
use crate::error::{Error, Result};
use crate::forward::{extract_ancestry, init_world, run_forward};
use crate::params::{pow_real, ModelParams};
use crate::rng::{mix64, Rng};
use crate::stats::{ks_statistic, percentile, tv_distance, tv_standard_error, EmpiricalDistribution};

/// Provenance block embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub study: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub seed: u64,
    pub replicates: u64,
}

/// One metric evaluation at one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    /// Scale parameter (N or k).
    pub scale: u64,
    /// Coordinate within the scale, e.g. `t=0.5` or `l=3`.
    pub label: String,
    pub metric: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

/// A pass/fail verdict with its supporting detail.
#[derive(Debug, Clone, Serialize)]
pub struct NamedCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Study output: grid, metric values, and threshold verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub meta: ReportMeta,
    pub grid: Vec<u64>,
    pub rows: Vec<MetricRow>,
    pub checks: Vec<NamedCheck>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Flat CSV table with a provenance comment header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# study={}\n", self.meta.study));
        out.push_str(&format!("# version={}\n", self.meta.version));
        out.push_str(&format!("# config_hash={}\n", self.meta.config_hash));
        out.push_str(&format!("# seed={}\n", self.meta.seed));
        out.push_str(&format!("# replicates={}\n", self.meta.replicates));
        for (k, v) in &self.meta.config {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("scale,label,metric,value,std_error\n");
        for r in &self.rows {
            let se = r
                .std_error
                .map(|s| s.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scale, r.label, r.metric, r.value, se
            ));
        }
        for c in &self.checks {
            out.push_str(&format!("# check {} pass={} {}\n", c.name, c.pass, c.detail));
        }
        out
    }
}

/// FNV-1a over the canonical `key=value` lines of a config map.
pub fn config_hash(config: &BTreeMap<String, String>) -> String {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for (k, v) in config {
        for b in k.bytes().chain([b'='].into_iter()).chain(v.bytes()).chain([b'\n']) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    format!("{h:016x}")
}

fn meta(
    study: &str,
    config: BTreeMap<String, String>,
    seed: u64,
    replicates: u64,
) -> ReportMeta {
    ReportMeta {
        study: study.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&config),
        config,
        seed,
        replicates,
    }
}

/// Per-(scale, replicate) stream derivation.
fn scale_seed(seed: u64, scale: u64) -> u64 {
    mix64(seed ^ mix64(scale))
}

fn join_u64(xs: &[u64]) -> String {
    xs.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// How `eps` is chosen from `N` in grid studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsRule {
    /// `eps*N = round(N^(2/3))`.
    TwoThirdsPower,
    /// A fixed fraction (must make `eps*N` integral at every grid point).
    Fixed(f64),
}

impl EpsRule {
    fn params(&self, n_big: u64, theta: f64, gamma: f64, alpha: f64) -> Result<ModelParams> {
        match self {
            EpsRule::TwoThirdsPower => ModelParams::with_eps_rule(n_big, theta, gamma, alpha),
            EpsRule::Fixed(eps) => ModelParams::new(n_big, *eps, theta, gamma, alpha),
        }
    }

    fn echo(&self) -> String {
        match self {
            EpsRule::TwoThirdsPower => "N^-1/3".to_string(),
            EpsRule::Fixed(e) => format!("fixed:{e}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Ancestral-chain convergence to the censored coalescent
// ---------------------------------------------------------------------------

/// Configuration for the ancestral-limit study: TV distance between the
/// projected ancestral marginals and the exact censored-coalescent law,
/// across an `N` grid.
#[derive(Debug, Clone)]
pub struct AncestralConvergenceConfig {
    pub n: usize,
    pub theta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub n_grid: Vec<u64>,
    pub eps_rule: EpsRule,
    pub times: Vec<f64>,
    pub replicates: u64,
    pub seed: u64,
    pub tv_threshold: f64,
    pub event_cap: u64,
}

impl Default for AncestralConvergenceConfig {
    fn default() -> Self {
        Self {
            n: 4,
            theta: 1.0,
            gamma: 1.0,
            alpha: 1.0,
            n_grid: vec![1_000, 10_000, 100_000],
            eps_rule: EpsRule::TwoThirdsPower,
            times: vec![0.1, 0.5, 1.0],
            replicates: 100_000,
            seed: 42,
            tv_threshold: 0.05,
            event_cap: 100_000_000,
        }
    }
}

impl AncestralConvergenceConfig {
    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("n".into(), self.n.to_string()),
            ("theta".into(), self.theta.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("n_grid".into(), join_u64(&self.n_grid)),
            ("eps_rule".into(), self.eps_rule.echo()),
            ("times".into(), join_f64(&self.times)),
            ("replicates".into(), self.replicates.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("tv_threshold".into(), self.tv_threshold.to_string()),
        ])
    }
}

/// Run the ancestral-limit study: all-inner samples of size `n`, marginals
/// projected to (inner, outer) counts, compared against the matrix
/// exponential of the censored generator at each requested time.
pub fn ancestral_convergence_study(
    config: &AncestralConvergenceConfig,
) -> Result<ConvergenceReport> {
    let gen = censored_generator(config.n as u32, config.theta, config.gamma, config.alpha)?;
    let bar_initial = CensoredState::new(config.n as u32, 0);
    let exact_by_time: Vec<BTreeMap<CensoredState, f64>> = config
        .times
        .iter()
        .map(|&t| {
            transition_row(&gen, &bar_initial, t, 1e-10).map(|row| {
                gen.states
                    .iter()
                    .zip(row.iter())
                    .map(|(s, &p)| (*s, p))
                    .collect()
            })
        })
        .collect::<Result<_>>()?;

    let mut initial_occ = vec![0u32; config.n + 1];
    initial_occ[0] = config.n as u32;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    // tv_by_time[t_idx][n_idx] = (tv, se), for monotonicity checks.
    let mut tv_table: Vec<Vec<(f64, f64)>> = vec![Vec::new(); config.times.len()];

    for &n_big in &config.n_grid {
        let params = config
            .eps_rule
            .params(n_big, config.theta, config.gamma, config.alpha)?;
        let pmf = stationary_pmf(&params, 1e-10)?;
        let sub_seed = scale_seed(config.seed, n_big);
        let options = AncestryOptions {
            colony_init: ColonyInit::Fixed(0), // overwritten per replicate
            event_cap: config.event_cap,
            stop_at_mrca: false,
        };
        let per_replicate: Vec<Vec<CensoredState>> = (0..config.replicates)
            .into_par_iter()
            .map(|i| -> Result<Vec<CensoredState>> {
                let mut rng = Rng::for_replicate(sub_seed, i);
                let k0 = sample_conditioned_k(&pmf, 0, &mut rng)?;
                let opts = AncestryOptions {
                    colony_init: ColonyInit::Fixed(k0),
                    ..options
                };
                let states =
                    ancestry_states_at(&params, &initial_occ, &config.times, &mut rng, &opts)?;
                Ok(states.iter().map(|s| s.project_bar()).collect())
            })
            .collect::<Result<_>>()?;

        for (t_idx, &t) in config.times.iter().enumerate() {
            let mut emp = EmpiricalDistribution::new();
            for states in &per_replicate {
                emp.add(states[t_idx]);
            }
            let emp_probs = emp.probs()?;
            let tv = tv_distance(&emp_probs, &exact_by_time[t_idx])?;
            let se = tv_standard_error(&emp_probs, &exact_by_time[t_idx], config.replicates);
            tv_table[t_idx].push((tv, se));
            rows.push(MetricRow {
                scale: n_big,
                label: format!("t={t}"),
                metric: "tv".into(),
                value: tv,
                std_error: Some(se),
            });
        }
    }

    for (t_idx, &t) in config.times.iter().enumerate() {
        let series = &tv_table[t_idx];
        let monotone = series.windows(2).all(|w| {
            let slack = 2.0 * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt();
            w[1].0 <= w[0].0 + slack
        });
        checks.push(NamedCheck {
            name: format!("tv_non_increasing_t={t}"),
            pass: monotone,
            detail: format!(
                "tv along N grid: [{}] (2-se slack)",
                series
                    .iter()
                    .map(|(v, _)| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        });
        if let Some(&(last, _)) = series.last() {
            checks.push(NamedCheck {
                name: format!("tv_final_below_threshold_t={t}"),
                pass: last < config.tv_threshold,
                detail: format!("tv={last:.4} threshold={}", config.tv_threshold),
            });
        }
    }

    Ok(ConvergenceReport {
        meta: meta(
            "study-thm1",
            config.echo(),
            config.seed,
            config.replicates,
        ),
        grid: config.n_grid.clone(),
        rows,
        checks,
    })
}

// ---------------------------------------------------------------------------
// Censored-coalescent convergence to the time-changed Kingman coalescent
// ---------------------------------------------------------------------------

/// Configuration for the fast-landscape study: KS distance between the
/// inter-coalescence times of accelerated censored chains and their
/// exponential limits, across a rate-scale grid.
#[derive(Debug, Clone)]
pub struct KingmanConvergenceConfig {
    pub n: u32,
    /// Limit ratio of the accelerated parameters (finite and positive here;
    /// the exact limits live in [`kingman_rates`]).
    pub p: f64,
    pub alpha: f64,
    /// Base rate multiplier `c`: the chain at grid point `k` runs with
    /// per-lineage switch rates `k*c` (inner out) and `k*c*p^(1/alpha)`
    /// (outer in), whose ratio recovers the presence fraction of the limit.
    pub rate_scale: f64,
    pub k_grid: Vec<u64>,
    pub replicates: u64,
    pub seed: u64,
    pub ks_threshold: f64,
}

impl Default for KingmanConvergenceConfig {
    fn default() -> Self {
        Self {
            n: 4,
            p: 1.0,
            alpha: 1.0,
            rate_scale: 1.0,
            k_grid: vec![10, 100, 1_000, 10_000],
            replicates: 100_000,
            seed: 42,
            ks_threshold: 0.01,
        }
    }
}

impl KingmanConvergenceConfig {
    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("n".into(), self.n.to_string()),
            ("p".into(), self.p.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("rate_scale".into(), self.rate_scale.to_string()),
            ("k_grid".into(), join_u64(&self.k_grid)),
            ("replicates".into(), self.replicates.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("ks_threshold".into(), self.ks_threshold.to_string()),
        ])
    }
}

/// Run the fast-landscape study.
pub fn kingman_convergence_study(config: &KingmanConvergenceConfig) -> Result<ConvergenceReport> {
    if !(config.p > 0.0) || !config.p.is_finite() {
        return Err(Error::InvalidParams(format!(
            "the acceleration study needs a finite positive p, got {}",
            config.p
        )));
    }
    if config.n < 2 {
        return Err(Error::InvalidParams(
            "the acceleration study needs n >= 2".into(),
        ));
    }
    let kp = kingman_rates(config.n, config.p, config.alpha)?;
    let levels: Vec<u32> = (2..=config.n).rev().collect();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut ks_table: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    // Null-hypothesis sampling noise of a KS statistic at this replicate
    // count (asymptotic sd of the Kolmogorov law).
    let ks_se = 0.26 / (config.replicates as f64).sqrt();

    for &k in &config.k_grid {
        let flip_out = k as f64 * config.rate_scale;
        let flip_in = flip_out * pow_real(config.p, 1.0 / config.alpha);
        let sub_seed = scale_seed(config.seed, k);
        let taus: Vec<Vec<f64>> = (0..config.replicates)
            .into_par_iter()
            .map(|i| {
                let mut rng = Rng::for_replicate(sub_seed, i);
                censored_coalescence_times(config.n, flip_out, flip_in, &mut rng)
            })
            .collect();
        for (lvl_idx, &level) in levels.iter().enumerate() {
            let samples: Vec<f64> = taus.iter().map(|t| t[lvl_idx]).collect();
            let rate = kp.rate(level);
            let ks = ks_statistic(&samples, |x| 1.0 - (-rate * x).exp())?;
            ks_table[lvl_idx].push(ks);
            rows.push(MetricRow {
                scale: k,
                label: format!("l={level}"),
                metric: "ks".into(),
                value: ks,
                std_error: Some(ks_se),
            });
        }
    }

    for (lvl_idx, &level) in levels.iter().enumerate() {
        let series = &ks_table[lvl_idx];
        // Non-increasing up to two (two-sample) standard errors; at the
        // tail of the grid both statistics sit on the sampling-noise floor.
        let slack = 2.0 * std::f64::consts::SQRT_2 * ks_se;
        let decreasing = series.windows(2).all(|w| w[1] <= w[0] + slack);
        checks.push(NamedCheck {
            name: format!("ks_decreasing_l={level}"),
            pass: decreasing,
            detail: format!(
                "ks along k grid: [{}] (2-se slack)",
                series
                    .iter()
                    .map(|v| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        });
        if let Some(&last) = series.last() {
            checks.push(NamedCheck {
                name: format!("ks_final_below_threshold_l={level}"),
                pass: last < config.ks_threshold,
                detail: format!("ks={last:.4} threshold={}", config.ks_threshold),
            });
        }
    }

    Ok(ConvergenceReport {
        meta: meta(
            "study-thm2",
            config.echo(),
            config.seed,
            config.replicates,
        ),
        grid: config.k_grid.clone(),
        rows,
        checks,
    })
}

// ---------------------------------------------------------------------------
// Colony-count concentration around the fluid equilibrium
// ---------------------------------------------------------------------------

/// Configuration for the fluid-concentration study: the 95th percentile of
/// `sup_t |eps * k(Nt) - (theta/gamma)^(1/alpha)|` across an `N` grid.
#[derive(Debug, Clone)]
pub struct FluidConcentrationConfig {
    pub theta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub n_grid: Vec<u64>,
    pub eps_rule: EpsRule,
    /// Window length in rescaled time.
    pub horizon: f64,
    pub replicates: u64,
    pub seed: u64,
    pub quantile: f64,
    pub threshold: f64,
}

impl Default for FluidConcentrationConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            gamma: 1.0,
            alpha: 1.0,
            n_grid: vec![1_000, 10_000, 100_000],
            eps_rule: EpsRule::TwoThirdsPower,
            horizon: 1.0,
            replicates: 1_000,
            seed: 42,
            quantile: 0.95,
            threshold: 0.1,
        }
    }
}

impl FluidConcentrationConfig {
    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("theta".into(), self.theta.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("n_grid".into(), join_u64(&self.n_grid)),
            ("eps_rule".into(), self.eps_rule.echo()),
            ("horizon".into(), self.horizon.to_string()),
            ("replicates".into(), self.replicates.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("quantile".into(), self.quantile.to_string()),
            ("threshold".into(), self.threshold.to_string()),
        ])
    }
}

/// Run the fluid-concentration study from stationary starts.
pub fn fluid_concentration_study(config: &FluidConcentrationConfig) -> Result<ConvergenceReport> {
    let equilibrium = scaled_equilibrium(config.theta, config.gamma, config.alpha);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut quantiles = Vec::new();

    for &n_big in &config.n_grid {
        let params = config
            .eps_rule
            .params(n_big, config.theta, config.gamma, config.alpha)?;
        let pmf = stationary_pmf(&params, 1e-10)?;
        let sub_seed = scale_seed(config.seed, n_big);
        let native_horizon = config.horizon * n_big as f64;
        let sups: Vec<f64> = (0..config.replicates)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut rng = Rng::for_replicate(sub_seed, i);
                let k0 = pmf.sample(&mut rng);
                let traj = simulate_colony_path(&params, k0, native_horizon, &mut rng)?;
                Ok(traj.sup_scaled_deviation(params.eps, equilibrium))
            })
            .collect::<Result<_>>()?;
        let q = percentile(&sups, config.quantile)?;
        quantiles.push(q);
        rows.push(MetricRow {
            scale: n_big,
            label: format!("q{}", config.quantile),
            metric: "sup_deviation_quantile".into(),
            value: q,
            std_error: None,
        });
    }

    checks.push(NamedCheck {
        name: "sup_deviation_quantile_decreasing".into(),
        pass: quantiles.windows(2).all(|w| w[1] < w[0]),
        detail: format!(
            "quantiles along N grid: [{}]",
            quantiles
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    });
    if let Some(&last) = quantiles.last() {
        checks.push(NamedCheck {
            name: "sup_deviation_quantile_final_below_threshold".into(),
            pass: last < config.threshold,
            detail: format!("quantile={last:.4} threshold={}", config.threshold),
        });
    }

    Ok(ConvergenceReport {
        meta: meta(
            "study-lemma1",
            config.echo(),
            config.seed,
            config.replicates,
        ),
        grid: config.n_grid.clone(),
        rows,
        checks,
    })
}

// ---------------------------------------------------------------------------
// Forward-vs-backward duality
// ---------------------------------------------------------------------------

/// Configuration for the duality check: occupancy laws extracted from
/// forward logs against occupancy laws of the backward chain, at matched
/// rescaled times.
#[derive(Debug, Clone)]
pub struct DualityConfig {
    pub n: usize,
    pub n_big: u64,
    pub eps_n: u64,
    pub theta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub times_rescaled: Vec<f64>,
    pub replicates: u64,
    pub seed: u64,
    /// Burn-in length as a multiple of `N` time units.
    pub burn_in_factor: f64,
    pub tv_threshold: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            n: 4,
            n_big: 200,
            eps_n: 20,
            theta: 1.0,
            gamma: 1.0,
            alpha: 1.0,
            times_rescaled: vec![0.1, 0.3],
            replicates: 10_000,
            seed: 42,
            burn_in_factor: crate::forward::DEFAULT_BURN_IN_FACTOR,
            tv_threshold: 0.05,
        }
    }
}

impl DualityConfig {
    pub fn echo(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("n".into(), self.n.to_string()),
            ("N".into(), self.n_big.to_string()),
            ("eps_n".into(), self.eps_n.to_string()),
            ("theta".into(), self.theta.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("times".into(), join_f64(&self.times_rescaled)),
            ("replicates".into(), self.replicates.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("burn_in_factor".into(), self.burn_in_factor.to_string()),
            ("tv_threshold".into(), self.tv_threshold.to_string()),
        ])
    }
}

/// Run the duality check. Occupancy vectors (not projections) are compared,
/// so within-colony multiplicities must agree between the two simulators.
pub fn duality_study(config: &DualityConfig) -> Result<ConvergenceReport> {
    let params = ModelParams::with_colony_size(
        config.n_big,
        config.eps_n,
        config.theta,
        config.gamma,
        config.alpha,
    )?;
    let pmf = stationary_pmf(&params, 1e-10)?;
    let mut times = config.times_rescaled.clone();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_time = *times.last().ok_or_else(|| {
        Error::InvalidParams("duality needs at least one matched time".into())
    })?;

    let mut initial_occ = vec![0u32; config.n + 1];
    initial_occ[0] = config.n as u32;

    // Backward side: the ancestral chain in rescaled time.
    let backward_seed = scale_seed(config.seed, 1);
    let backward: Vec<Vec<Vec<u32>>> = (0..config.replicates)
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<u32>>> {
            let mut rng = Rng::for_replicate(backward_seed, i);
            let k0 = sample_conditioned_k(&pmf, 0, &mut rng)?;
            let opts = AncestryOptions {
                colony_init: ColonyInit::Fixed(k0),
                event_cap: 100_000_000,
                stop_at_mrca: false,
            };
            let states = ancestry_states_at(&params, &initial_occ, &times, &mut rng, &opts)?;
            Ok(states.into_iter().map(|s| s.occ).collect())
        })
        .collect::<Result<_>>()?;

    // Forward side: individual-based world, ancestry read off the log.
    let forward_seed = scale_seed(config.seed, 2);
    let burn_in = config.burn_in_factor * config.n_big as f64;
    let native_times: Vec<f64> = times.iter().map(|t| t * config.n_big as f64).collect();
    let horizon = max_time * config.n_big as f64;
    let forward: Vec<Vec<Vec<u32>>> = (0..config.replicates)
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<u32>>> {
            let mut rng = Rng::for_replicate(forward_seed, i);
            let (mut world, _) = init_world(&params, &mut rng, burn_in)?;
            let log = run_forward(&mut world, &params, horizon, &mut rng)?;
            // Sample n distinct individuals from the main population.
            let mut sample = Vec::with_capacity(config.n);
            while sample.len() < config.n {
                let id = world.main[rng.index(world.main.len())];
                if !sample.contains(&id) {
                    sample.push(id);
                }
            }
            let states = extract_ancestry(&log, &world, &sample, &native_times)?;
            Ok(states.into_iter().map(|s| s.occ).collect())
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (t_idx, &t) in times.iter().enumerate() {
        let mut emp_b = EmpiricalDistribution::new();
        let mut emp_f = EmpiricalDistribution::new();
        for occs in &backward {
            emp_b.add(occs[t_idx].clone());
        }
        for occs in &forward {
            emp_f.add(occs[t_idx].clone());
        }
        let pb = emp_b.probs()?;
        let pf = emp_f.probs()?;
        let tv = tv_distance(&pf, &pb)?;
        // Two-sample delta-method error: both sides carry multinomial noise.
        let se_f = tv_standard_error(&pf, &pb, config.replicates);
        let se_b = tv_standard_error(&pb, &pf, config.replicates);
        let se = (se_f * se_f + se_b * se_b).sqrt();
        rows.push(MetricRow {
            scale: config.n_big,
            label: format!("t={t}"),
            metric: "tv".into(),
            value: tv,
            std_error: Some(se),
        });
        checks.push(NamedCheck {
            name: format!("duality_tv_below_threshold_t={t}"),
            pass: tv < config.tv_threshold,
            detail: format!("tv={tv:.4} threshold={}", config.tv_threshold),
        });
    }

    Ok(ConvergenceReport {
        meta: meta(
            "duality",
            config.echo(),
            config.seed,
            config.replicates,
        ),
        grid: vec![config.n_big],
        rows,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_are_reproducible_byte_for_byte() {
        let config = AncestralConvergenceConfig {
            n: 2,
            n_grid: vec![200, 400],
            times: vec![0.2],
            replicates: 200,
            ..AncestralConvergenceConfig::default()
        };
        let a = ancestral_convergence_study(&config).unwrap();
        let b = ancestral_convergence_study(&config).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn empty_time_grid_gives_empty_report() {
        let config = AncestralConvergenceConfig {
            n: 2,
            n_grid: vec![200],
            times: vec![],
            replicates: 10,
            ..AncestralConvergenceConfig::default()
        };
        let report = ancestral_convergence_study(&config).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.all_pass());
    }

    #[test]
    fn config_hash_distinguishes_configs() {
        let a = AncestralConvergenceConfig::default().echo();
        let mut b = AncestralConvergenceConfig::default();
        b.seed = 43;
        assert_ne!(config_hash(&a), config_hash(&b.echo()));
    }

    #[test]
    fn single_lineage_study_matches_two_state_marginal() {
        // n = 1 reduces the comparison to the inner/outer indicator against
        // the closed-form two-state law.
        let config = AncestralConvergenceConfig {
            n: 1,
            n_grid: vec![2_000],
            times: vec![0.4],
            replicates: 20_000,
            ..AncestralConvergenceConfig::default()
        };
        let report = ancestral_convergence_study(&config).unwrap();
        let tv = report.rows[0].value;
        assert!(tv < 0.03, "n=1 tv = {tv}");
    }

    #[test]
    fn kingman_study_rejects_degenerate_p() {
        let config = KingmanConvergenceConfig {
            p: 0.0,
            ..KingmanConvergenceConfig::default()
        };
        assert!(kingman_convergence_study(&config).is_err());
    }

    #[test]
    fn kingman_study_small_smoke() {
        let config = KingmanConvergenceConfig {
            n: 3,
            k_grid: vec![20, 200],
            replicates: 5_000,
            ks_threshold: 0.2,
            ..KingmanConvergenceConfig::default()
        };
        let report = kingman_convergence_study(&config).unwrap();
        assert_eq!(report.rows.len(), 4);
        let ks_l3: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.label == "l=3")
            .map(|r| r.value)
            .collect();
        assert!(ks_l3[1] < ks_l3[0], "ks should shrink with k: {ks_l3:?}");
    }

    #[test]
    fn fluid_study_small_smoke() {
        let config = FluidConcentrationConfig {
            n_grid: vec![1_000, 8_000],
            replicates: 200,
            ..FluidConcentrationConfig::default()
        };
        let report = fluid_concentration_study(&config).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.rows[1].value < report.rows[0].value);
    }

    #[test]
    fn duality_study_small_smoke() {
        let config = DualityConfig {
            replicates: 300,
            times_rescaled: vec![0.1],
            burn_in_factor: 0.5,
            tv_threshold: 0.3,
            ..DualityConfig::default()
        };
        let report = duality_study(&config).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.all_pass(), "{}", report.to_csv());
    }
}
