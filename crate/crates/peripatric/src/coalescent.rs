//! Limiting coalescents of the metapopulation genealogy.
//!
//! Two chains live here. The two-state censored coalescent tracks
//! `(r0, r1)` = (inner lineages, outer lineages): inner lineages coalesce
//! at rate 1 per ordered pair, turn outer at rate `theta` each, and outer
//! lineages return at rate `theta * (gamma/theta)^(1/alpha)` each. Under
//! fast landscape dynamics the total lineage count converges to a
//! time-changed Kingman coalescent whose level-`l` rate averages pair
//! coalescence over a binomial presence probability.
//!
//! Exact transient distributions are computed by uniformization: `exp(tQ)`
//! as a Poisson mixture of powers of the uniformized kernel, with the
//! Poisson tail truncated by a Chernoff bound.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::pow_real;
use crate::rng::Rng;

/// State of the censored coalescent: inner and outer lineage counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CensoredState {
    pub r0: u32,
    pub r1: u32,
}

impl CensoredState {
    pub fn new(r0: u32, r1: u32) -> Self {
        Self { r0, r1 }
    }

    pub fn total(&self) -> u32 {
        self.r0 + self.r1
    }
}

impl std::fmt::Display for CensoredState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.r0, self.r1)
    }
}

/// Dense generator over an enumerated finite state space.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    /// Enumerated states: total count descending, then `r0` descending.
    pub states: Vec<CensoredState>,
    /// Row-major generator entries.
    pub q: Vec<f64>,
    index: HashMap<CensoredState, usize>,
}

impl RateMatrix {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.q[from * self.dim() + to]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.q[i * d..(i + 1) * d]
    }

    /// Index of a state in the enumeration.
    pub fn state_index(&self, s: &CensoredState) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Check generator structure: non-negative off-diagonals, zero row sums.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for i in 0..d {
            let mut sum = 0.0;
            for j in 0..d {
                let v = self.rate(i, j);
                if i != j && v < 0.0 {
                    return Err(Error::Numerical(format!(
                        "negative off-diagonal rate at ({i}, {j}): {v}"
                    )));
                }
                sum += v;
            }
            if sum.abs() > 1e-12 {
                return Err(Error::Numerical(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// CSV rendering with one labeled column per state.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state");
        for s in &self.states {
            out.push_str(&format!(",\"{s}\""));
        }
        out.push('\n');
        for (i, s) in self.states.iter().enumerate() {
            out.push_str(&format!("\"{s}\""));
            for j in 0..self.dim() {
                out.push_str(&format!(",{}", self.rate(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Enumerate the censored state space for sample size `n`.
pub fn censored_states(n: u32) -> Vec<CensoredState> {
    let mut states = Vec::new();
    for total in (1..=n).rev() {
        for r0 in (0..=total).rev() {
            states.push(CensoredState::new(r0, total - r0));
        }
    }
    states
}

/// Generator of the two-state censored coalescent on samples of size `n`.
///
/// From `(r0, r1)`: rate `theta * r0` to `(r0-1, r1+1)`, rate
/// `theta * (gamma/theta)^(1/alpha) * r1` to `(r0+1, r1-1)`, and rate
/// `r0 * (r0 - 1)` to `(r0-1, r1)`.
pub fn censored_generator(n: u32, theta: f64, gamma: f64, alpha: f64) -> Result<RateMatrix> {
    if n == 0 {
        return Err(Error::InvalidParams("sample size n must be >= 1".into()));
    }
    if !(theta > 0.0) || !(gamma > 0.0) || !(alpha >= 1.0) {
        return Err(Error::InvalidParams(format!(
            "need theta > 0, gamma > 0, alpha >= 1; got ({theta}, {gamma}, {alpha})"
        )));
    }
    let states = censored_states(n);
    let dim = states.len();
    let index: HashMap<CensoredState, usize> =
        states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let return_rate = theta * pow_real(gamma / theta, 1.0 / alpha);
    let mut q = vec![0.0; dim * dim];
    for (i, s) in states.iter().enumerate() {
        let (r0, r1) = (s.r0, s.r1);
        let mut out = 0.0;
        if r0 > 0 {
            let rate = theta * r0 as f64;
            let j = index[&CensoredState::new(r0 - 1, r1 + 1)];
            q[i * dim + j] += rate;
            out += rate;
        }
        if r1 > 0 {
            let rate = return_rate * r1 as f64;
            let j = index[&CensoredState::new(r0 + 1, r1 - 1)];
            q[i * dim + j] += rate;
            out += rate;
        }
        if r0 >= 2 {
            let rate = (r0 * (r0 - 1)) as f64;
            let j = index[&CensoredState::new(r0 - 1, r1)];
            q[i * dim + j] += rate;
            out += rate;
        }
        q[i * dim + i] = -out;
    }
    Ok(RateMatrix { states, q, index })
}

fn mat_mul(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * dim..(k + 1) * dim];
            let crow = &mut c[i * dim..(i + 1) * dim];
            for j in 0..dim {
                crow[j] += aik * brow[j];
            }
        }
    }
    c
}

fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

/// Smallest Poisson truncation point with Chernoff tail below `tol`.
fn poisson_truncation(mu: f64, tol: f64) -> usize {
    let log_tol = tol.ln();
    let mut m = mu.ceil().max(1.0);
    loop {
        // log P(Pois(mu) >= m) <= -mu + m (1 + ln mu - ln m)
        let log_bound = -mu + m * (1.0 + mu.ln() - m.ln());
        if log_bound < log_tol {
            return m as usize;
        }
        m += 1.0;
    }
}

const UNIFORMIZATION_MU_CAP: f64 = 512.0;

/// Transition probabilities `exp(tQ)` by uniformization, row-major, with
/// per-row truncation error below `tol`. Large `t` is handled by halving
/// the interval and squaring the result.
pub fn transition_matrix(gen: &RateMatrix, t: f64, tol: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("t must be >= 0, got {t}")));
    }
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(Error::InvalidParams(format!(
            "tol must lie in (0, 1e-6], got {tol}"
        )));
    }
    let dim = gen.dim();
    let uni_rate = (0..dim)
        .map(|i| -gen.rate(i, i))
        .fold(0.0f64, f64::max);
    if uni_rate <= 0.0 {
        return Err(Error::Numerical(
            "uniformization constant is zero (all states absorbing)".into(),
        ));
    }
    if t == 0.0 {
        return Ok(identity(dim));
    }
    // Keep the Poisson mean moderate; each squaring at most doubles the
    // accumulated error, so tighten the inner tolerance accordingly.
    let halvings = if uni_rate * t > UNIFORMIZATION_MU_CAP {
        (uni_rate * t / UNIFORMIZATION_MU_CAP).log2().ceil() as u32
    } else {
        0
    };
    let t_base = t / 2f64.powi(halvings as i32);
    let inner_tol = tol / 2f64.powi(halvings as i32 + 1);

    let mu = uni_rate * t_base;
    let m_max = poisson_truncation(mu, inner_tol);
    // Uniformized kernel K = I + Q / uni_rate.
    let mut kernel = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let v = gen.rate(i, j) / uni_rate + if i == j { 1.0 } else { 0.0 };
            kernel[i * dim + j] = v;
        }
    }
    let mut weight = (-mu).exp();
    let mut power = identity(dim);
    let mut result: Vec<f64> = power.iter().map(|&x| x * weight).collect();
    for m in 1..=m_max {
        power = mat_mul(&power, &kernel, dim);
        weight *= mu / m as f64;
        for (r, &p) in result.iter_mut().zip(power.iter()) {
            *r += weight * p;
        }
    }
    for _ in 0..halvings {
        result = mat_mul(&result, &result, dim);
    }
    Ok(result)
}

/// Distribution row of `exp(tQ)` from a given initial state.
pub fn transition_row(
    gen: &RateMatrix,
    initial: &CensoredState,
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let idx = gen
        .state_index(initial)
        .ok_or_else(|| Error::InvalidState(format!("state {initial} outside the space")))?;
    let p = transition_matrix(gen, t, tol)?;
    let dim = gen.dim();
    Ok(p[idx * dim..(idx + 1) * dim].to_vec())
}

/// A realized censored-coalescent path.
#[derive(Debug, Clone)]
pub struct CensoredPath {
    /// Event times, starting at 0.
    pub times: Vec<f64>,
    /// States after each event; `states[0]` is the initial state.
    pub states: Vec<CensoredState>,
}

impl CensoredPath {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> CensoredState {
        match self.times.partition_point(|&u| u <= t) {
            0 => self.states[0],
            i => self.states[i - 1],
        }
    }
}

/// Exact simulation of the censored coalescent; stops at the horizon or
/// when a single lineage remains.
pub fn simulate_censored(
    n: u32,
    theta: f64,
    gamma: f64,
    alpha: f64,
    initial: CensoredState,
    horizon: f64,
    rng: &mut Rng,
) -> Result<CensoredPath> {
    simulate_censored_with(n, theta, gamma, alpha, initial, horizon, rng, true)
}

/// As [`simulate_censored`], optionally continuing the single surviving
/// lineage's state switches up to the horizon. Marginal-law comparisons
/// against [`transition_matrix`] need `stop_at_absorption = false`, because
/// the generator keeps switching the last lineage between inner and outer.
#[allow(clippy::too_many_arguments)]
pub fn simulate_censored_with(
    n: u32,
    theta: f64,
    gamma: f64,
    alpha: f64,
    initial: CensoredState,
    horizon: f64,
    rng: &mut Rng,
    stop_at_absorption: bool,
) -> Result<CensoredPath> {
    if initial.total() == 0 || initial.total() > n {
        return Err(Error::InvalidState(format!(
            "initial state {initial} violates 1 <= r0 + r1 <= {n}"
        )));
    }
    if !(theta > 0.0) || !(gamma > 0.0) || !(alpha >= 1.0) {
        return Err(Error::InvalidParams(format!(
            "need theta > 0, gamma > 0, alpha >= 1; got ({theta}, {gamma}, {alpha})"
        )));
    }
    let return_rate = theta * pow_real(gamma / theta, 1.0 / alpha);
    let mut times = vec![0.0];
    let mut states = vec![initial];
    let mut s = initial;
    let mut t = 0.0;
    loop {
        if stop_at_absorption && s.total() == 1 {
            break;
        }
        let exit = theta * s.r0 as f64;
        let entry = return_rate * s.r1 as f64;
        let coal = (s.r0 as u64 * (s.r0 as u64).saturating_sub(1)) as f64;
        let total = exit + entry + coal;
        if total <= 0.0 {
            break;
        }
        t += rng.exponential(total);
        if t > horizon {
            break;
        }
        let u = rng.uniform() * total;
        if u < exit {
            s = CensoredState::new(s.r0 - 1, s.r1 + 1);
        } else if u < exit + entry {
            s = CensoredState::new(s.r0 + 1, s.r1 - 1);
        } else {
            s = CensoredState::new(s.r0 - 1, s.r1);
        }
        times.push(t);
        states.push(s);
    }
    Ok(CensoredPath { times, states })
}

/// Inter-coalescence times of the total lineage count, simulated from an
/// all-inner sample of size `n` with per-lineage switch rates `flip_out`
/// (inner to outer) and `flip_in` (outer to inner). Returns `n - 1`
/// waiting times, one per coalescence level `n, n-1, ..., 2`.
pub fn censored_coalescence_times(
    n: u32,
    flip_out: f64,
    flip_in: f64,
    rng: &mut Rng,
) -> Vec<f64> {
    let mut taus = Vec::with_capacity(n.saturating_sub(1) as usize);
    let mut r0 = n as f64;
    let mut r1 = 0.0f64;
    let mut t = 0.0;
    let mut last_coal = 0.0;
    while r0 + r1 > 1.0 {
        let exit = flip_out * r0;
        let entry = flip_in * r1;
        let coal = r0 * (r0 - 1.0);
        let total = exit + entry + coal;
        t += rng.exponential(total);
        let u = rng.uniform() * total;
        if u < exit {
            r0 -= 1.0;
            r1 += 1.0;
        } else if u < exit + entry {
            r0 += 1.0;
            r1 -= 1.0;
        } else {
            r0 -= 1.0;
            taus.push(t - last_coal);
            last_coal = t;
        }
    }
    taus
}

/// First-passage statistics of the censored coalescent into the absorbing
/// set of single-lineage states.
#[derive(Debug, Clone)]
pub struct TmrcaStats {
    /// Expected absorption time from the initial state.
    pub mean: f64,
    generator: RateMatrix,
    initial: CensoredState,
}

impl TmrcaStats {
    /// `P(absorption time <= t)`: mass of `exp(tQ)` on single-lineage states.
    pub fn cdf(&self, t: f64, tol: f64) -> Result<f64> {
        let row = transition_row(&self.generator, &self.initial, t, tol)?;
        Ok(self
            .generator
            .states
            .iter()
            .zip(row.iter())
            .filter(|(s, _)| s.total() == 1)
            .map(|(_, &p)| p)
            .sum())
    }
}

/// Mean and distribution of the time to most recent common ancestor.
pub fn tmrca_stats(gen: &RateMatrix, initial: CensoredState) -> Result<TmrcaStats> {
    let Some(_) = gen.state_index(&initial) else {
        return Err(Error::InvalidState(format!(
            "state {initial} outside the space"
        )));
    };
    if initial.total() == 1 {
        return Ok(TmrcaStats {
            mean: 0.0,
            generator: gen.clone(),
            initial,
        });
    }
    // First-step equations on transient states: Q_TT m = -1.
    let transient: Vec<usize> = (0..gen.dim())
        .filter(|&i| gen.states[i].total() > 1)
        .collect();
    let pos: HashMap<usize, usize> = transient.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let m = transient.len();
    let mut a = vec![0.0f64; m * (m + 1)];
    for (row, &i) in transient.iter().enumerate() {
        for (col, &j) in transient.iter().enumerate() {
            a[row * (m + 1) + col] = gen.rate(i, j);
        }
        a[row * (m + 1) + m] = -1.0;
    }
    let sol = solve_dense(&mut a, m)?;
    let init_idx = gen.state_index(&initial).unwrap();
    let mean = sol[pos[&init_idx]];
    Ok(TmrcaStats {
        mean,
        generator: gen.clone(),
        initial,
    })
}

/// Gaussian elimination with partial pivoting on an `m x (m+1)` augmented
/// system stored row-major.
fn solve_dense(a: &mut [f64], m: usize) -> Result<Vec<f64>> {
    let w = m + 1;
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&r1, &r2| {
                a[r1 * w + col]
                    .abs()
                    .partial_cmp(&a[r2 * w + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * w + col].abs() < 1e-300 {
            return Err(Error::Numerical(
                "singular first-passage system; generator construction bug".into(),
            ));
        }
        if pivot_row != col {
            for j in 0..w {
                a.swap(col * w + j, pivot_row * w + j);
            }
        }
        let pivot = a[col * w + col];
        for row in (col + 1)..m {
            let factor = a[row * w + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..w {
                a[row * w + j] -= factor * a[col * w + j];
            }
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let mut acc = a[row * w + m];
        for j in (row + 1)..m {
            acc -= a[row * w + j] * x[j];
        }
        x[row] = acc / a[row * w + row];
    }
    Ok(x)
}

/// Parameters of the time-changed Kingman coalescent.
#[derive(Debug, Clone)]
pub struct KingmanParams {
    pub n: u32,
    /// Landscape-acceleration limit ratio; `f64::INFINITY` is the exact
    /// predominant-fusion limit, not a large stand-in float.
    pub p: f64,
    pub alpha: f64,
    /// Presence fraction `p^(1/alpha) / (1 + p^(1/alpha))`.
    pub q_frac: f64,
    /// Coalescence rates `c_2 ..= c_n`.
    pub c: Vec<f64>,
}

impl KingmanParams {
    /// Rate `c_l` for level `l` (`2 <= l <= n`).
    pub fn rate(&self, l: u32) -> f64 {
        self.c[(l - 2) as usize]
    }
}

/// Level-`l` coalescence rate by direct summation of the binomial average
/// `sum_j j(j-1) C(l,j) q^j (1-q)^(l-j)`.
pub fn kingman_rate_sum(l: u32, q: f64) -> f64 {
    let lf = l as f64;
    let mut binom = 1.0f64; // C(l, j) built multiplicatively
    let mut rate = 0.0;
    for j in 1..=l {
        binom = binom * (lf - j as f64 + 1.0) / j as f64;
        rate += (j as f64) * (j as f64 - 1.0) * binom * q.powi(j as i32)
            * (1.0 - q).powi((l - j) as i32);
    }
    rate
}

/// Coalescence rates of the time-changed Kingman coalescent.
///
/// `p = 0` freezes the chain (all rates zero); `p = infinity` recovers the
/// standard Kingman rates `l(l-1)` exactly.
pub fn kingman_rates(n: u32, p: f64, alpha: f64) -> Result<KingmanParams> {
    if n == 0 {
        return Err(Error::InvalidParams("sample size n must be >= 1".into()));
    }
    if p.is_nan() || p < 0.0 {
        return Err(Error::InvalidParams(format!(
            "p must lie in [0, +inf], got {p}"
        )));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidParams(format!("alpha must be >= 1, got {alpha}")));
    }
    let q_frac = if p.is_infinite() {
        1.0
    } else if p == 0.0 {
        0.0
    } else {
        let s = pow_real(p, 1.0 / alpha);
        s / (1.0 + s)
    };
    let mut c = Vec::with_capacity(n.saturating_sub(1) as usize);
    for l in 2..=n {
        let rate = if p.is_infinite() {
            (l * (l - 1)) as f64
        } else {
            kingman_rate_sum(l, q_frac)
        };
        c.push(rate);
    }
    debug_assert!(c.windows(2).all(|w| w[1] >= w[0]), "c_l must be monotone");
    Ok(KingmanParams {
        n,
        p,
        alpha,
        q_frac,
        c,
    })
}

/// Draw the inter-coalescence times `tau_1, ..., tau_(n-1)` of the
/// time-changed Kingman coalescent; `tau_j ~ Exp(c_(n-j+1))`.
pub fn simulate_kingman(kp: &KingmanParams, rng: &mut Rng) -> Result<Vec<f64>> {
    if kp.n <= 1 {
        return Ok(Vec::new());
    }
    if kp.p == 0.0 {
        return Err(Error::InvalidParams(
            "p = 0 gives zero coalescence rates; the chain is constant".into(),
        ));
    }
    let mut taus = Vec::with_capacity((kp.n - 1) as usize);
    for level in (2..=kp.n).rev() {
        taus.push(rng.exponential(kp.rate(level)));
    }
    Ok(taus)
}

/// Transition probabilities of the single-lineage (inner/outer) marginal:
/// a two-state chain with inner -> outer rate `a = theta` and outer ->
/// inner rate `b = theta * (gamma/theta)^(1/alpha)`. Row `i`, column `j`
/// is `P(state(t) = j | state(0) = i)` with 0 = inner, 1 = outer.
pub fn two_state_closed_form(theta: f64, gamma: f64, alpha: f64, t: f64) -> [[f64; 2]; 2] {
    debug_assert!(t >= 0.0);
    let a = theta;
    let b = theta * pow_real(gamma / theta, 1.0 / alpha);
    let decay = (-(a + b) * t).exp();
    let p00 = b / (a + b) + a / (a + b) * decay;
    let p11 = a / (a + b) + b / (a + b) * decay;
    [[p00, 1.0 - p00], [1.0 - p11, p11]]
}
