//! Exact simulation of the backward ancestral chain of a finite sample.
//!
//! The state is an occupancy vector `(x0, x1, ..., xn)` plus the colony
//! count `k`: `x0` counts lineages in the main population, `xj` counts
//! colonies currently containing `j` sampled lineages. Walking backward,
//! seven event families act on the state:
//!
//! - within-colony pair coalescence, rate `xj * C(j,2) * 2/(eps*N - 1)`;
//! - main-population pair coalescence, rate `C(x0,2) * 2/(N - 1)`;
//! - exit of `r` of the `x0` inner lineages into a freshly founded colony
//!   (a fusion crossed backward), binomial over `r` with success
//!   probability `eps/(1+eps)`, total weight `N * theta_N`;
//! - entry of a `j`-lineage colony back into the main population (a
//!   fission crossed backward), the `j` lineages merging into one that
//!   either is a new inner lineage or coalesces with its sampled ancestor;
//! - silent colony birth/death moving `k` without touching lineages.
//!
//! Rates are expressed in the chain's native time; the simulator multiplies
//! every rate by `N`, so all reported times are rescaled (`t -> N t`).

use crate::colony::{stationary_pmf, TruncatedPmf};
use crate::coalescent::CensoredState;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::Rng;

/// Default per-replicate event budget. Silent colony events dominate at
/// rate `O(theta/eps)` per unit rescaled time, so generous headroom is
/// needed for long horizons at small `eps`.
pub const DEFAULT_ANCESTRY_EVENT_CAP: u64 = 100_000_000;

const STATIONARY_RESAMPLE_CAP: u32 = 1_000_000;

/// Occupancy state of the ancestral chain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AncestralState {
    /// `occ[0]` = inner lineages; `occ[j]` = colonies holding `j` lineages.
    pub occ: Vec<u32>,
    /// Total colony count (including colonies with no sampled lineages).
    pub k: u32,
}

impl AncestralState {
    pub fn new(occ: Vec<u32>, k: u32) -> Result<Self> {
        let s = Self { occ, k };
        s.validate()?;
        Ok(s)
    }

    /// Sample size `n` (occupancy vectors have length `n + 1`).
    pub fn n(&self) -> usize {
        self.occ.len() - 1
    }

    /// Total surviving lineages `x0 + sum_j j * xj`.
    pub fn total_lineages(&self) -> u32 {
        self.occ[0]
            + self
                .occ
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, &x)| j as u32 * x)
                .sum::<u32>()
    }

    /// Number of colonies holding at least one sampled lineage.
    pub fn occupied_colonies(&self) -> u32 {
        self.occ.iter().skip(1).sum()
    }

    /// Whether the state is collapsed: no colony holds two or more lineages.
    pub fn in_pi(&self) -> bool {
        self.occ.iter().skip(2).all(|&x| x == 0)
    }

    /// Projection onto (inner count, occupied-colony count).
    pub fn project_bar(&self) -> CensoredState {
        CensoredState::new(self.occ[0], self.occupied_colonies())
    }

    pub fn validate(&self) -> Result<()> {
        if self.occ.is_empty() {
            return Err(Error::InvalidState("occupancy vector is empty".into()));
        }
        let n = self.n() as u32;
        let total = self.total_lineages();
        if total < 1 || total > n {
            return Err(Error::InvalidState(format!(
                "total lineage count {total} outside [1, {n}]"
            )));
        }
        if self.occupied_colonies() > self.k {
            return Err(Error::InvalidState(format!(
                "{} lineage-bearing colonies exceed colony count {}",
                self.occupied_colonies(),
                self.k
            )));
        }
        Ok(())
    }
}

/// Projection `(x0, ..., xn) -> (x0, sum_j xj)`.
pub fn project_bar(occ: &[u32]) -> CensoredState {
    CensoredState::new(occ[0], occ.iter().skip(1).sum())
}

/// The seven event families of the backward chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AncestralEventKind {
    /// Two of `j` lineages in one colony coalesce.
    WithinColonyCoal { j: usize },
    /// Two inner lineages coalesce.
    MainCoal,
    /// `r` inner lineages exit into a newly founded colony.
    Exit { r: usize },
    /// A `j`-lineage colony enters the main population; the merged lineage
    /// does not meet a sampled ancestor.
    EntryNoAncestorCoal { j: usize },
    /// A `j`-lineage colony enters and coalesces with its sampled ancestor.
    EntryWithAncestorCoal { j: usize },
    /// Colony count up, lineages untouched.
    ColonyBirthSilent,
    /// Colony count down, lineages untouched.
    ColonyDeathSilent,
}

impl AncestralEventKind {
    /// Whether the event belongs to the lineage-moving family (coalescence,
    /// exit, entry) as opposed to the silent colony-count family.
    pub fn is_phi_event(&self) -> bool {
        matches!(
            self,
            AncestralEventKind::MainCoal
                | AncestralEventKind::Exit { .. }
                | AncestralEventKind::EntryNoAncestorCoal { .. }
                | AncestralEventKind::EntryWithAncestorCoal { .. }
        )
    }
}

impl std::fmt::Display for AncestralEventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AncestralEventKind::WithinColonyCoal { j } => write!(f, "within_colony_coal({j})"),
            AncestralEventKind::MainCoal => write!(f, "main_coal"),
            AncestralEventKind::Exit { r } => write!(f, "exit({r})"),
            AncestralEventKind::EntryNoAncestorCoal { j } => {
                write!(f, "entry_no_ancestor_coal({j})")
            }
            AncestralEventKind::EntryWithAncestorCoal { j } => {
                write!(f, "entry_with_ancestor_coal({j})")
            }
            AncestralEventKind::ColonyBirthSilent => write!(f, "colony_birth"),
            AncestralEventKind::ColonyDeathSilent => write!(f, "colony_death"),
        }
    }
}

/// A dated event in rescaled time.
#[derive(Debug, Clone, Copy)]
pub struct AncestralEvent {
    pub kind: AncestralEventKind,
    pub time: f64,
}

/// One catalogue row: an event, its native-time rate, and the state it
/// produces.
#[derive(Debug, Clone)]
pub struct CatalogueEntry {
    pub kind: AncestralEventKind,
    pub rate: f64,
    pub successor: AncestralState,
}

/// Exact binomial coefficient in `f64` (small arguments only).
fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Emit `(kind, native rate)` pairs for every event available from `state`.
/// This is the single source of the generator arithmetic; the public
/// catalogue and both simulators all route through it.
fn push_event_rates(
    state: &AncestralState,
    params: &ModelParams,
    out: &mut Vec<(AncestralEventKind, f64)>,
) {
    let n = state.n();
    let en = params.eps_n as f64;
    let n_f = params.n_big as f64;
    let x0 = state.occ[0] as u64;
    let x0_f = x0 as f64;

    // (a) coalescence inside a colony holding j >= 2 lineages
    for j in 2..=n {
        if state.occ[j] > 0 {
            let rate = state.occ[j] as f64 * binom(j as u64, 2) * 2.0 / (en - 1.0);
            out.push((AncestralEventKind::WithinColonyCoal { j }, rate));
        }
    }

    // (b) coalescence in the main population (needs a pair)
    if x0 >= 2 {
        out.push((
            AncestralEventKind::MainCoal,
            binom(x0, 2) * 2.0 / (n_f - 1.0),
        ));
    }

    // (c) exit of r of the x0 inner lineages at a backward fusion
    let p_exit = params.eps / (1.0 + params.eps);
    let p_stay = 1.0 / (1.0 + params.eps);
    for r in 1..=x0 {
        let rate = n_f
            * params.theta_n
            * binom(x0, r)
            * p_exit.powi(r as i32)
            * p_stay.powi((x0 - r) as i32);
        out.push((AncestralEventKind::Exit { r: r as usize }, rate));
    }

    if state.k > 0 {
        let k_f = state.k as f64;
        let k_alpha = params.pow_alpha(k_f);
        let fusion = params.gamma_n * k_alpha;

        // (d), (e) entry of a j-lineage colony at a backward fission; the
        // ancestor-coalescence branch needs a sampled inner ancestor.
        for j in 1..=n {
            if state.occ[j] > 0 {
                let pick = state.occ[j] as f64 / k_f;
                out.push((
                    AncestralEventKind::EntryNoAncestorCoal { j },
                    fusion * pick * (1.0 - x0_f / n_f),
                ));
                if x0 >= 1 {
                    out.push((
                        AncestralEventKind::EntryWithAncestorCoal { j },
                        fusion * pick * (x0_f / n_f),
                    ));
                }
            }
        }

        // (g) silent colony death
        let occupied = state.occupied_colonies();
        if state.k > occupied {
            out.push((
                AncestralEventKind::ColonyDeathSilent,
                fusion * (1.0 - occupied as f64 / k_f),
            ));
        }
    }

    // (f) silent colony birth
    out.push((
        AncestralEventKind::ColonyBirthSilent,
        n_f * params.theta_n * p_stay.powi(x0 as i32),
    ));
}

/// Apply an event's transition to the state in place.
pub fn apply_event(state: &mut AncestralState, kind: AncestralEventKind) {
    match kind {
        AncestralEventKind::WithinColonyCoal { j } => {
            state.occ[j] -= 1;
            state.occ[j - 1] += 1;
        }
        AncestralEventKind::MainCoal => {
            state.occ[0] -= 1;
        }
        AncestralEventKind::Exit { r } => {
            state.occ[0] -= r as u32;
            state.occ[r] += 1;
            state.k += 1;
        }
        AncestralEventKind::EntryNoAncestorCoal { j } => {
            state.occ[j] -= 1;
            state.occ[0] += 1;
            state.k -= 1;
        }
        AncestralEventKind::EntryWithAncestorCoal { j } => {
            state.occ[j] -= 1;
            state.k -= 1;
        }
        AncestralEventKind::ColonyBirthSilent => {
            state.k += 1;
        }
        AncestralEventKind::ColonyDeathSilent => {
            state.k -= 1;
        }
    }
}

/// Full event catalogue from a state: kinds, native-time rates, successors.
pub fn event_catalogue(
    state: &AncestralState,
    params: &ModelParams,
) -> Result<Vec<CatalogueEntry>> {
    state.validate()?;
    let mut pairs = Vec::new();
    push_event_rates(state, params, &mut pairs);
    Ok(pairs
        .into_iter()
        .map(|(kind, rate)| {
            let mut successor = state.clone();
            apply_event(&mut successor, kind);
            debug_assert!(successor.validate().is_ok());
            CatalogueEntry {
                kind,
                rate,
                successor,
            }
        })
        .collect())
}

/// How to initialize the colony count.
#[derive(Debug, Clone, Copy)]
pub enum ColonyInit {
    /// Draw from the stationary law conditioned on `k >=` occupied colonies.
    Stationary,
    /// Start from a fixed count (must cover the occupied colonies).
    Fixed(u32),
}

/// Simulation knobs beyond the spec-level arguments.
#[derive(Debug, Clone, Copy)]
pub struct AncestryOptions {
    pub colony_init: ColonyInit,
    pub event_cap: u64,
    /// Stop at the coalescence that leaves a single lineage. When false the
    /// surviving lineage keeps switching between inner and outer up to the
    /// horizon, which is what marginal-law comparisons need.
    pub stop_at_mrca: bool,
}

impl Default for AncestryOptions {
    fn default() -> Self {
        Self {
            colony_init: ColonyInit::Stationary,
            event_cap: DEFAULT_ANCESTRY_EVENT_CAP,
            stop_at_mrca: true,
        }
    }
}

/// Draw a stationary colony count conditioned on `k >= min_k` by rejection.
pub fn sample_conditioned_k(pmf: &TruncatedPmf, min_k: u32, rng: &mut Rng) -> Result<u32> {
    for _ in 0..STATIONARY_RESAMPLE_CAP {
        let k = pmf.sample(rng) as u32;
        if k >= min_k {
            return Ok(k);
        }
    }
    Err(Error::InvalidParams(format!(
        "stationary colony law puts almost no mass on k >= {min_k}; cannot condition"
    )))
}

fn resolve_initial_state(
    params: &ModelParams,
    initial_occ: &[u32],
    colony_init: ColonyInit,
    rng: &mut Rng,
) -> Result<AncestralState> {
    let occupied: u32 = initial_occ.iter().skip(1).sum();
    let k = match colony_init {
        ColonyInit::Fixed(k) => {
            if k < occupied {
                return Err(Error::InvalidParams(format!(
                    "fixed colony count {k} below the {occupied} occupied colonies"
                )));
            }
            k
        }
        ColonyInit::Stationary => {
            let pmf = stationary_pmf(params, 1e-10)?;
            sample_conditioned_k(&pmf, occupied, rng)?
        }
    };
    AncestralState::new(initial_occ.to_vec(), k)
}

/// A realized backward path in rescaled time.
#[derive(Debug, Clone)]
pub struct AncestralPath {
    pub initial: AncestralState,
    pub events: Vec<AncestralEvent>,
    /// `states[i]` is the state right after `events[i]`.
    pub states: Vec<AncestralState>,
    pub horizon: f64,
}

impl AncestralPath {
    /// State at rescaled time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &AncestralState {
        match self.events.partition_point(|e| e.time <= t) {
            0 => &self.initial,
            i => &self.states[i - 1],
        }
    }

    /// CSV dump: `time,event_kind,x0,...,xn,k` with an `initial` row.
    pub fn to_csv(&self) -> String {
        let n = self.initial.n();
        let mut out = String::from("time,event_kind");
        for j in 0..=n {
            out.push_str(&format!(",x{j}"));
        }
        out.push_str(",k\n");
        let write_state = |out: &mut String, time: f64, kind: &str, s: &AncestralState| {
            out.push_str(&format!("{time},{kind}"));
            for &x in &s.occ {
                out.push_str(&format!(",{x}"));
            }
            out.push_str(&format!(",{}\n", s.k));
        };
        write_state(&mut out, 0.0, "initial", &self.initial);
        for (e, s) in self.events.iter().zip(self.states.iter()) {
            write_state(&mut out, e.time, &e.kind.to_string(), s);
        }
        out
    }
}

/// Outcome of [`collapse_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CollapseTime {
    /// First rescaled time the state had no colony with two or more
    /// lineages; zero when the initial state already qualifies.
    At(f64),
    /// The path never collapsed before its horizon.
    Censored,
}

/// First rescaled time the path enters the collapsed set.
pub fn collapse_time(path: &AncestralPath) -> CollapseTime {
    if path.initial.in_pi() {
        return CollapseTime::At(0.0);
    }
    for (e, s) in path.events.iter().zip(path.states.iter()) {
        if s.in_pi() {
            return CollapseTime::At(e.time);
        }
    }
    CollapseTime::Censored
}

/// Rescaled time of the first lineage-moving event, if any occurred.
pub fn first_phi_event_time(path: &AncestralPath) -> Option<f64> {
    path.events
        .iter()
        .find(|e| e.kind.is_phi_event())
        .map(|e| e.time)
}

/// Exact event-driven simulation of the backward chain up to
/// `horizon_rescaled`, stopping early at the coalescence that leaves a
/// single lineage.
pub fn simulate_ancestry(
    params: &ModelParams,
    initial_occ: &[u32],
    horizon_rescaled: f64,
    rng: &mut Rng,
    colony_init: ColonyInit,
) -> Result<AncestralPath> {
    simulate_ancestry_with(
        params,
        initial_occ,
        horizon_rescaled,
        rng,
        &AncestryOptions {
            colony_init,
            ..AncestryOptions::default()
        },
    )
}

/// As [`simulate_ancestry`] with explicit options.
pub fn simulate_ancestry_with(
    params: &ModelParams,
    initial_occ: &[u32],
    horizon_rescaled: f64,
    rng: &mut Rng,
    options: &AncestryOptions,
) -> Result<AncestralPath> {
    if !(horizon_rescaled > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be positive, got {horizon_rescaled}"
        )));
    }
    let initial = resolve_initial_state(params, initial_occ, options.colony_init, rng)?;
    let mut events = Vec::new();
    let mut states = Vec::new();
    let mut state = initial.clone();
    let n_f = params.n_big as f64;
    let mut buf = Vec::with_capacity(4 * state.n() + 4);
    let mut t = 0.0;
    let mut n_events = 0u64;
    loop {
        buf.clear();
        push_event_rates(&state, params, &mut buf);
        let total: f64 = buf.iter().map(|&(_, r)| r).sum();
        if total <= 0.0 {
            break;
        }
        t += rng.exponential(total * n_f);
        if t > horizon_rescaled {
            break;
        }
        n_events += 1;
        if n_events > options.event_cap {
            return Err(Error::EventCapExceeded { events: n_events });
        }
        let kind = pick_event(&buf, total, rng);
        let was_multi = state.total_lineages() > 1;
        apply_event(&mut state, kind);
        events.push(AncestralEvent { kind, time: t });
        states.push(state.clone());
        if options.stop_at_mrca && was_multi && state.total_lineages() == 1 {
            break;
        }
    }
    Ok(AncestralPath {
        initial,
        events,
        states,
        horizon: horizon_rescaled,
    })
}

#[inline]
fn pick_event(
    buf: &[(AncestralEventKind, f64)],
    total: f64,
    rng: &mut Rng,
) -> AncestralEventKind {
    let mut u = rng.uniform() * total;
    for &(kind, rate) in buf {
        if u < rate {
            return kind;
        }
        u -= rate;
    }
    buf[buf.len() - 1].0
}

/// Simulate and snapshot the state at each of the given rescaled times
/// (sorted ascending) without materializing the whole path.
pub fn ancestry_states_at(
    params: &ModelParams,
    initial_occ: &[u32],
    times: &[f64],
    rng: &mut Rng,
    options: &AncestryOptions,
) -> Result<Vec<AncestralState>> {
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParams(
            "snapshot times must be sorted ascending".into(),
        ));
    }
    if times.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidParams("snapshot times must be >= 0".into()));
    }
    let mut state = resolve_initial_state(params, initial_occ, options.colony_init, rng)?;
    let mut out = Vec::with_capacity(times.len());
    if times.is_empty() {
        return Ok(out);
    }
    let n_f = params.n_big as f64;
    let mut buf = Vec::with_capacity(4 * state.n() + 4);
    let mut t = 0.0;
    let mut idx = 0;
    let mut n_events = 0u64;
    let mut frozen = false;
    while idx < times.len() {
        let t_next = if frozen {
            f64::INFINITY
        } else {
            buf.clear();
            push_event_rates(&state, params, &mut buf);
            let total: f64 = buf.iter().map(|&(_, r)| r).sum();
            if total <= 0.0 {
                f64::INFINITY
            } else {
                t + rng.exponential(total * n_f)
            }
        };
        while idx < times.len() && times[idx] < t_next {
            out.push(state.clone());
            idx += 1;
        }
        if idx >= times.len() || t_next.is_infinite() {
            break;
        }
        t = t_next;
        n_events += 1;
        if n_events > options.event_cap {
            return Err(Error::EventCapExceeded { events: n_events });
        }
        let total: f64 = buf.iter().map(|&(_, r)| r).sum();
        let kind = pick_event(&buf, total, rng);
        let was_multi = state.total_lineages() > 1;
        apply_event(&mut state, kind);
        if options.stop_at_mrca && was_multi && state.total_lineages() == 1 {
            frozen = true;
        }
    }
    while out.len() < times.len() {
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_small() -> ModelParams {
        ModelParams::new(100, 0.1, 1.0, 1.0, 1.0).unwrap()
    }

    fn find_rate(cat: &[CatalogueEntry], kind: AncestralEventKind) -> f64 {
        cat.iter()
            .find(|e| e.kind == kind)
            .map(|e| e.rate)
            .unwrap_or_else(|| panic!("missing catalogue entry {kind}"))
    }

    #[test]
    fn single_colony_pair_catalogue() {
        // occ = e2 with one colony: the only coalescence is within-colony
        // at rate 2/(eps N - 1), successor e1.
        let p = params_small();
        let state = AncestralState::new(vec![0, 0, 1], 1).unwrap();
        let cat = event_catalogue(&state, &p).unwrap();
        let rate = find_rate(&cat, AncestralEventKind::WithinColonyCoal { j: 2 });
        assert!((rate - 2.0 / 9.0).abs() < 1e-15);
        let entry = cat
            .iter()
            .find(|e| e.kind == AncestralEventKind::WithinColonyCoal { j: 2 })
            .unwrap();
        assert_eq!(entry.successor.occ, vec![0, 1, 0]);
        assert_eq!(entry.successor.k, 1);
    }

    #[test]
    fn lone_inner_lineage_cannot_coalesce() {
        // C(1,2) = 0: no main-population coalescence is available.
        let p = params_small();
        let state = AncestralState::new(vec![1, 0, 0], 0).unwrap();
        let cat = event_catalogue(&state, &p).unwrap();
        assert!(cat
            .iter()
            .all(|e| e.kind != AncestralEventKind::MainCoal));
    }

    #[test]
    fn catalogue_matches_hand_computed_table() {
        // State (x0=2, x1=1), k=3, N=100, eps=0.1, theta=gamma=alpha=1.
        // Rates computed by hand from the generator before the build:
        //   main coal        C(2,2)*2/99            = 2/99
        //   exit(1)          0.1*2*(1/11)*(10/11)   = 2/121
        //   exit(2)          0.1*1*(1/11)^2         = 1/1210
        //   entry no coal    0.01*3*(1/3)*0.98      = 0.0098
        //   entry with coal  0.01*3*(1/3)*0.02      = 0.0002
        //   silent birth     0.1*(10/11)^2          = 10/121
        //   silent death     0.01*3*(2/3)           = 0.02
        let p = params_small();
        let state = AncestralState::new(vec![2, 1, 0, 0], 3).unwrap();
        let cat = event_catalogue(&state, &p).unwrap();
        assert_eq!(cat.len(), 7);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(find_rate(&cat, AncestralEventKind::MainCoal), 2.0 / 99.0));
        assert!(close(find_rate(&cat, AncestralEventKind::Exit { r: 1 }), 2.0 / 121.0));
        assert!(close(find_rate(&cat, AncestralEventKind::Exit { r: 2 }), 1.0 / 1210.0));
        assert!(close(
            find_rate(&cat, AncestralEventKind::EntryNoAncestorCoal { j: 1 }),
            0.0098
        ));
        assert!(close(
            find_rate(&cat, AncestralEventKind::EntryWithAncestorCoal { j: 1 }),
            0.0002
        ));
        assert!(close(
            find_rate(&cat, AncestralEventKind::ColonyBirthSilent),
            10.0 / 121.0
        ));
        assert!(close(find_rate(&cat, AncestralEventKind::ColonyDeathSilent), 0.02));

        let succ = |kind| {
            cat.iter()
                .find(|e| e.kind == kind)
                .map(|e| (e.successor.occ.clone(), e.successor.k))
                .unwrap()
        };
        assert_eq!(succ(AncestralEventKind::MainCoal), (vec![1, 1, 0, 0], 3));
        assert_eq!(succ(AncestralEventKind::Exit { r: 1 }), (vec![1, 2, 0, 0], 4));
        assert_eq!(succ(AncestralEventKind::Exit { r: 2 }), (vec![0, 1, 1, 0], 4));
        assert_eq!(
            succ(AncestralEventKind::EntryNoAncestorCoal { j: 1 }),
            (vec![3, 0, 0, 0], 2)
        );
        assert_eq!(
            succ(AncestralEventKind::EntryWithAncestorCoal { j: 1 }),
            (vec![2, 0, 0, 0], 2)
        );
        assert_eq!(succ(AncestralEventKind::ColonyBirthSilent), (vec![2, 1, 0, 0], 4));
        assert_eq!(succ(AncestralEventKind::ColonyDeathSilent), (vec![2, 1, 0, 0], 2));
    }

    #[test]
    fn invalid_states_rejected() {
        assert!(AncestralState::new(vec![0, 0, 0], 0).is_err());
        assert!(AncestralState::new(vec![2, 1, 0], 0).is_err()); // colonies > k
        assert!(AncestralState::new(vec![3, 1, 0], 1).is_err()); // total 4 > n=2
    }

    fn random_valid_state(rng: &mut Rng) -> (AncestralState, ModelParams) {
        let n = 1 + rng.index(8);
        let total = 1 + rng.index(n);
        let mut occ = vec![0u32; n + 1];
        let x0 = rng.index(total + 1);
        occ[0] = x0 as u32;
        let mut rest = total - x0;
        while rest > 0 {
            let j = 1 + rng.index(rest);
            occ[j] += 1;
            rest -= j;
        }
        let occupied: u32 = occ.iter().skip(1).sum();
        let k = occupied + rng.below(30) as u32;
        let n_big = 50 + rng.below(1000);
        let eps_n = 2 + rng.below(20);
        let eps_n = eps_n.min(n_big / 2).max(2);
        let theta = 0.1 + rng.uniform() * 5.0;
        let gamma = 0.1 + rng.uniform() * 5.0;
        let alpha = [1.0, 1.0, 1.5, 2.0, 2.7][rng.index(5)];
        let params = ModelParams::with_colony_size(n_big, eps_n, theta, gamma, alpha).unwrap();
        (AncestralState::new(occ, k).unwrap(), params)
    }

    #[test]
    fn catalogue_total_rate_identity() {
        // The family totals telescope: fission events contribute exactly
        // N*theta_N and fusion events exactly gamma_N*k^alpha, so the grand
        // total has a closed form independent of how exits and entries are
        // split. A missing or doubled term breaks this.
        let mut rng = Rng::new(616);
        for _ in 0..2000 {
            let (state, params) = random_valid_state(&mut rng);
            let cat = event_catalogue(&state, &params).unwrap();
            let total: f64 = cat.iter().map(|e| e.rate).sum();
            let en = params.eps_n as f64;
            let n_f = params.n_big as f64;
            let psi: f64 = state
                .occ
                .iter()
                .enumerate()
                .skip(2)
                .map(|(j, &x)| x as f64 * binom(j as u64, 2) * 2.0 / (en - 1.0))
                .sum();
            let mut expect = psi
                + binom(state.occ[0] as u64, 2) * 2.0 / (n_f - 1.0)
                + n_f * params.theta_n;
            if state.k > 0 {
                expect += params.gamma_n * params.pow_alpha(state.k as f64);
            }
            assert!(
                (total - expect).abs() <= 1e-12 * expect.max(1.0),
                "total {total} vs {expect} at {state:?}"
            );
        }
    }

    #[test]
    fn events_preserve_invariants_and_counts() {
        let mut rng = Rng::new(4242);
        for _ in 0..2000 {
            let (state, params) = random_valid_state(&mut rng);
            let total_before = state.total_lineages();
            let k_before = state.k;
            for entry in event_catalogue(&state, &params).unwrap() {
                assert!(entry.rate >= 0.0);
                entry.successor.validate().unwrap();
                let total_after = entry.successor.total_lineages();
                let expected_drop: i64 = match entry.kind {
                    AncestralEventKind::MainCoal
                    | AncestralEventKind::WithinColonyCoal { .. } => 1,
                    AncestralEventKind::EntryWithAncestorCoal { j } => j as i64,
                    AncestralEventKind::EntryNoAncestorCoal { j } => j as i64 - 1,
                    _ => 0,
                };
                assert_eq!(
                    total_before as i64 - total_after as i64,
                    expected_drop,
                    "wrong lineage change for {}",
                    entry.kind
                );
                let dk = entry.successor.k as i64 - k_before as i64;
                match entry.kind {
                    AncestralEventKind::Exit { .. } | AncestralEventKind::ColonyBirthSilent => {
                        assert_eq!(dk, 1)
                    }
                    AncestralEventKind::EntryNoAncestorCoal { .. }
                    | AncestralEventKind::EntryWithAncestorCoal { .. }
                    | AncestralEventKind::ColonyDeathSilent => assert_eq!(dk, -1),
                    _ => assert_eq!(dk, 0),
                }
                assert!(entry.successor.occupied_colonies() <= entry.successor.k);
            }
        }
    }

    #[test]
    fn single_lineage_is_two_state_chain() {
        // n = 1: the total count stays 1 and the lineage hops between the
        // main population and colonies.
        let p = params_small();
        let mut rng = Rng::new(9);
        let path =
            simulate_ancestry(&p, &[1, 0], 5.0, &mut rng, ColonyInit::Stationary).unwrap();
        assert!(!path.events.is_empty());
        let mut seen_outer = false;
        for (e, s) in path.events.iter().zip(path.states.iter()) {
            assert_eq!(s.total_lineages(), 1);
            assert!(
                !matches!(
                    e.kind,
                    AncestralEventKind::MainCoal | AncestralEventKind::WithinColonyCoal { .. }
                ),
                "no coalescence is possible with one lineage"
            );
            if s.occ[1] == 1 {
                seen_outer = true;
            }
        }
        assert!(seen_outer, "the lineage should visit a colony by t = 5");
    }

    #[test]
    fn lineage_count_non_increasing_along_paths() {
        let p = params_small();
        for rep in 0..50 {
            let mut rng = Rng::for_replicate(5, rep);
            let path =
                simulate_ancestry(&p, &[4, 0, 0, 0, 0], 2.0, &mut rng, ColonyInit::Stationary)
                    .unwrap();
            let mut prev = path.initial.total_lineages();
            for s in &path.states {
                assert!(s.total_lineages() <= prev);
                prev = s.total_lineages();
            }
        }
    }

    #[test]
    fn first_colony_coalescence_time_scale() {
        // From e2 the within-colony coalescence fires at rescaled rate
        // 2N/(eps N - 1); competing events shift the mean by under 3%.
        let p = ModelParams::with_eps_rule(10_000, 1.0, 1.0, 1.0).unwrap();
        let target = (p.eps_n as f64 - 1.0) / (2.0 * p.n_big as f64);
        let reps = 20_000u64;
        let mut sum = 0.0;
        let mut count = 0u64;
        for i in 0..reps {
            let mut rng = Rng::for_replicate(1212, i);
            let path =
                simulate_ancestry(&p, &[0, 0, 1], 1.0, &mut rng, ColonyInit::Stationary).unwrap();
            if let Some(e) = path
                .events
                .iter()
                .find(|e| matches!(e.kind, AncestralEventKind::WithinColonyCoal { .. }))
            {
                sum += e.time;
                count += 1;
            }
        }
        assert!(count as f64 > 0.95 * reps as f64);
        let mean = sum / count as f64;
        let se = target / (count as f64).sqrt();
        assert!(
            (mean - target).abs() < 0.05 * target + 4.0 * se,
            "mean {mean} vs {target}"
        );
    }

    #[test]
    fn collapse_time_definitions() {
        let p = params_small();
        let mut rng = Rng::new(31);
        // Initial state already collapsed.
        let path =
            simulate_ancestry(&p, &[2, 1, 0, 0], 1.0, &mut rng, ColonyInit::Stationary).unwrap();
        assert_eq!(collapse_time(&path), CollapseTime::At(0.0));
        // From e2 the collapse is the first within-colony coalescence.
        for rep in 0..100 {
            let mut rng = Rng::for_replicate(77, rep);
            let path =
                simulate_ancestry(&p, &[0, 0, 1], 50.0, &mut rng, ColonyInit::Stationary).unwrap();
            match collapse_time(&path) {
                CollapseTime::At(t) => {
                    let first_shrink = path
                        .events
                        .iter()
                        .find(|e| {
                            matches!(
                                e.kind,
                                AncestralEventKind::WithinColonyCoal { .. }
                                    | AncestralEventKind::EntryNoAncestorCoal { j: 2 }
                                    | AncestralEventKind::EntryWithAncestorCoal { j: 2 }
                            )
                        })
                        .expect("collapse implies a colony-resolving event");
                    assert_eq!(t, first_shrink.time);
                }
                CollapseTime::Censored => panic!("collapse should occur well before t = 50"),
            }
        }
    }

    #[test]
    fn project_bar_examples() {
        assert_eq!(project_bar(&[2, 1, 1, 0, 0, 0]), CensoredState::new(2, 2));
        assert_eq!(project_bar(&[4, 0, 0, 0, 0]), CensoredState::new(4, 0));
        let s = AncestralState::new(vec![1, 2, 0, 0], 5).unwrap();
        assert_eq!(s.project_bar(), CensoredState::new(1, 2));
    }

    #[test]
    fn snapshots_match_full_path() {
        let p = params_small();
        let times = [0.0, 0.3, 0.9, 1.7];
        for rep in 0..200 {
            let opts = AncestryOptions::default();
            let mut rng1 = Rng::for_replicate(88, rep);
            let path = simulate_ancestry_with(&p, &[3, 0, 0, 0], 2.0, &mut rng1, &opts).unwrap();
            let mut rng2 = Rng::for_replicate(88, rep);
            let snaps = ancestry_states_at(&p, &[3, 0, 0, 0], &times, &mut rng2, &opts).unwrap();
            for (t, s) in times.iter().zip(snaps.iter()) {
                assert_eq!(path.state_at(*t), s, "mismatch at t = {t} rep {rep}");
            }
        }
    }

    #[test]
    fn fixed_colony_init_must_cover_occupied() {
        let p = params_small();
        let mut rng = Rng::new(1);
        assert!(
            simulate_ancestry(&p, &[0, 1, 1, 0], 1.0, &mut rng, ColonyInit::Fixed(1)).is_err()
        );
        assert!(
            simulate_ancestry(&p, &[0, 1, 1, 0], 1.0, &mut rng, ColonyInit::Fixed(2)).is_ok()
        );
    }

    #[test]
    fn event_cap_enforced() {
        let p = params_small();
        let mut rng = Rng::new(1);
        let opts = AncestryOptions {
            event_cap: 10,
            ..AncestryOptions::default()
        };
        let err = simulate_ancestry_with(&p, &[1, 0], 1e6, &mut rng, &opts).unwrap_err();
        assert!(matches!(err, Error::EventCapExceeded { .. }));
    }

    #[test]
    fn empty_snapshot_list_is_empty_report() {
        let p = params_small();
        let mut rng = Rng::new(1);
        let snaps =
            ancestry_states_at(&p, &[2, 0, 0], &[], &mut rng, &AncestryOptions::default())
                .unwrap();
        assert!(snaps.is_empty());
    }

    #[test]
    fn path_csv_has_pinned_columns() {
        let p = params_small();
        let mut rng = Rng::new(2);
        let path =
            simulate_ancestry(&p, &[2, 0, 0], 0.5, &mut rng, ColonyInit::Stationary).unwrap();
        let csv = path.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "time,event_kind,x0,x1,x2,k");
        assert!(lines.next().unwrap().starts_with("0,initial,2,0,0,"));
    }
}
