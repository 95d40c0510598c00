//! Small-scale individual-based forward simulator with full event logging
//! and backward ancestry extraction.
//!
//! The world holds a main population of exactly `N` individuals and a
//! fluctuating set of colonies of exactly `eps * N` individuals each.
//! Within each subpopulation every individual reproduces at rate 1 and the
//! offspring replaces a uniformly chosen other member (so a tracked pair
//! coalesces backward at rate `2/(size-1)`). Fissions found a colony of
//! `eps * N` fresh offspring of one uniformly chosen founder; fusions pour
//! a uniformly chosen colony back into the main population and then cull
//! uniformly back down to `N`.
//!
//! This simulator is an oracle for the backward ancestral chain, not a
//! production path, so hard caps keep it at small sizes.

use crate::ancestral::AncestralState;
use crate::colony::stationary_pmf;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::Rng;

/// Caps enforcing oracle-scale worlds.
pub const FORWARD_MAIN_CAP: u64 = 500;
pub const FORWARD_COLONY_CAP: u64 = 25;

/// Default burn-in length in time units, as a multiple of `N`.
pub const DEFAULT_BURN_IN_FACTOR: f64 = 5.0;

const FORWARD_EVENT_CAP: u64 = 4_000_000_000;

/// A colony and its members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colony {
    pub id: u64,
    pub members: Vec<u64>,
}

/// Full individual-level world state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub main: Vec<u64>,
    pub colonies: Vec<Colony>,
    pub clock: f64,
    pub next_individual: u64,
    pub next_colony: u64,
}

impl WorldState {
    pub fn colony_count(&self) -> usize {
        self.colonies.len()
    }

    /// Where an individual currently lives.
    pub fn locate(&self, id: u64) -> Option<Location> {
        if self.main.contains(&id) {
            return Some(Location::Main);
        }
        self.colonies
            .iter()
            .find(|c| c.members.contains(&id))
            .map(|c| Location::Colony(c.id))
    }

    /// Check size conservation and id uniqueness.
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.main.len() as u64 != params.n_big {
            return Err(Error::InvalidState(format!(
                "main population has {} members, expected {}",
                self.main.len(),
                params.n_big
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &id in self.main.iter().chain(self.colonies.iter().flat_map(|c| &c.members)) {
            if !seen.insert(id) {
                return Err(Error::InvalidState(format!("duplicate individual id {id}")));
            }
        }
        for c in &self.colonies {
            if c.members.len() as u64 != params.eps_n {
                return Err(Error::InvalidState(format!(
                    "colony {} has {} members, expected {}",
                    c.id,
                    c.members.len(),
                    params.eps_n
                )));
            }
        }
        Ok(())
    }
}

/// Subpopulation tag used by ancestry extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Main,
    Colony(u64),
}

/// One logged forward event. Payloads carry everything replay and backward
/// extraction need: parentage and exact kill lists.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardEventKind {
    MoranMain {
        parent: u64,
        child: u64,
        victim: u64,
    },
    MoranColony {
        colony: u64,
        parent: u64,
        child: u64,
        victim: u64,
    },
    Fission {
        founder: u64,
        colony: u64,
        offspring: Vec<u64>,
    },
    Fusion {
        colony: u64,
        members: Vec<u64>,
        killed: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEvent {
    pub time: f64,
    pub kind: ForwardEventKind,
}

impl ForwardEvent {
    /// Line rendering: `time kind payload-ids`, fields space-separated in a
    /// fixed order per kind.
    pub fn to_line(&self) -> String {
        match &self.kind {
            ForwardEventKind::MoranMain {
                parent,
                child,
                victim,
            } => format!("{} moran_main {parent} {child} {victim}", self.time),
            ForwardEventKind::MoranColony {
                colony,
                parent,
                child,
                victim,
            } => format!("{} moran_colony {colony} {parent} {child} {victim}", self.time),
            ForwardEventKind::Fission {
                founder,
                colony,
                offspring,
            } => {
                let ids: Vec<String> = offspring.iter().map(u64::to_string).collect();
                format!("{} fission {founder} {colony} {}", self.time, ids.join(" "))
            }
            ForwardEventKind::Fusion {
                colony,
                members,
                killed,
            } => {
                let m: Vec<String> = members.iter().map(u64::to_string).collect();
                let kl: Vec<String> = killed.iter().map(u64::to_string).collect();
                format!("{} fusion {colony} {} {}", self.time, m.join(" "), kl.join(" "))
            }
        }
    }
}

/// Append-only event log over `[origin, origin + horizon]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardEventLog {
    pub events: Vec<ForwardEvent>,
    pub origin: f64,
    pub horizon: f64,
}

impl ForwardEventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn final_time(&self) -> f64 {
        self.origin + self.horizon
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }
}

fn check_caps(params: &ModelParams) -> Result<()> {
    if params.n_big > FORWARD_MAIN_CAP {
        return Err(Error::InvalidParams(format!(
            "forward simulation is an oracle: N = {} exceeds the cap {FORWARD_MAIN_CAP}",
            params.n_big
        )));
    }
    if params.eps_n > FORWARD_COLONY_CAP {
        return Err(Error::InvalidParams(format!(
            "forward simulation is an oracle: eps*N = {} exceeds the cap {FORWARD_COLONY_CAP}",
            params.eps_n
        )));
    }
    Ok(())
}

/// Build a world with a stationary colony count, evolve it unlogged for
/// `burn_in` time units to relax internal genealogies, and reset the clock
/// to zero. The returned log is the empty log at the origin.
pub fn init_world(
    params: &ModelParams,
    rng: &mut Rng,
    burn_in: f64,
) -> Result<(WorldState, ForwardEventLog)> {
    check_caps(params)?;
    if burn_in < 0.0 {
        return Err(Error::InvalidParams("burn_in must be >= 0".into()));
    }
    let pmf = stationary_pmf(params, 1e-10)?;
    let k0 = pmf.sample(rng);
    let mut next_individual = 0u64;
    let mut fresh = |count: u64| -> Vec<u64> {
        let v: Vec<u64> = (next_individual..next_individual + count).collect();
        next_individual += count;
        v
    };
    let main = fresh(params.n_big);
    let colonies: Vec<Colony> = (0..k0)
        .map(|i| Colony {
            id: i,
            members: fresh(params.eps_n),
        })
        .collect();
    let mut world = WorldState {
        main,
        colonies,
        clock: 0.0,
        next_individual,
        next_colony: k0,
    };
    if burn_in > 0.0 {
        evolve(&mut world, params, burn_in, rng, None)?;
    }
    world.clock = 0.0;
    Ok((world, ForwardEventLog::new()))
}

/// Evolve the world for `horizon` time units, logging every event.
pub fn run_forward(
    world: &mut WorldState,
    params: &ModelParams,
    horizon: f64,
    rng: &mut Rng,
) -> Result<ForwardEventLog> {
    check_caps(params)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let origin = world.clock;
    let mut events = Vec::new();
    evolve(world, params, horizon, rng, Some(&mut events))?;
    Ok(ForwardEventLog {
        events,
        origin,
        horizon,
    })
}

fn evolve(
    world: &mut WorldState,
    params: &ModelParams,
    duration: f64,
    rng: &mut Rng,
    mut log: Option<&mut Vec<ForwardEvent>>,
) -> Result<()> {
    let t_end = world.clock + duration;
    let n_f = params.n_big as f64;
    let eps_n = params.eps_n as usize;
    let fission_rate = n_f * params.theta_n;
    let mut n_events = 0u64;
    loop {
        let k = world.colonies.len();
        let moran_main = n_f;
        let moran_colonies = (k * eps_n) as f64;
        let fusion_rate = if k == 0 {
            0.0
        } else {
            params.gamma_n * params.pow_alpha(k as f64)
        };
        let total = moran_main + moran_colonies + fission_rate + fusion_rate;
        let t_next = world.clock + rng.exponential(total);
        if t_next > t_end {
            world.clock = t_end;
            return Ok(());
        }
        world.clock = t_next;
        n_events += 1;
        if n_events > FORWARD_EVENT_CAP {
            return Err(Error::EventCapExceeded { events: n_events });
        }
        let u = rng.uniform() * total;
        if u < moran_main {
            let (parent, child, victim) = moran_step(&mut world.main, &mut world.next_individual, rng);
            if let Some(events) = log.as_deref_mut() {
                events.push(ForwardEvent {
                    time: t_next,
                    kind: ForwardEventKind::MoranMain {
                        parent,
                        child,
                        victim,
                    },
                });
            }
        } else if u < moran_main + moran_colonies {
            let c_idx = rng.index(k);
            let colony_id = world.colonies[c_idx].id;
            let (parent, child, victim) = moran_step(
                &mut world.colonies[c_idx].members,
                &mut world.next_individual,
                rng,
            );
            if let Some(events) = log.as_deref_mut() {
                events.push(ForwardEvent {
                    time: t_next,
                    kind: ForwardEventKind::MoranColony {
                        colony: colony_id,
                        parent,
                        child,
                        victim,
                    },
                });
            }
        } else if u < moran_main + moran_colonies + fission_rate {
            let founder = world.main[rng.index(world.main.len())];
            let offspring: Vec<u64> = (0..eps_n)
                .map(|_| {
                    let id = world.next_individual;
                    world.next_individual += 1;
                    id
                })
                .collect();
            let colony_id = world.next_colony;
            world.next_colony += 1;
            world.colonies.push(Colony {
                id: colony_id,
                members: offspring.clone(),
            });
            if let Some(events) = log.as_deref_mut() {
                events.push(ForwardEvent {
                    time: t_next,
                    kind: ForwardEventKind::Fission {
                        founder,
                        colony: colony_id,
                        offspring,
                    },
                });
            }
        } else {
            let c_idx = rng.index(k);
            let colony = world.colonies.swap_remove(c_idx);
            world.main.extend_from_slice(&colony.members);
            let killed: Vec<u64> = (0..eps_n)
                .map(|_| {
                    let idx = rng.index(world.main.len());
                    world.main.swap_remove(idx)
                })
                .collect();
            if let Some(events) = log.as_deref_mut() {
                events.push(ForwardEvent {
                    time: t_next,
                    kind: ForwardEventKind::Fusion {
                        colony: colony.id,
                        members: colony.members,
                        killed,
                    },
                });
            }
        }
    }
}

/// One Moran event: a uniform parent births a child that replaces a
/// uniformly chosen member other than the parent.
#[inline]
fn moran_step(members: &mut [u64], next_individual: &mut u64, rng: &mut Rng) -> (u64, u64, u64) {
    let m = members.len();
    let parent_idx = rng.index(m);
    let mut victim_idx = rng.index(m - 1);
    if victim_idx >= parent_idx {
        victim_idx += 1;
    }
    let parent = members[parent_idx];
    let victim = members[victim_idx];
    let child = *next_individual;
    *next_individual += 1;
    members[victim_idx] = child;
    (parent, child, victim)
}

/// Deterministically re-apply a log to a world snapshot.
pub fn replay(initial: &WorldState, log: &ForwardEventLog) -> Result<WorldState> {
    let mut world = initial.clone();
    for event in &log.events {
        match &event.kind {
            ForwardEventKind::MoranMain {
                child,
                victim,
                ..
            } => {
                let idx = world
                    .main
                    .iter()
                    .position(|&x| x == *victim)
                    .ok_or(Error::UnknownId(*victim))?;
                world.main[idx] = *child;
                world.next_individual = world.next_individual.max(child + 1);
            }
            ForwardEventKind::MoranColony {
                colony,
                child,
                victim,
                ..
            } => {
                let c = world
                    .colonies
                    .iter_mut()
                    .find(|c| c.id == *colony)
                    .ok_or(Error::UnknownId(*colony))?;
                let idx = c
                    .members
                    .iter()
                    .position(|&x| x == *victim)
                    .ok_or(Error::UnknownId(*victim))?;
                c.members[idx] = *child;
                world.next_individual = world.next_individual.max(child + 1);
            }
            ForwardEventKind::Fission {
                colony, offspring, ..
            } => {
                world.colonies.push(Colony {
                    id: *colony,
                    members: offspring.clone(),
                });
                world.next_colony = world.next_colony.max(colony + 1);
                if let Some(&last) = offspring.last() {
                    world.next_individual = world.next_individual.max(last + 1);
                }
            }
            ForwardEventKind::Fusion {
                colony,
                members,
                killed,
            } => {
                let idx = world
                    .colonies
                    .iter()
                    .position(|c| c.id == *colony)
                    .ok_or(Error::UnknownId(*colony))?;
                let removed = world.colonies.swap_remove(idx);
                debug_assert_eq!(&removed.members, members);
                world.main.extend_from_slice(members);
                for id in killed {
                    let pos = world
                        .main
                        .iter()
                        .position(|x| x == id)
                        .ok_or(Error::UnknownId(*id))?;
                    world.main.swap_remove(pos);
                }
            }
        }
        world.clock = event.time;
    }
    world.clock = log.final_time();
    Ok(world)
}

/// Walk the log backward from sampled individuals and report the ancestral
/// occupancy `(x0, ..., xn)` plus colony count at each requested look-back
/// time (ascending, within the log span). Lineages merge when they meet
/// their forward parent.
pub fn extract_ancestry(
    log: &ForwardEventLog,
    world_final: &WorldState,
    sample: &[u64],
    times: &[f64],
) -> Result<Vec<AncestralState>> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::InvalidParams("sample must not be empty".into()));
    }
    for w in times.windows(2) {
        if w[0] > w[1] {
            return Err(Error::InvalidParams(
                "look-back times must be sorted ascending".into(),
            ));
        }
    }
    if times.iter().any(|&t| t < 0.0 || t > log.horizon) {
        return Err(Error::InvalidParams(format!(
            "look-back times must lie within the log span [0, {}]",
            log.horizon
        )));
    }
    let mut lineages: Vec<(u64, Location)> = Vec::with_capacity(n);
    for &id in sample {
        if lineages.iter().any(|&(x, _)| x == id) {
            return Err(Error::InvalidParams(format!("duplicate sample id {id}")));
        }
        let loc = world_final.locate(id).ok_or(Error::UnknownId(id))?;
        lineages.push((id, loc));
    }
    let mut k = world_final.colony_count() as u32;
    let t_final = log.final_time();
    let mut out = Vec::with_capacity(times.len());
    let mut idx = 0;

    let snapshot = |lineages: &[(u64, Location)], k: u32| -> Result<AncestralState> {
        let mut occ = vec![0u32; n + 1];
        occ[0] = lineages
            .iter()
            .filter(|&&(_, loc)| loc == Location::Main)
            .count() as u32;
        let mut colony_sizes: Vec<(u64, u32)> = Vec::new();
        for &(_, loc) in lineages {
            if let Location::Colony(cid) = loc {
                match colony_sizes.iter_mut().find(|(c, _)| *c == cid) {
                    Some((_, count)) => *count += 1,
                    None => colony_sizes.push((cid, 1)),
                }
            }
        }
        for &(_, size) in &colony_sizes {
            occ[size as usize] += 1;
        }
        AncestralState::new(occ, k)
    };

    for event in log.events.iter().rev() {
        let lb_event = t_final - event.time;
        while idx < times.len() && times[idx] <= lb_event {
            out.push(snapshot(&lineages, k)?);
            idx += 1;
        }
        if idx >= times.len() {
            break;
        }
        match &event.kind {
            ForwardEventKind::MoranMain { parent, child, .. } => {
                cross_birth(&mut lineages, *child, *parent, Location::Main);
            }
            ForwardEventKind::MoranColony {
                colony,
                parent,
                child,
                ..
            } => {
                cross_birth(&mut lineages, *child, *parent, Location::Colony(*colony));
            }
            ForwardEventKind::Fission {
                founder,
                colony,
                offspring,
            } => {
                // Backward the colony dissolves: every lineage inside it
                // maps to the founder in the main population.
                let before = lineages.len();
                lineages.retain(|&(id, loc)| {
                    if loc == Location::Colony(*colony) {
                        debug_assert!(offspring.contains(&id));
                        false
                    } else {
                        true
                    }
                });
                let dissolved = before - lineages.len();
                if dissolved > 0 && !lineages.iter().any(|&(id, _)| id == *founder) {
                    lineages.push((*founder, Location::Main));
                }
                k -= 1;
            }
            ForwardEventKind::Fusion {
                colony, members, ..
            } => {
                for (id, loc) in lineages.iter_mut() {
                    if *loc == Location::Main && members.contains(id) {
                        *loc = Location::Colony(*colony);
                    }
                }
                k += 1;
            }
        }
    }
    while idx < times.len() {
        out.push(snapshot(&lineages, k)?);
        idx += 1;
    }
    Ok(out)
}

/// Backward crossing of a birth event: the child maps to its parent; if
/// the parent already carries a lineage the two merge.
fn cross_birth(lineages: &mut Vec<(u64, Location)>, child: u64, parent: u64, loc: Location) {
    let Some(pos) = lineages.iter().position(|&(id, _)| id == child) else {
        return;
    };
    debug_assert_eq!(lineages[pos].1, loc);
    if lineages.iter().any(|&(id, _)| id == parent) {
        lineages.swap_remove(pos);
    } else {
        lineages[pos] = (parent, loc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_params() -> ModelParams {
        ModelParams::new(200, 0.1, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn caps_enforced() {
        let p = ModelParams::new(1000, 0.1, 1.0, 1.0, 1.0).unwrap();
        let mut rng = Rng::new(1);
        assert!(init_world(&p, &mut rng, 0.0).is_err());
    }

    #[test]
    fn init_reproducible() {
        let p = oracle_params();
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let (wa, _) = init_world(&p, &mut a, 25.0).unwrap();
        let (wb, _) = init_world(&p, &mut b, 25.0).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn vanishing_theta_gives_empty_landscape() {
        let p = ModelParams::new(200, 0.1, 1e-12, 1.0, 1.0).unwrap();
        let mut rng = Rng::new(7);
        let (w, _) = init_world(&p, &mut rng, 0.0).unwrap();
        assert_eq!(w.colony_count(), 0);
    }

    #[test]
    fn initial_colony_count_mean_matches_stationary() {
        let p = oracle_params();
        let pmf = stationary_pmf(&p, 1e-10).unwrap();
        let reps = 1000u64;
        let mut sum = 0.0;
        for i in 0..reps {
            let mut rng = Rng::for_replicate(1001, i);
            let (w, _) = init_world(&p, &mut rng, 100.0).unwrap();
            sum += w.colony_count() as f64;
        }
        let mean = sum / reps as f64;
        let sd = (0..=pmf.support_max)
            .map(|k| pmf.probs[k] * (k as f64 - pmf.mean()).powi(2))
            .sum::<f64>()
            .sqrt();
        let tol = 3.0 * sd / (reps as f64).sqrt();
        assert!(
            (mean - pmf.mean()).abs() < tol,
            "mean {mean} vs {} (tol {tol})",
            pmf.mean()
        );
    }

    #[test]
    fn tiny_horizon_logs_nothing() {
        let p = oracle_params();
        let mut rng = Rng::new(3);
        let (mut w, _) = init_world(&p, &mut rng, 0.0).unwrap();
        let log = run_forward(&mut w, &p, 1e-12, &mut rng).unwrap();
        assert!(log.events.is_empty());
    }

    #[test]
    fn sizes_conserved_at_every_event_boundary() {
        let p = oracle_params();
        let mut rng = Rng::new(55);
        let (mut w, _) = init_world(&p, &mut rng, 10.0).unwrap();
        let start = w.clone();
        let log = run_forward(&mut w, &p, 20.0, &mut rng).unwrap();
        assert!(log.events.len() > 1000);
        let mut replayed = start;
        for e in &log.events {
            let single = ForwardEventLog {
                events: vec![e.clone()],
                origin: 0.0,
                horizon: 0.0,
            };
            replayed = replay(&replayed, &single).unwrap();
            replayed.validate(&p).unwrap();
            if let ForwardEventKind::Fusion { colony, .. } = &e.kind {
                assert!(
                    replayed.colonies.iter().all(|c| c.id != *colony),
                    "fused colony must be removed"
                );
            }
        }
    }

    #[test]
    fn replay_reproduces_final_world_exactly() {
        let p = oracle_params();
        let mut rng = Rng::new(99);
        let (mut w, _) = init_world(&p, &mut rng, 5.0).unwrap();
        let start = w.clone();
        let log = run_forward(&mut w, &p, 30.0, &mut rng).unwrap();
        let replayed = replay(&start, &log).unwrap();
        assert_eq!(replayed, w);
    }

    #[test]
    fn colony_count_marginal_matches_stationary() {
        // Faster landscape turnover (theta = gamma = 20) keeps lambda = 10
        // while shortening the colony-count correlation time, so a 1e5-unit
        // window pins the marginal well below the 0.05 budget.
        let p = ModelParams::new(200, 0.1, 20.0, 20.0, 1.0).unwrap();
        let pmf = stationary_pmf(&p, 1e-10).unwrap();
        let mut rng = Rng::new(2222);
        let (mut w, _) = init_world(&p, &mut rng, 0.0).unwrap();
        let horizon = 100_000.0;
        let mut k = w.colony_count() as u64;
        let mut t_prev = 0.0;
        let mut occ: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
        let log = run_forward(&mut w, &p, horizon, &mut rng).unwrap();
        for e in &log.events {
            match &e.kind {
                ForwardEventKind::Fission { .. } => {
                    *occ.entry(k).or_insert(0.0) += e.time - t_prev;
                    t_prev = e.time;
                    k += 1;
                }
                ForwardEventKind::Fusion { .. } => {
                    *occ.entry(k).or_insert(0.0) += e.time - t_prev;
                    t_prev = e.time;
                    k -= 1;
                }
                _ => {}
            }
        }
        *occ.entry(k).or_insert(0.0) += horizon - t_prev;
        let mut tv = 0.0;
        for kk in 0..=pmf.support_max as u64 {
            let emp = occ.get(&kk).copied().unwrap_or(0.0) / horizon;
            tv += (emp - pmf.probs[kk as usize]).abs();
        }
        tv *= 0.5;
        assert!(tv < 0.05, "colony-count tv = {tv}");
    }

    #[test]
    fn single_sample_occupancy_totals_one() {
        let p = oracle_params();
        let mut rng = Rng::new(12);
        let (mut w, _) = init_world(&p, &mut rng, 10.0).unwrap();
        let log = run_forward(&mut w, &p, 40.0, &mut rng).unwrap();
        let sample = [w.main[0]];
        let times = [0.0, 5.0, 10.0, 20.0, 40.0];
        let states = extract_ancestry(&log, &w, &sample, &times).unwrap();
        for s in states {
            assert_eq!(s.total_lineages(), 1);
        }
    }

    #[test]
    fn parent_child_pair_coalesces_at_their_birth_event() {
        let p = oracle_params();
        let mut rng = Rng::new(2024);
        let (mut w, _) = init_world(&p, &mut rng, 5.0).unwrap();
        let log = run_forward(&mut w, &p, 10.0, &mut rng).unwrap();
        let t_final = log.final_time();
        let in_main = |id: u64| w.main.contains(&id);
        let (time, parent, child) = log
            .events
            .iter()
            .rev()
            .find_map(|e| match &e.kind {
                ForwardEventKind::MoranMain { parent, child, .. }
                    if in_main(*parent) && in_main(*child) =>
                {
                    Some((e.time, *parent, *child))
                }
                _ => None,
            })
            .expect("a surviving parent/child pair should exist");
        let lb = t_final - time;
        let states =
            extract_ancestry(&log, &w, &[parent, child], &[lb - 1e-9, lb + 1e-9]).unwrap();
        assert_eq!(states[0].total_lineages(), 2, "before the birth crossing");
        assert_eq!(states[1].total_lineages(), 1, "after the birth crossing");
    }

    #[test]
    fn occupancy_totals_non_increasing_in_lookback() {
        let p = oracle_params();
        for rep in 0..30 {
            let mut rng = Rng::for_replicate(606, rep);
            let (mut w, _) = init_world(&p, &mut rng, 20.0).unwrap();
            let log = run_forward(&mut w, &p, 60.0, &mut rng).unwrap();
            let sample: Vec<u64> = w.main[..4].to_vec();
            let times: Vec<f64> = (0..=20).map(|i| 3.0 * i as f64).collect();
            let states = extract_ancestry(&log, &w, &sample, &times).unwrap();
            let mut prev = u32::MAX;
            for s in states {
                assert!(s.total_lineages() <= prev);
                prev = s.total_lineages();
            }
        }
    }

    #[test]
    fn unknown_ids_and_bad_times_rejected() {
        let p = oracle_params();
        let mut rng = Rng::new(5);
        let (mut w, _) = init_world(&p, &mut rng, 0.0).unwrap();
        let log = run_forward(&mut w, &p, 5.0, &mut rng).unwrap();
        assert!(matches!(
            extract_ancestry(&log, &w, &[u64::MAX], &[1.0]),
            Err(Error::UnknownId(_))
        ));
        let id = w.main[0];
        assert!(extract_ancestry(&log, &w, &[id], &[10.0]).is_err());
        assert!(extract_ancestry(&log, &w, &[id, id], &[1.0]).is_err());
    }

    #[test]
    fn event_lines_have_stable_field_order() {
        let e = ForwardEvent {
            time: 1.5,
            kind: ForwardEventKind::MoranMain {
                parent: 3,
                child: 9,
                victim: 4,
            },
        };
        assert_eq!(e.to_line(), "1.5 moran_main 3 9 4");
        let f = ForwardEvent {
            time: 2.0,
            kind: ForwardEventKind::Fission {
                founder: 1,
                colony: 7,
                offspring: vec![10, 11],
            },
        };
        assert_eq!(f.to_line(), "2 fission 1 7 10 11");
    }
}
