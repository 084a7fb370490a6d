//! Exact maximum-entropy customer model.
//!
//! The basket-conditioned shopping trip is a finite-horizon MDP over
//! augmented states (cell, orientation, remaining-items bitmask, timestep)
//! with deterministic gridworld dynamics:
//!
//! - `forward` moves one cell ahead unless blocked (then stays),
//! - `left`/`right` rotate in place,
//! - `pickup/checkout` facing a shelf with an uncollected basket item clears
//!   that item; facing any checkout ends the episode; facing a shelf that
//!   yields nothing counts as a wrong pickup.
//!
//! Reward is terminal-only (discount 1): a completion fraction for basket
//! items, a correct-checkout bonus, a budget-adherence term when a step
//! budget is conditioned, and a per-wrong-pickup penalty (charged at the
//! offending step, which keeps the state Markov).
//!
//! Solving is exact backward induction with log-sum-exp backups at
//! temperature tau. Under deterministic dynamics this makes the rollout
//! distribution Boltzmann in total trajectory reward:
//! `Pr(xi) proportional to exp(R(xi) / tau)`,
//! which is the property the test suite verifies by exhaustive enumeration.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Basket, CategoryId, Cell, CellKind, CheckoutId, Layout};
use crate::traj::{facing_cell, Action, Orientation, Step, Trajectory};
use crate::util::derive_seed;

/// Reward weights and horizon for the shopping MDP. The discount is fixed
/// at 1 so that longer trajectories are not penalized per se.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSpec {
    pub w_items: f64,
    pub w_checkout: f64,
    pub w_budget: f64,
    pub w_wrong: f64,
    /// Penalty per stationary timestep (turns, blocked moves, pickup
    /// actions). Zero keeps the reward terminal-only; a small positive
    /// value steers the entropy budget into spatial detours instead of
    /// dithering in place.
    pub w_idle: f64,
    pub horizon: u32,
}

impl RewardSpec {
    pub fn with_horizon(horizon: u32) -> RewardSpec {
        RewardSpec {
            w_items: 1.0,
            w_checkout: 0.5,
            w_budget: 0.5,
            w_wrong: 0.25,
            w_idle: 0.0,
            horizon,
        }
    }

    /// The default retention threshold: full basket plus correct checkout.
    pub fn default_min_reward(&self) -> f64 {
        self.w_items + self.w_checkout
    }
}

/// How a finished episode looked, sufficient to score it.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    /// Distinct basket items collected.
    pub collected: usize,
    pub wrong_pickups: u32,
    /// Timesteps that did not change the agent's cell.
    pub idle_steps: u32,
    /// The checkout used, or `None` when the horizon ended the episode.
    pub checkout: Option<CheckoutId>,
    /// Episode length in timesteps.
    pub steps: u32,
}

fn budget_term(spec: &RewardSpec, basket: &Basket, steps: u32) -> f64 {
    match basket.budget {
        Some(b) if b > 0 => {
            let dev = (steps as f64 - b as f64).abs() / b as f64;
            spec.w_budget * (1.0 - dev).max(0.0)
        }
        _ => 0.0,
    }
}

/// Scores a finished episode. An empty basket counts as fully collected.
pub fn terminal_reward(summary: &EpisodeSummary, spec: &RewardSpec, basket: &Basket) -> f64 {
    let frac = if basket.items.is_empty() {
        1.0
    } else {
        summary.collected as f64 / basket.items.len() as f64
    };
    let mut r = spec.w_items * frac
        - spec.w_wrong * summary.wrong_pickups as f64
        - spec.w_idle * summary.idle_steps as f64;
    if summary.checkout == Some(basket.checkout) {
        r += spec.w_checkout;
    }
    r + budget_term(spec, basket, summary.steps)
}

#[derive(Debug, Error)]
pub enum MaxEntError {
    #[error("temperature must be positive (got {0})")]
    BadTemperature(f64),
    #[error("state space too large: {states} states over horizon {horizon}")]
    StateSpaceTooLarge { states: usize, horizon: u32 },
    #[error("basket of {0} items exceeds the bitmask capacity")]
    BasketTooLarge(usize),
    #[error("non-finite value at cell {cell}, t={t}")]
    NonFinite { cell: Cell, t: u32 },
    #[error("unknown checkout id {0}")]
    UnknownCheckout(u16),
    #[error(
        "retention rate {rate:.5} too low: {retained} retained in {attempts} attempts"
    )]
    RetentionTooLow { rate: f64, retained: usize, attempts: u64 },
    #[error("policy cache io error: {0}")]
    CacheIo(#[from] std::io::Error),
}

const MAX_VALUE_TABLE_BYTES: usize = 6 << 30;
const MASK_CAP: usize = 20;

/// What lies directly ahead of a (cell, orientation) pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Facing {
    /// Nothing interactable: pickup is a no-op.
    Inert,
    /// A shelf holding basket item `bit`.
    BasketShelf(u8),
    /// A shelf that cannot yield a new basket item.
    OtherShelf,
    /// The conditioned checkout.
    TargetCheckout,
    /// Some other checkout.
    OtherCheckout,
}

/// Soft-optimal, time-indexed policy for one (layout, basket, spec, tau).
///
/// Stores the soft value table; action distributions are derived on demand
/// from the values and the deterministic dynamics.
pub struct Policy {
    pub tau: f64,
    pub spec: RewardSpec,
    pub basket: Basket,
    layout_hash: String,
    /// Basket items in bit order.
    items: Vec<CategoryId>,
    walk_cells: Vec<Cell>,
    cell_to_walk: Vec<u32>,
    /// Per (walk, orientation): walk index after a forward move.
    fwd: Vec<u32>,
    /// Per (walk, orientation): what pickup/checkout interacts with.
    facing: Vec<Facing>,
    n_masks: usize,
    grid_width: u16,
    /// `values[t * n_states + sid]`, t in `0..=horizon`.
    values: Vec<f64>,
    /// Bellman backups performed during solving (a deterministic work counter).
    pub solve_updates: u64,
}

/// Agent pose plus remaining-items mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentState {
    pub cell: Cell,
    pub orientation: Orientation,
    pub remaining: u32,
    pub t: u32,
}

impl Policy {
    fn n_states(&self) -> usize {
        self.walk_cells.len() * 4 * self.n_masks
    }

    fn sid(&self, walk: usize, orient: usize, mask: u32) -> usize {
        (walk * 4 + orient) * self.n_masks + mask as usize
    }

    fn walk_index(&self, cell: Cell) -> Option<usize> {
        let i = self.cell_to_walk
            [cell.row as usize * self.grid_width() + cell.col as usize];
        (i != u32::MAX).then_some(i as usize)
    }

    fn grid_width(&self) -> usize {
        self.grid_width as usize
    }

    pub fn items(&self) -> &[CategoryId] {
        &self.items
    }

    pub fn value(&self, state: &AgentState) -> Option<f64> {
        let walk = self.walk_index(state.cell)?;
        let sid = self.sid(walk, state.orientation.index(), state.remaining);
        Some(self.values[state.t as usize * self.n_states() + sid])
    }

    /// Soft-optimal action distribution at a state. Sums to 1.
    pub fn action_distribution(&self, state: &AgentState) -> Option<[f64; 4]> {
        let q = self.action_values(state)?;
        let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut e = [0.0; 4];
        let mut total = 0.0;
        for (i, &qi) in q.iter().enumerate() {
            e[i] = ((qi - m) / self.tau).exp();
            total += e[i];
        }
        for v in &mut e {
            *v /= total;
        }
        Some(e)
    }

    /// `r(s, a) + V_{t+1}(s')` per action, with terminal transitions folded
    /// into the reward.
    pub fn action_values(&self, state: &AgentState) -> Option<[f64; 4]> {
        if state.t >= self.spec.horizon {
            return None;
        }
        let walk = self.walk_index(state.cell)?;
        let orient = state.orientation.index();
        let mask = state.remaining;
        let next = &self.values[(state.t as usize + 1) * self.n_states()..];
        let pose = walk * 4 + orient;
        let blocked = self.fwd[pose] as usize == walk;
        let q_fwd = if blocked { -self.spec.w_idle } else { 0.0 }
            + next[self.sid(self.fwd[pose] as usize, orient, mask)];
        let q_left = -self.spec.w_idle + next[self.sid(walk, (orient + 3) % 4, mask)];
        let q_right = -self.spec.w_idle + next[self.sid(walk, (orient + 1) % 4, mask)];
        let q_pick = -self.spec.w_idle
            + match self.facing[pose] {
                Facing::BasketShelf(bit) if mask & (1 << bit) != 0 => {
                    next[self.sid(walk, orient, mask & !(1 << bit))]
                }
                Facing::TargetCheckout => self.checkout_reward(mask, state.t + 1, true),
                Facing::OtherCheckout => self.checkout_reward(mask, state.t + 1, false),
                Facing::BasketShelf(_) | Facing::OtherShelf => {
                    -self.spec.w_wrong + next[self.sid(walk, orient, mask)]
                }
                Facing::Inert => next[self.sid(walk, orient, mask)],
            };
        Some([q_fwd, q_left, q_right, q_pick])
    }

    fn frac(&self, mask: u32) -> f64 {
        let k = self.items.len();
        if k == 0 {
            return 1.0;
        }
        (k as f64 - mask.count_ones() as f64) / k as f64
    }

    fn checkout_reward(&self, mask: u32, steps: u32, correct: bool) -> f64 {
        self.spec.w_items * self.frac(mask)
            + if correct { self.spec.w_checkout } else { 0.0 }
            + budget_term(&self.spec, &self.basket, steps)
    }

    fn horizon_reward(&self, mask: u32) -> f64 {
        self.spec.w_items * self.frac(mask)
            + budget_term(&self.spec, &self.basket, self.spec.horizon)
    }

    pub fn start_state(&self, layout: &Layout) -> AgentState {
        AgentState {
            cell: layout.entrance(),
            orientation: Orientation::North,
            remaining: ((1u64 << self.items.len()) - 1) as u32,
            t: 0,
        }
    }

    pub fn layout_hash(&self) -> &str {
        &self.layout_hash
    }
}

/// Builds the basket-conditioned MDP and solves it exactly by backward
/// induction with log-sum-exp backups at temperature `tau`.
pub fn soft_value_iteration(
    layout: &Layout,
    basket: &Basket,
    spec: &RewardSpec,
    tau: f64,
) -> Result<Policy, MaxEntError> {
    let mut policy = prepare_policy(layout, basket, spec, tau)?;
    solve(&mut policy)?;
    Ok(policy)
}

fn prepare_policy(
    layout: &Layout,
    basket: &Basket,
    spec: &RewardSpec,
    tau: f64,
) -> Result<Policy, MaxEntError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(MaxEntError::BadTemperature(tau));
    }
    let items: Vec<CategoryId> = basket.items.iter().copied().collect();
    if items.len() > MASK_CAP {
        return Err(MaxEntError::BasketTooLarge(items.len()));
    }
    let target_checkout = layout
        .checkout_cell(basket.checkout)
        .ok_or(MaxEntError::UnknownCheckout(basket.checkout.0))?;

    let mut walk_cells = Vec::new();
    let mut cell_to_walk =
        vec![u32::MAX; layout.width() as usize * layout.height() as usize];
    for cell in layout.cells() {
        if layout.is_walkable(cell) {
            cell_to_walk[cell.row as usize * layout.width() as usize + cell.col as usize] =
                walk_cells.len() as u32;
            walk_cells.push(cell);
        }
    }

    let n_masks = 1usize << items.len();
    let n_states = walk_cells.len() * 4 * n_masks;
    let table = n_states
        .checked_mul(spec.horizon as usize + 1)
        .and_then(|n| n.checked_mul(8));
    match table {
        Some(bytes) if bytes <= MAX_VALUE_TABLE_BYTES => {}
        _ => {
            return Err(MaxEntError::StateSpaceTooLarge {
                states: n_states,
                horizon: spec.horizon,
            })
        }
    }

    let mut fwd = vec![0u32; walk_cells.len() * 4];
    let mut facing = vec![Facing::Inert; walk_cells.len() * 4];
    for (w, &cell) in walk_cells.iter().enumerate() {
        for orient in Orientation::ALL {
            let pose = w * 4 + orient.index();
            let ahead = facing_cell(layout, cell, orient);
            fwd[pose] = match ahead {
                Some(a) if layout.is_walkable(a) => {
                    cell_to_walk[a.row as usize * layout.width() as usize + a.col as usize]
                }
                _ => w as u32,
            };
            facing[pose] = match ahead {
                Some(a) => match layout.kind(a) {
                    CellKind::Shelf => match layout.placements().get(&a) {
                        Some(cat) => match items.iter().position(|c| c == cat) {
                            Some(bit) => Facing::BasketShelf(bit as u8),
                            None => Facing::OtherShelf,
                        },
                        None => Facing::OtherShelf,
                    },
                    CellKind::Checkout => {
                        if a == target_checkout {
                            Facing::TargetCheckout
                        } else {
                            Facing::OtherCheckout
                        }
                    }
                    _ => Facing::Inert,
                },
                None => Facing::Inert,
            };
        }
    }

    Ok(Policy {
        tau,
        spec: *spec,
        basket: basket.clone(),
        layout_hash: layout.content_hash(),
        items,
        walk_cells,
        cell_to_walk,
        fwd,
        facing,
        n_masks,
        grid_width: layout.width(),
        values: Vec::new(),
        solve_updates: 0,
    })
}

fn solve(policy: &mut Policy) -> Result<(), MaxEntError> {
    let n_states = policy.n_states();
    let horizon = policy.spec.horizon as usize;
    let tau = policy.tau;
    let mut values = vec![0.0f64; n_states * (horizon + 1)];
    let mut updates = 0u64;

    // Horizon slice: forced end without a checkout.
    for mask in 0..policy.n_masks as u32 {
        let r = policy.horizon_reward(mask);
        for pose in 0..policy.walk_cells.len() * 4 {
            values[horizon * n_states + pose * policy.n_masks + mask as usize] = r;
        }
    }

    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut((t + 1) * n_states);
        let cur = &mut head[t * n_states..];
        let next = &tail[..n_states];
        for w in 0..policy.walk_cells.len() {
            for orient in 0..4 {
                let pose = w * 4 + orient;
                let fwd_sid = (policy.fwd[pose] as usize * 4 + orient) * policy.n_masks;
                let left_sid = (w * 4 + (orient + 3) % 4) * policy.n_masks;
                let right_sid = (w * 4 + (orient + 1) % 4) * policy.n_masks;
                let self_sid = pose * policy.n_masks;
                let blocked_penalty =
                    if policy.fwd[pose] as usize == w { -policy.spec.w_idle } else { 0.0 };
                for mask in 0..policy.n_masks as u32 {
                    let m = mask as usize;
                    let q_fwd = blocked_penalty + next[fwd_sid + m];
                    let q_left = -policy.spec.w_idle + next[left_sid + m];
                    let q_right = -policy.spec.w_idle + next[right_sid + m];
                    let q_pick = -policy.spec.w_idle
                        + match policy.facing[pose] {
                            Facing::BasketShelf(bit) if mask & (1 << bit) != 0 => {
                                next[self_sid + (m & !(1 << bit))]
                            }
                            Facing::TargetCheckout => {
                                policy.checkout_reward(mask, t as u32 + 1, true)
                            }
                            Facing::OtherCheckout => {
                                policy.checkout_reward(mask, t as u32 + 1, false)
                            }
                            Facing::BasketShelf(_) | Facing::OtherShelf => {
                                -policy.spec.w_wrong + next[self_sid + m]
                            }
                            Facing::Inert => next[self_sid + m],
                        };
                    let qs = [q_fwd, q_left, q_right, q_pick];
                    let top = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = qs.iter().map(|&q| ((q - top) / tau).exp()).sum();
                    let v = top + tau * sum.ln();
                    if !v.is_finite() {
                        return Err(MaxEntError::NonFinite {
                            cell: policy.walk_cells[w],
                            t: t as u32,
                        });
                    }
                    cur[self_sid + m] = v;
                    updates += 1;
                }
            }
        }
    }
    policy.values = values;
    policy.solve_updates = updates;
    Ok(())
}

/// Result of a single policy rollout.
pub struct Rollout {
    pub trajectory: Trajectory,
    pub summary: EpisodeSummary,
    pub reward: f64,
}

/// Samples one episode from the soft-optimal policy.
pub fn rollout<R: Rng>(policy: &Policy, layout: &Layout, rng: &mut R) -> Rollout {
    let mut state = policy.start_state(layout);
    let mut steps: Vec<Step> = Vec::new();
    let mut pickups: Vec<(usize, CategoryId)> = Vec::new();
    let mut wrong = 0u32;
    let mut idle_steps = 0u32;
    let mut checkout = None;

    while state.t < policy.spec.horizon {
        let dist = policy
            .action_distribution(&state)
            .expect("state inside solved table");
        let mut u = rng.gen::<f64>();
        let mut choice = 3;
        for (i, &p) in dist.iter().enumerate() {
            u -= p;
            if u <= 0.0 {
                choice = i;
                break;
            }
        }
        let action = Action::ALL[choice];
        steps.push(Step {
            cell: state.cell,
            orientation: state.orientation,
            action,
        });

        let walk = policy.walk_index(state.cell).expect("walkable state");
        let pose = walk * 4 + state.orientation.index();
        match action {
            Action::Forward => {
                let next = policy.walk_cells[policy.fwd[pose] as usize];
                if next == state.cell {
                    idle_steps += 1;
                }
                state.cell = next;
            }
            Action::TurnLeft => {
                state.orientation = state.orientation.turn_left();
                idle_steps += 1;
            }
            Action::TurnRight => {
                state.orientation = state.orientation.turn_right();
                idle_steps += 1;
            }
            Action::PickupOrCheckout => {
                idle_steps += 1;
                match policy.facing[pose] {
                    Facing::BasketShelf(bit) if state.remaining & (1 << bit) != 0 => {
                        state.remaining &= !(1 << bit);
                        pickups.push((steps.len() - 1, policy.items[bit as usize]));
                    }
                    Facing::TargetCheckout | Facing::OtherCheckout => {
                        let ahead = facing_cell(layout, state.cell, state.orientation)
                            .expect("checkout ahead");
                        checkout = layout
                            .checkouts()
                            .iter()
                            .position(|&c| c == ahead)
                            .map(|i| CheckoutId(i as u16));
                        state.t += 1;
                        break;
                    }
                    Facing::BasketShelf(_) | Facing::OtherShelf => wrong += 1,
                    Facing::Inert => {}
                }
            }
        }
        state.t += 1;
    }

    let summary = EpisodeSummary {
        collected: policy.items.len() - state.remaining.count_ones() as usize,
        wrong_pickups: wrong,
        idle_steps,
        checkout,
        steps: state.t,
    };
    let reward = terminal_reward(&summary, &policy.spec, &policy.basket);
    Rollout {
        trajectory: Trajectory {
            conditions: policy.basket.clone(),
            steps,
            pickups,
        },
        summary,
        reward,
    }
}

/// A batch of retained rollouts plus retention statistics.
pub struct RetainedBatch {
    pub trajectories: Vec<Trajectory>,
    pub attempts: u64,
    pub retention_rate: f64,
    /// Set when the probe batch retained less than 1% of rollouts.
    pub low_retention_warning: Option<String>,
}

/// Exact task success: every basket item collected, nothing wrong picked,
/// ended at the conditioned checkout. Equivalent to the default reward
/// threshold when no budget is conditioned, and the right retention notion
/// when large budget weights dominate the scalar reward.
pub fn task_exact(summary: &EpisodeSummary, basket: &Basket) -> bool {
    summary.collected == basket.items.len()
        && summary.wrong_pickups == 0
        && summary.checkout == Some(basket.checkout)
}

/// Samples until `count` rollouts meet `min_reward`. Attempt `i` always uses
/// the seed derived from `(base_seed, i)`, so results are independent of
/// chunking and worker count.
pub fn sample_retained(
    policy: &Policy,
    layout: &Layout,
    count: usize,
    base_seed: u64,
    min_reward: f64,
) -> Result<RetainedBatch, MaxEntError> {
    sample_retained_by(policy, layout, count, base_seed, |r| {
        r.reward >= min_reward - 1e-12
    })
}

/// Retention with an arbitrary predicate over the finished rollout.
pub fn sample_retained_by<F>(
    policy: &Policy,
    layout: &Layout,
    count: usize,
    base_seed: u64,
    keep: F,
) -> Result<RetainedBatch, MaxEntError>
where
    F: Fn(&Rollout) -> bool + Sync,
{
    use rayon::prelude::*;
    const PROBE: u64 = 2_000;
    let mut kept: Vec<Trajectory> = Vec::with_capacity(count);
    let mut attempts = 0u64;
    let mut retained_total = 0u64;
    let mut warning = None;
    let max_attempts = (count as u64).saturating_mul(10_000).max(1_000_000);

    while kept.len() < count {
        let chunk = ((count - kept.len()) as u64).clamp(256, 20_000);
        let results: Vec<Option<Trajectory>> = (attempts..attempts + chunk)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, i));
                let out = rollout(policy, layout, &mut rng);
                keep(&out).then_some(out.trajectory)
            })
            .collect();
        attempts += chunk;
        for t in results.into_iter().flatten() {
            retained_total += 1;
            if kept.len() < count {
                kept.push(t);
            }
        }
        if warning.is_none() && attempts >= PROBE {
            let rate = retained_total as f64 / attempts as f64;
            if rate < 0.01 {
                warning = Some(format!(
                    "retention rate {rate:.5} below 1% after {attempts} attempts"
                ));
            }
        }
        if kept.len() < count && attempts >= max_attempts {
            return Err(MaxEntError::RetentionTooLow {
                rate: retained_total as f64 / attempts as f64,
                retained: kept.len(),
                attempts,
            });
        }
    }
    Ok(RetainedBatch {
        trajectories: kept,
        attempts,
        retention_rate: retained_total as f64 / attempts as f64,
        low_retention_warning: warning,
    })
}

// ---------------------------------------------------------------------------
// Policy cache
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 4] = b"SSPC";
const CACHE_VERSION: u32 = 1;

impl Policy {
    /// Opaque cache key for this policy's (layout, basket, spec, tau).
    pub fn cache_key(&self) -> String {
        let mut s = format!("{}|{}|", self.layout_hash, self.tau);
        for it in &self.items {
            s.push_str(&format!("{},", it.0));
        }
        s.push_str(&format!(
            "|c{}|b{:?}|{} {} {} {} {}|h{}",
            self.basket.checkout.0,
            self.basket.budget,
            self.spec.w_items,
            self.spec.w_checkout,
            self.spec.w_budget,
            self.spec.w_wrong,
            self.spec.w_idle,
            self.spec.horizon
        ));
        crate::util::sha256_hex(s.as_bytes())
    }

    /// Writes the value table with a magic header, version, and key.
    pub fn save_cache(&self, path: &Path) -> Result<(), MaxEntError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        let key = self.cache_key();
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.solve_updates.to_le_bytes())?;
        Ok(())
    }

    /// Rebuilds a policy from cache if the file exists and its key matches;
    /// otherwise solves from scratch (and fills the cache when a directory
    /// is given).
    pub fn load_or_solve(
        layout: &Layout,
        basket: &Basket,
        spec: &RewardSpec,
        tau: f64,
        cache_dir: Option<&Path>,
    ) -> Result<Policy, MaxEntError> {
        let mut policy = prepare_policy(layout, basket, spec, tau)?;
        let path = cache_dir.map(|d| d.join(format!("{}.policy", policy.cache_key())));
        if let Some(p) = &path {
            if p.exists() {
                if let Ok(()) = policy.read_cache(p) {
                    return Ok(policy);
                }
            }
        }
        solve(&mut policy)?;
        if let Some(p) = &path {
            std::fs::create_dir_all(p.parent().unwrap_or(Path::new(".")))?;
            policy.save_cache(p)?;
        }
        Ok(policy)
    }

    fn read_cache(&mut self, path: &Path) -> Result<(), MaxEntError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "bad policy cache");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(bad().into());
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != CACHE_VERSION {
            return Err(bad().into());
        }
        r.read_exact(&mut u32buf)?;
        let key_len = u32::from_le_bytes(u32buf) as usize;
        let mut key = vec![0u8; key_len];
        r.read_exact(&mut key)?;
        if key != self.cache_key().as_bytes() {
            return Err(bad().into());
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        let expected = self.n_states() * (self.spec.horizon as usize + 1);
        if len != expected {
            return Err(bad().into());
        }
        let mut values = vec![0.0f64; len];
        let mut fbuf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut fbuf)?;
            *v = f64::from_le_bytes(fbuf);
        }
        r.read_exact(&mut u64buf)?;
        self.solve_updates = u64::from_le_bytes(u64buf);
        self.values = values;
        Ok(())
    }
}

/// Largest absolute soft-Bellman residual over all non-terminal states.
/// Exact backward induction should leave this at numerical zero.
pub fn max_bellman_residual(policy: &Policy) -> f64 {
    let n_states = policy.n_states();
    let mut worst = 0.0f64;
    for t in 0..policy.spec.horizon {
        for w in 0..policy.walk_cells.len() {
            for orient in 0..4 {
                for mask in 0..policy.n_masks as u32 {
                    let state = AgentState {
                        cell: policy.walk_cells[w],
                        orientation: Orientation::from_index(orient),
                        remaining: mask,
                        t,
                    };
                    let qs = policy.action_values(&state).unwrap();
                    let top = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = qs.iter().map(|&q| ((q - top) / policy.tau).exp()).sum();
                    let v = top + policy.tau * sum.ln();
                    let stored = policy.values
                        [t as usize * n_states + policy.sid(w, orient, mask)];
                    worst = worst.max((v - stored).abs());
                }
            }
        }
    }
    worst
}
