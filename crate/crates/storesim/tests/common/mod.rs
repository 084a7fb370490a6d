//! Independent oracles for the acceptance and property suites.
//!
//! Everything here recomputes expected values from first principles,
//! separately from the library's implementation paths: a brute-force
//! permutation TSP, an exhaustive trajectory enumerator with its own
//! dynamics simulation, a dense two-phase simplex LP solver for optimal
//! transport, and a plain BFS.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use storesim::grid::{Basket, CategoryId, Cell, CellKind, CheckoutId, Layout};
use storesim::maxent::RewardSpec;
use storesim::traj::{Action, Orientation};

// ---------------------------------------------------------------------------
// Plain BFS (oracle for nav)
// ---------------------------------------------------------------------------

pub fn bfs_distance(layout: &Layout, a: Cell, b: Cell) -> Option<u32> {
    if !layout.is_walkable(a) || !layout.is_walkable(b) {
        return None;
    }
    let mut dist: BTreeMap<Cell, u32> = BTreeMap::new();
    dist.insert(a, 0);
    let mut queue = VecDeque::new();
    queue.push_back(a);
    while let Some(cur) = queue.pop_front() {
        let d = dist[&cur];
        if cur == b {
            return Some(d);
        }
        for n in layout.neighbors4(cur) {
            if layout.is_walkable(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Brute-force open-path TSP over item orders and stand choices
// ---------------------------------------------------------------------------

/// Minimal move count for entrance -> one stand per item (any order, any
/// shelf-adjacent stand) -> any checkout stand, by exhaustive enumeration.
pub fn brute_force_tsp_moves(layout: &Layout, basket: &Basket) -> Option<u32> {
    use itertools::Itertools;

    let entrance = layout.entrance();
    let checkout = layout.checkout_cell(basket.checkout)?;
    let items: Vec<CategoryId> = basket.items.iter().copied().collect();

    let mut stands_per_item: Vec<Vec<Cell>> = Vec::new();
    for &cat in &items {
        let mut stands = BTreeSet::new();
        for shelf in layout.shelves_of(cat) {
            for s in layout.adjacent_walkable(shelf) {
                stands.insert(s);
            }
        }
        if stands.is_empty() {
            return None;
        }
        stands_per_item.push(stands.into_iter().collect());
    }
    let end_stands: Vec<Cell> = layout.adjacent_walkable(checkout);
    if end_stands.is_empty() {
        return None;
    }

    // Distance maps from every relevant cell.
    let mut cells: BTreeSet<Cell> = BTreeSet::new();
    cells.insert(entrance);
    for stands in &stands_per_item {
        cells.extend(stands.iter().copied());
    }
    let mut maps: BTreeMap<Cell, BTreeMap<Cell, u32>> = BTreeMap::new();
    for &c in &cells {
        let mut dist: BTreeMap<Cell, u32> = BTreeMap::new();
        dist.insert(c, 0);
        let mut queue = VecDeque::new();
        queue.push_back(c);
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for n in layout.neighbors4(cur) {
                if layout.is_walkable(n) && !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    queue.push_back(n);
                }
            }
        }
        maps.insert(c, dist);
    }
    let d = |a: Cell, b: Cell| maps[&a].get(&b).copied();

    if items.is_empty() {
        return end_stands.iter().filter_map(|&e| d(entrance, e)).min();
    }

    let mut best: Option<u32> = None;
    let k = items.len();
    for order in (0..k).permutations(k) {
        // Enumerate stand choices for this order.
        let mut choice = vec![0usize; k];
        loop {
            let mut total = 0u32;
            let mut cur = entrance;
            let mut feasible = true;
            for &idx in &order {
                let stand = stands_per_item[idx][choice[idx]];
                match d(cur, stand) {
                    Some(step) => total += step,
                    None => {
                        feasible = false;
                        break;
                    }
                }
                cur = stand;
            }
            if feasible {
                if let Some(tail) =
                    end_stands.iter().filter_map(|&e| d(cur, e)).min()
                {
                    let total = total + tail;
                    if best.is_none_or(|b| total < b) {
                        best = Some(total);
                    }
                }
            }
            // Advance the mixed-radix counter over stand choices.
            let mut pos = 0;
            loop {
                if pos == k {
                    break;
                }
                choice[pos] += 1;
                if choice[pos] < stands_per_item[pos].len() {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
            if pos == k {
                break;
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Exhaustive trajectory enumeration with independent dynamics
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct SimState {
    cell: Cell,
    orientation: Orientation,
    remaining: Vec<CategoryId>,
    wrong: u32,
    idle: u32,
    steps: u32,
    checkout: Option<CheckoutId>,
    ended: bool,
}

fn sim_ahead(layout: &Layout, cell: Cell, orientation: Orientation) -> Option<Cell> {
    let (dc, dr) = orientation.delta();
    let col = cell.col as i32 + dc;
    let row = cell.row as i32 + dr;
    if col < 0 || row < 0 || col as u16 >= layout.width() || row as u16 >= layout.height() {
        None
    } else {
        Some(Cell::new(col as u16, row as u16))
    }
}

fn sim_step(layout: &Layout, basket: &Basket, state: &mut SimState, action: Action) {
    state.steps += 1;
    match action {
        Action::Forward => match sim_ahead(layout, state.cell, state.orientation) {
            Some(a) if layout.is_walkable(a) => state.cell = a,
            _ => state.idle += 1,
        },
        Action::TurnLeft => {
            state.orientation = state.orientation.turn_left();
            state.idle += 1;
        }
        Action::TurnRight => {
            state.orientation = state.orientation.turn_right();
            state.idle += 1;
        }
        Action::PickupOrCheckout => {
            state.idle += 1;
            match sim_ahead(layout, state.cell, state.orientation) {
                Some(a) if layout.kind(a) == CellKind::Checkout => {
                    state.checkout = layout
                        .checkouts()
                        .iter()
                        .position(|&c| c == a)
                        .map(|i| CheckoutId(i as u16));
                    state.ended = true;
                }
                Some(a) if layout.kind(a) == CellKind::Shelf => {
                    let collected = layout.placements().get(&a).and_then(|cat| {
                        state.remaining.iter().position(|c| c == cat)
                    });
                    match collected {
                        Some(i) => {
                            state.remaining.remove(i);
                        }
                        None => state.wrong += 1,
                    }
                }
                _ => {}
            }
            let _ = basket;
        }
    }
}

fn sim_reward(basket: &Basket, spec: &RewardSpec, state: &SimState) -> f64 {
    let k = basket.items.len();
    let frac = if k == 0 {
        1.0
    } else {
        (k - state.remaining.len()) as f64 / k as f64
    };
    let mut r = spec.w_items * frac
        - spec.w_wrong * state.wrong as f64
        - spec.w_idle * state.idle as f64;
    if state.checkout == Some(basket.checkout) {
        r += spec.w_checkout;
    }
    if let Some(b) = basket.budget {
        if b > 0 {
            let dev = (state.steps as f64 - b as f64).abs() / b as f64;
            r += spec.w_budget * (1.0 - dev).max(0.0);
        }
    }
    r
}

/// Reward of a fixed action string under the documented episode rules,
/// simulated independently of the library's dynamics code.
pub fn score_action_string(
    layout: &Layout,
    basket: &Basket,
    spec: &RewardSpec,
    actions: &str,
) -> f64 {
    let mut state = SimState {
        cell: layout.entrance(),
        orientation: Orientation::North,
        remaining: basket.items.iter().copied().collect(),
        wrong: 0,
        idle: 0,
        steps: 0,
        checkout: None,
        ended: false,
    };
    for ch in actions.chars() {
        assert!(!state.ended, "actions continue past the episode end");
        let action = Action::from_char(ch).expect("valid action char");
        sim_step(layout, basket, &mut state, action);
    }
    sim_reward(basket, spec, &state)
}

/// All complete trajectories (episodes ending at a checkout action or the
/// horizon) with their Boltzmann probabilities `exp(R / tau) / Z`.
pub fn enumerate_boltzmann(
    layout: &Layout,
    basket: &Basket,
    spec: &RewardSpec,
    tau: f64,
) -> BTreeMap<String, f64> {
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    let start = SimState {
        cell: layout.entrance(),
        orientation: Orientation::North,
        remaining: basket.items.iter().copied().collect(),
        wrong: 0,
        idle: 0,
        steps: 0,
        checkout: None,
        ended: false,
    };
    let mut stack: Vec<(SimState, String)> = vec![(start, String::new())];
    while let Some((state, prefix)) = stack.pop() {
        if state.ended || state.steps >= spec.horizon {
            let r = sim_reward(basket, spec, &state);
            weights.insert(prefix, (r / tau).exp());
            continue;
        }
        for action in Action::ALL {
            let mut next = state.clone();
            sim_step(layout, basket, &mut next, action);
            let mut key = prefix.clone();
            key.push(action.to_char());
            stack.push((next, key));
        }
    }
    let z: f64 = weights.values().sum();
    for w in weights.values_mut() {
        *w /= z;
    }
    weights
}

// ---------------------------------------------------------------------------
// Dense two-phase simplex for the transportation LP
// ---------------------------------------------------------------------------

/// Solves `min sum c_ij x_ij` s.t. row sums = supplies, column sums =
/// demands, x >= 0, by a dense two-phase simplex with Bland's rule.
/// Supplies and demands must balance.
pub fn lp_transport(supplies: &[f64], demands: &[f64], cost: &[Vec<f64>]) -> f64 {
    let m = supplies.len();
    let n = demands.len();
    let nvars = m * n;
    // One redundant constraint is dropped (the last demand row).
    let rows = m + n - 1;
    let mut a = vec![vec![0.0f64; nvars]; rows];
    let mut b = vec![0.0f64; rows];
    for i in 0..m {
        for j in 0..n {
            a[i][i * n + j] = 1.0;
        }
        b[i] = supplies[i];
    }
    for j in 0..n - 1 {
        for i in 0..m {
            a[m + j][i * n + j] = 1.0;
        }
        b[m + j] = demands[j];
    }
    let mut c = vec![0.0f64; nvars];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = cost[i][j];
        }
    }
    simplex_two_phase(a, b, c)
}

fn simplex_two_phase(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, c: Vec<f64>) -> f64 {
    let rows = a.len();
    let nvars = c.len();
    // Ensure b >= 0.
    for r in 0..rows {
        if b[r] < 0.0 {
            b[r] = -b[r];
            for v in a[r].iter_mut() {
                *v = -*v;
            }
        }
    }
    // Tableau with artificial variables appended.
    let total = nvars + rows;
    let mut t = vec![vec![0.0f64; total + 1]; rows];
    for r in 0..rows {
        t[r][..nvars].copy_from_slice(&a[r]);
        t[r][nvars + r] = 1.0;
        t[r][total] = b[r];
    }
    let mut basis: Vec<usize> = (nvars..total).collect();

    // Phase 1: minimize the sum of artificials.
    let mut obj = vec![0.0f64; total + 1];
    for row in &t {
        for (o, v) in obj.iter_mut().zip(row) {
            *o -= v;
        }
    }
    for v in obj.iter_mut().take(total).skip(nvars) {
        *v += 1.0;
    }
    simplex_iterate(&mut t, &mut obj, &mut basis, total);

    // Drive any lingering artificial basics out (degenerate zero rows).
    for r in 0..rows {
        if basis[r] >= nvars {
            if let Some(enter) = (0..nvars).find(|&k| t[r][k].abs() > 1e-9) {
                pivot(&mut t, &mut obj, r, enter);
                basis[r] = enter;
            }
        }
    }

    // Phase 2 objective.
    let mut obj2 = vec![0.0f64; total + 1];
    obj2[..nvars].copy_from_slice(&c);
    // Artificial columns are forbidden.
    for v in obj2.iter_mut().take(total).skip(nvars) {
        *v = f64::INFINITY;
    }
    // Express the objective in terms of non-basic variables.
    for r in 0..rows {
        if basis[r] < nvars {
            let coef = obj2[basis[r]];
            if coef != 0.0 {
                for k in 0..=total {
                    if obj2[k].is_finite() {
                        obj2[k] -= coef * t[r][k];
                    }
                }
                obj2[basis[r]] = 0.0;
            }
        }
    }
    simplex_iterate(&mut t, &mut obj2, &mut basis, nvars);

    let mut value = 0.0;
    for r in 0..rows {
        if basis[r] < nvars {
            value += c[basis[r]] * t[r][total];
        }
    }
    value
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[row].clone();
    for (r, other) in t.iter_mut().enumerate() {
        if r != row && other[col].abs() > 1e-13 {
            let f = other[col];
            for (v, p) in other.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
        }
    }
    if obj[col].is_finite() && obj[col].abs() > 1e-13 {
        let f = obj[col];
        for (o, p) in obj.iter_mut().zip(&pivot_row) {
            if o.is_finite() {
                *o -= f * p;
            }
        }
    }
}

fn simplex_iterate(
    t: &mut [Vec<f64>],
    obj: &mut [f64],
    basis: &mut [usize],
    allowed: usize,
) {
    let total = t[0].len() - 1;
    for _ in 0..2_000_000 {
        // Bland's rule: first improving column.
        let Some(enter) = (0..allowed)
            .find(|&k| obj[k].is_finite() && obj[k] < -1e-10 && !basis.contains(&k))
        else {
            return;
        };
        let mut leave: Option<(usize, f64)> = None;
        for (r, row) in t.iter().enumerate() {
            if row[enter] > 1e-12 {
                let ratio = row[total] / row[enter];
                let better = match leave {
                    None => true,
                    Some((lr, lv)) => {
                        ratio < lv - 1e-12 || (ratio < lv + 1e-12 && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return; // unbounded; balanced transport never hits this
        };
        pivot(t, obj, row, enter);
        basis[row] = enter;
    }
    panic!("simplex failed to terminate");
}

// ---------------------------------------------------------------------------
// Random layouts for property tests
// ---------------------------------------------------------------------------

/// Random valid layout: bordered grid with shelf sprinkles, one entrance on
/// the bottom row, one checkout near the top, and `n_categories` categories
/// placed on 1-2 shelves each. Regenerates until validation passes.
pub fn random_layout<R: Rng>(rng: &mut R, width: u16, height: u16, n_categories: usize) -> Layout {
    loop {
        let mut rows: Vec<Vec<char>> = (0..height)
            .map(|r| {
                (0..width)
                    .map(|c| {
                        if r == 0 || r == height - 1 || c == 0 || c == width - 1 {
                            '#'
                        } else if rng.gen::<f64>() < 0.18 {
                            'S'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect();
        let ent = (rng.gen_range(1..width - 1), height - 2);
        rows[ent.1 as usize][ent.0 as usize] = 'E';
        let ck = (rng.gen_range(1..width - 1), 1);
        rows[ck.1 as usize][ck.0 as usize] = 'C';

        let shelves: Vec<(u16, u16)> = (0..height)
            .flat_map(|r| (0..width).map(move |c| (c, r)))
            .filter(|&(c, r)| rows[r as usize][c as usize] == 'S')
            .collect();
        if shelves.len() < n_categories {
            continue;
        }
        let mut pool = shelves.clone();
        let mut placements = String::new();
        let mut categories = String::new();
        let mut ok = true;
        for i in 0..n_categories {
            let count = 1 + rng.gen_range(0..2usize).min(pool.len().saturating_sub(1));
            if pool.is_empty() {
                ok = false;
                break;
            }
            let mut cells = Vec::new();
            for _ in 0..count.min(pool.len()) {
                let idx = rng.gen_range(0..pool.len());
                cells.push(pool.swap_remove(idx));
            }
            categories.push_str(&format!(
                "[[categories]]\nid = \"cat{i}\"\nname = \"Cat {i}\"\nprice = {:.2}\nmargin = 0.05\n\n",
                1.0 + rng.gen::<f64>() * 5.0
            ));
            placements.push_str(&format!(
                "cat{i} = [{}]\n",
                cells
                    .iter()
                    .map(|&(c, r)| format!("[{c}, {r}]"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        if !ok {
            continue;
        }
        let grid = rows
            .iter()
            .map(|r| format!("  \"{}\",", r.iter().collect::<String>()))
            .collect::<Vec<_>>()
            .join("\n");
        let doc = format!(
            "version = 1\nwidth = {width}\nheight = {height}\ngrid = [\n{grid}\n]\nentrance = [{}, {}]\ncheckouts = [[{}, {}]]\n\n{categories}[placements]\n{placements}",
            ent.0, ent.1, ck.0, ck.1
        );
        if let Ok(layout) = Layout::load(&doc) {
            return layout;
        }
    }
}

/// Random basket of up to `max_items` distinct placed categories.
pub fn random_basket<R: Rng>(rng: &mut R, layout: &Layout, max_items: usize) -> Basket {
    let placed: BTreeSet<CategoryId> = layout.placements().values().copied().collect();
    let placed: Vec<CategoryId> = placed.into_iter().collect();
    let k = rng.gen_range(0..=max_items.min(placed.len()));
    let mut items = BTreeSet::new();
    while items.len() < k {
        items.insert(placed[rng.gen_range(0..placed.len())]);
    }
    Basket {
        items,
        checkout: CheckoutId(0),
        budget: None,
    }
}
