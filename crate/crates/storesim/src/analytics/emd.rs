//! Exact 1-Wasserstein (earth mover's) distance between two occupancy
//! distributions on the same grid.
//!
//! Ground metric: Euclidean distance between cell centers, normalized by
//! the grid diagonal so the result lies in [0, 1].
//!
//! Common mass cancels cell-by-cell first (it ships for free under any
//! metric), leaving a bipartite transportation problem between surplus and
//! deficit cells. That problem is solved exactly by successive shortest
//! paths with Johnson potentials; masses are scaled to integers at 2^40
//! resolution so augmentation terminates, which perturbs the optimal value
//! by far less than the 1e-6 comparison tolerance used in the tests.

use super::{AnalyticsError, OccupancyDistribution};
use crate::grid::Cell;

const MASS_SCALE: f64 = (1u64 << 40) as f64;
const MASS_TOL: f64 = 1e-6;

pub fn wasserstein(
    p: &OccupancyDistribution,
    q: &OccupancyDistribution,
) -> Result<f64, AnalyticsError> {
    if !p.same_shape(q) {
        return Err(AnalyticsError::ShapeMismatch(
            p.width(),
            p.height(),
            q.width(),
            q.height(),
        ));
    }
    let (pm, qm) = (p.total_mass(), q.total_mass());
    if (pm - qm).abs() > MASS_TOL {
        return Err(AnalyticsError::MassMismatch(pm, qm));
    }

    let mut surplus: Vec<(Cell, f64)> = Vec::new();
    let mut deficit: Vec<(Cell, f64)> = Vec::new();
    for ((cell, a), (_, b)) in p.iter().zip(q.iter()) {
        let diff = a - b;
        if diff > 0.0 {
            surplus.push((cell, diff));
        } else if diff < 0.0 {
            deficit.push((cell, -diff));
        }
    }
    if surplus.is_empty() || deficit.is_empty() {
        return Ok(0.0);
    }

    let diag = ((p.width() as f64).powi(2) + (p.height() as f64).powi(2)).sqrt();
    let dist = |a: Cell, b: Cell| -> f64 {
        let dc = a.col as f64 - b.col as f64;
        let dr = a.row as f64 - b.row as f64;
        (dc * dc + dr * dr).sqrt() / diag
    };

    // Integer supplies; the largest entries absorb rounding drift so both
    // sides sum to the same total.
    let mut supply: Vec<u64> = surplus.iter().map(|&(_, m)| (m * MASS_SCALE).round() as u64).collect();
    let mut demand: Vec<u64> = deficit.iter().map(|&(_, m)| (m * MASS_SCALE).round() as u64).collect();
    let s_total: u64 = supply.iter().sum();
    let d_total: u64 = demand.iter().sum();
    if s_total == 0 || d_total == 0 {
        return Ok(0.0);
    }
    if s_total > d_total {
        let i = (0..supply.len()).max_by_key(|&i| supply[i]).unwrap();
        supply[i] -= s_total - d_total;
    } else if d_total > s_total {
        let j = (0..demand.len()).max_by_key(|&j| demand[j]).unwrap();
        demand[j] -= d_total - s_total;
    }
    let total: u64 = supply.iter().sum();

    let ns = supply.len();
    let nd = demand.len();
    let cost: Vec<f64> = (0..ns)
        .flat_map(|i| (0..nd).map(move |j| (i, j)))
        .map(|(i, j)| dist(surplus[i].0, deficit[j].0))
        .collect();

    // flow[i * nd + j]: mass shipped i -> j.
    let mut flow = vec![0u64; ns * nd];
    let mut remaining_supply = supply;
    let mut remaining_demand = demand;
    // Johnson potentials per node (sources then sinks).
    let mut pot = vec![0.0f64; ns + nd];

    let mut shipped = 0u64;
    let max_rounds = 100 * (ns + nd) as u64 + 1024;
    let mut rounds = 0u64;
    while shipped < total {
        rounds += 1;
        if rounds > max_rounds {
            return Err(AnalyticsError::FlowDiverged);
        }
        // Dijkstra over the residual graph from all live sources.
        const UNSEEN: f64 = f64::INFINITY;
        let n = ns + nd;
        let mut dist_to = vec![UNSEEN; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        for i in 0..ns {
            if remaining_supply[i] > 0 {
                dist_to[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = UNSEEN;
            for v in 0..n {
                if !done[v] && dist_to[v] < best {
                    best = dist_to[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < ns {
                // Forward edges source u -> every sink.
                for j in 0..nd {
                    let v = ns + j;
                    if done[v] {
                        continue;
                    }
                    let reduced = (cost[u * nd + j] + pot[u] - pot[v]).max(0.0);
                    let cand = dist_to[u] + reduced;
                    if cand < dist_to[v] {
                        dist_to[v] = cand;
                        prev[v] = u;
                    }
                }
            } else {
                // Residual edges sink -> source where flow exists.
                let j = u - ns;
                for i in 0..ns {
                    if done[i] || flow[i * nd + j] == 0 {
                        continue;
                    }
                    let reduced = (-cost[i * nd + j] + pot[u] - pot[i]).max(0.0);
                    let cand = dist_to[u] + reduced;
                    if cand < dist_to[i] {
                        dist_to[i] = cand;
                        prev[i] = u;
                    }
                }
            }
        }

        // Closest live sink by original cost: reduced distance plus
        // potential (live sources all carry potential zero).
        let mut sink = usize::MAX;
        let mut best = UNSEEN;
        for j in 0..nd {
            if remaining_demand[j] > 0 && dist_to[ns + j] < UNSEEN {
                let original = dist_to[ns + j] + pot[ns + j];
                if original < best {
                    best = original;
                    sink = ns + j;
                }
            }
        }
        if sink == usize::MAX {
            return Err(AnalyticsError::FlowDiverged);
        }

        // Walk back to a source, finding the bottleneck.
        let mut bottleneck = remaining_demand[sink - ns];
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < ns && v >= ns {
                // forward edge: unlimited capacity
            } else if u >= ns && v < ns {
                bottleneck = bottleneck.min(flow[v * nd + (u - ns)]);
            }
            v = u;
        }
        let source = v;
        bottleneck = bottleneck.min(remaining_supply[source]);
        debug_assert!(bottleneck > 0);

        // Apply the augmentation.
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < ns && v >= ns {
                flow[u * nd + (v - ns)] += bottleneck;
            } else {
                flow[v * nd + (u - ns)] -= bottleneck;
            }
            v = u;
        }
        remaining_supply[source] -= bottleneck;
        remaining_demand[sink - ns] -= bottleneck;
        shipped += bottleneck;

        // Update potentials for reachable nodes.
        for v in 0..n {
            if dist_to[v] < UNSEEN {
                pot[v] += dist_to[v];
            }
        }
    }

    let mut value = 0.0;
    for i in 0..ns {
        for j in 0..nd {
            if flow[i * nd + j] > 0 {
                value += flow[i * nd + j] as f64 / MASS_SCALE * cost[i * nd + j];
            }
        }
    }
    Ok(value)
}
