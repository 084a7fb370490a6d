//! Converts raw continuous trajectory logs into grid-aligned (state, action)
//! sequences so external datasets enter the pipeline in the same format the
//! generators emit.
//!
//! Records without basket information are rejected. Samples outside the
//! store or after the checkout timestamp are trimmed, positions are
//! discretized by `floor(coord / cell_size)`, points inside shelves or walls
//! snap to the nearest walkable cell by lattice breadth-first distance, and
//! the cell sequence is normalized to start at the entrance and end with a
//! checkout action. Pickups are attributed afterwards at each item's
//! nearest (latest on ties) approach.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Basket, CategoryId, Cell, CheckoutId, Layout};
use crate::nav::{shortest_path, DistanceField};
use crate::traj::{Trajectory, TrajectoryBuilder};

/// Distance (in cells) at which a shelf counts as approached.
pub const ADJACENCY_RADIUS: u32 = 1;

/// A raw, continuous-coordinate trajectory record.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrajectory {
    pub id: String,
    /// Time-ordered (t seconds, x meters, y meters) samples.
    pub samples: Vec<(f64, f64, f64)>,
    #[serde(default)]
    pub basket: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkout_ts: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    NoBasket,
    EmptyAfterTrim,
    UnreachablePoint,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::NoBasket => "no-basket",
            RejectReason::EmptyAfterTrim => "empty-after-trim",
            RejectReason::UnreachablePoint => "unreachable-point",
        }
    }
}

/// Either a normalized trajectory or a rejection with a reason code.
#[derive(Clone, Debug)]
pub enum PreprocessOutcome {
    Accepted(Trajectory),
    Rejected(RejectReason),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("record {id:?}: timestamps not strictly increasing at index {index}")]
    BadTimestamps { id: String, index: usize },
    #[error("unknown category {0:?} in basket")]
    UnknownCategory(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Traj(#[from] crate::traj::TrajError),
    #[error(transparent)]
    Nav(#[from] crate::nav::NavError),
}

/// Nearest walkable cell by 4-connected lattice breadth-first distance
/// (walls do not block the snap search). Valid cells are never moved; ties
/// resolve by N, E, S, W exploration order.
pub fn snap_to_walkable(layout: &Layout, cell: Cell) -> Option<Cell> {
    if layout.is_walkable(cell) {
        return Some(cell);
    }
    let mut seen = vec![false; layout.width() as usize * layout.height() as usize];
    let idx = |c: Cell| c.row as usize * layout.width() as usize + c.col as usize;
    let mut queue = std::collections::VecDeque::new();
    seen[idx(cell)] = true;
    queue.push_back(cell);
    while let Some(cur) = queue.pop_front() {
        for n in layout.neighbors4(cur) {
            if seen[idx(n)] {
                continue;
            }
            if layout.is_walkable(n) {
                return Some(n);
            }
            seen[idx(n)] = true;
            queue.push_back(n);
        }
    }
    None
}

fn to_cell(layout: &Layout, x: f64, y: f64) -> Option<Cell> {
    if x < 0.0 || y < 0.0 {
        return None;
    }
    let col = (x / layout.cell_size_m()).floor() as i64;
    let row = (y / layout.cell_size_m()).floor() as i64;
    if col >= layout.width() as i64 || row >= layout.height() as i64 {
        return None;
    }
    Some(Cell::new(col as u16, row as u16))
}

fn manhattan(a: Cell, b: Cell) -> u32 {
    a.col.abs_diff(b.col) as u32 + a.row.abs_diff(b.row) as u32
}

/// Converts a raw record into a normalized trajectory (without pickups;
/// see [`infer_pickups`]). Deterministic: identical input gives identical
/// output.
pub fn preprocess(raw: &RawTrajectory, layout: &Layout) -> Result<PreprocessOutcome, IngestError> {
    for (i, pair) in raw.samples.windows(2).enumerate() {
        if pair[1].0 <= pair[0].0 {
            return Err(IngestError::BadTimestamps { id: raw.id.clone(), index: i + 1 });
        }
    }
    let Some(basket_names) = &raw.basket else {
        return Ok(PreprocessOutcome::Rejected(RejectReason::NoBasket));
    };
    let mut items = std::collections::BTreeSet::new();
    for name in basket_names {
        let id = layout
            .category_by_name(name)
            .ok_or_else(|| IngestError::UnknownCategory(name.clone()))?;
        items.insert(id);
    }

    // Trim, discretize, snap.
    let mut cells: Vec<Cell> = Vec::new();
    for &(t, x, y) in &raw.samples {
        if raw.checkout_ts.is_some_and(|ts| t > ts) {
            break;
        }
        let Some(cell) = to_cell(layout, x, y) else {
            continue; // outside the store boundary
        };
        let Some(snapped) = snap_to_walkable(layout, cell) else {
            return Ok(PreprocessOutcome::Rejected(RejectReason::UnreachablePoint));
        };
        if cells.last() != Some(&snapped) {
            cells.push(snapped);
        }
    }
    if cells.is_empty() {
        return Ok(PreprocessOutcome::Rejected(RejectReason::EmptyAfterTrim));
    }

    // Post-checkout trim when no checkout timestamp was recorded: cut at the
    // first checkout-adjacent cell that is never followed by another
    // approach to a basket-item shelf.
    let mut checkout: Option<CheckoutId> = None;
    if raw.checkout_ts.is_none() {
        let shelf_cells: Vec<Cell> = items
            .iter()
            .flat_map(|&c| layout.shelves_of(c))
            .collect();
        let approaches_shelf = |c: Cell| {
            shelf_cells.iter().any(|&s| manhattan(c, s) <= ADJACENCY_RADIUS)
        };
        'scan: for i in 0..cells.len() {
            for (k, &ck) in layout.checkouts().iter().enumerate() {
                if manhattan(cells[i], ck) == 1 {
                    if cells[i + 1..].iter().all(|&c| !approaches_shelf(c)) {
                        cells.truncate(i + 1);
                        checkout = Some(CheckoutId(k as u16));
                        break 'scan;
                    }
                    break;
                }
            }
        }
    } else {
        // The checkout is whichever is adjacent to the final cell, else the
        // nearest one.
        let last = *cells.last().expect("non-empty");
        for (k, &ck) in layout.checkouts().iter().enumerate() {
            if manhattan(last, ck) == 1 {
                checkout = Some(CheckoutId(k as u16));
                break;
            }
        }
    }

    // Normalize the ends: start at the entrance, finish next to a checkout.
    if cells[0] != layout.entrance() {
        let prefix = shortest_path(layout, layout.entrance(), cells[0])?;
        let mut with_prefix = prefix;
        with_prefix.pop();
        with_prefix.extend(cells);
        cells = with_prefix;
    }
    let checkout = match checkout {
        Some(k) => k,
        None => {
            let last = *cells.last().expect("non-empty");
            let field = DistanceField::new(layout, last)?;
            let mut best: Option<(CheckoutId, Cell, u32)> = None;
            for (k, &ck) in layout.checkouts().iter().enumerate() {
                if let Some((stand, d)) = field.nearest_adjacent(layout, ck) {
                    if best.is_none_or(|(_, _, bd)| d < bd) {
                        best = Some((CheckoutId(k as u16), stand, d));
                    }
                }
            }
            let (k, stand, _) =
                best.ok_or(crate::nav::NavError::NotWalkable(last))?;
            let tail = shortest_path(layout, last, stand)?;
            cells.extend_from_slice(&tail[1..]);
            k
        }
    };

    // Bridge any remaining gaps with shortest paths and collapse repeats.
    let mut path: Vec<Cell> = vec![cells[0]];
    for &next in &cells[1..] {
        let cur = *path.last().expect("non-empty");
        if cur == next {
            continue;
        }
        if manhattan(cur, next) == 1 {
            path.push(next);
        } else {
            let bridge = shortest_path(layout, cur, next)?;
            path.extend_from_slice(&bridge[1..]);
        }
    }

    // Make sure the endpoint actually stands next to the chosen checkout.
    let checkout_cell = layout.checkout_cell(checkout).expect("checkout exists");
    let last = *path.last().expect("non-empty");
    if manhattan(last, checkout_cell) != 1 {
        let field = DistanceField::new(layout, last)?;
        let (stand, _) = field
            .nearest_adjacent(layout, checkout_cell)
            .ok_or(crate::nav::NavError::NotWalkable(checkout_cell))?;
        let tail = shortest_path(layout, last, stand)?;
        path.extend_from_slice(&tail[1..]);
    }

    let mut builder = TrajectoryBuilder::new(layout);
    builder.walk(&path)?;
    builder.checkout(checkout_cell)?;
    let basket = Basket { items, checkout, budget: None };
    Ok(PreprocessOutcome::Accepted(builder.finish(basket)))
}

/// Pickup attribution outcome: the trajectory rebuilt with pickup actions,
/// plus items whose shelves were never approached within the adjacency
/// radius (attributed at their global minimum-distance step and flagged).
#[derive(Clone, Debug)]
pub struct PickupInference {
    pub trajectory: Trajectory,
    /// (path step index, category) pairs for out-of-radius items.
    pub flagged: Vec<(usize, CategoryId)>,
}

/// Attributes one pickup per basket item at the step of minimum distance to
/// any shelf holding it, breaking ties toward the latest such step, and
/// rebuilds the action sequence with the pickups inserted.
pub fn infer_pickups(traj: &Trajectory, layout: &Layout) -> Result<PickupInference, IngestError> {
    // Recover the motion path (positions at each step, consecutive
    // duplicates collapsed) and the final checkout cell.
    let mut path: Vec<Cell> = Vec::new();
    for step in &traj.steps {
        if path.last() != Some(&step.cell) {
            path.push(step.cell);
        }
    }
    let checkout_cell = traj
        .final_checkout(layout)
        .and_then(|k| layout.checkout_cell(k));

    let mut scheduled: Vec<(usize, CategoryId, Cell)> = Vec::new();
    let mut flagged: Vec<(usize, CategoryId)> = Vec::new();
    for &item in &traj.conditions.items {
        let shelves = layout.shelves_of(item);
        if shelves.is_empty() {
            return Err(IngestError::UnknownCategory(layout.category(item).id.clone()));
        }
        let mut best: Option<(u32, usize, Cell)> = None;
        for (i, &cell) in path.iter().enumerate() {
            for &shelf in &shelves {
                let d = manhattan(cell, shelf);
                // Strictly-better distance wins; equal distance prefers the
                // latest step.
                if best.is_none_or(|(bd, bi, _)| d < bd || (d == bd && i >= bi)) {
                    best = Some((d, i, shelf));
                }
            }
        }
        let (d, i, shelf) = best.expect("non-empty path");
        if d <= ADJACENCY_RADIUS {
            scheduled.push((i, item, shelf));
        } else {
            flagged.push((i, item));
        }
    }
    scheduled.sort_by_key(|&(i, cat, _)| (i, cat));

    let mut builder = TrajectoryBuilder::new(layout);
    let mut cursor = 0usize;
    for &(i, cat, shelf) in &scheduled {
        builder.walk(&path[cursor..=i])?;
        cursor = i;
        builder.pickup(shelf, cat)?;
    }
    builder.walk(&path[cursor..])?;
    if let Some(ck) = checkout_cell {
        builder.checkout(ck)?;
    }
    Ok(PickupInference {
        trajectory: builder.finish(traj.conditions.clone()),
        flagged,
    })
}

pub fn read_raw_jsonl<R: BufRead>(r: R) -> Result<Vec<RawTrajectory>, IngestError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IngestError::Format(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_raw_jsonl<W: Write>(mut w: W, raws: &[RawTrajectory]) -> Result<(), IngestError> {
    for raw in raws {
        let line = serde_json::to_string(raw).map_err(|e| IngestError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
