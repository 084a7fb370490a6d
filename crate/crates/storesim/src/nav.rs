//! Shortest-path queries over the store grid.
//!
//! The grid is treated as a graph with 4-adjacent walkable cells as
//! connected nodes. All edges have unit weight, so breadth-first search is
//! exact. Distances are counted in cell steps; turns are free here (action
//! counts including turns are a trajectory statistic, not a nav concern).

use std::collections::VecDeque;

use thiserror::Error;

use crate::grid::{Cell, Layout};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NavError {
    #[error("cell {0} is not a walkable floor cell")]
    NotWalkable(Cell),
    #[error("no path between {from} and {to}")]
    NoPath { from: Cell, to: Cell },
    #[error("waypoints {a} and {b} are mutually unreachable")]
    UnreachablePair { a: Cell, b: Cell },
}

/// Breadth-first distances from a single source over walkable cells.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub source: Cell,
    width: u16,
    dist: Vec<u32>,
}

pub const UNREACHABLE: u32 = u32::MAX;

impl DistanceField {
    pub fn new(layout: &Layout, source: Cell) -> Result<DistanceField, NavError> {
        if !layout.is_walkable(source) {
            return Err(NavError::NotWalkable(source));
        }
        let mut dist = vec![UNREACHABLE; layout.width() as usize * layout.height() as usize];
        let idx = |c: Cell| c.row as usize * layout.width() as usize + c.col as usize;
        dist[idx(source)] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(source);
        while let Some(cell) = queue.pop_front() {
            let d = dist[idx(cell)];
            for n in layout.neighbors4(cell) {
                if layout.is_walkable(n) && dist[idx(n)] == UNREACHABLE {
                    dist[idx(n)] = d + 1;
                    queue.push_back(n);
                }
            }
        }
        Ok(DistanceField {
            source,
            width: layout.width(),
            dist,
        })
    }

    /// Step count to `cell`, or `None` if unreachable (or not walkable).
    pub fn distance(&self, cell: Cell) -> Option<u32> {
        let d = self.dist[cell.row as usize * self.width as usize + cell.col as usize];
        (d != UNREACHABLE).then_some(d)
    }

    /// Distance to the nearest walkable cell 4-adjacent to `target`,
    /// together with that cell. Adjacent cells tie-break in N, E, S, W
    /// order around the target.
    pub fn nearest_adjacent(&self, layout: &Layout, target: Cell) -> Option<(Cell, u32)> {
        let mut best: Option<(Cell, u32)> = None;
        for n in layout.adjacent_walkable(target) {
            if let Some(d) = self.distance(n) {
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((n, d));
                }
            }
        }
        best
    }
}

/// Minimal-length 4-connected path between walkable cells, inclusive of both
/// endpoints. Ties break deterministically by exploring neighbours in
/// N, E, S, W order.
pub fn shortest_path(layout: &Layout, a: Cell, b: Cell) -> Result<Vec<Cell>, NavError> {
    if !layout.is_walkable(a) {
        return Err(NavError::NotWalkable(a));
    }
    if !layout.is_walkable(b) {
        return Err(NavError::NotWalkable(b));
    }
    if a == b {
        return Ok(vec![a]);
    }
    let size = layout.width() as usize * layout.height() as usize;
    let idx = |c: Cell| c.row as usize * layout.width() as usize + c.col as usize;
    let mut parent: Vec<Option<Cell>> = vec![None; size];
    let mut seen = vec![false; size];
    seen[idx(a)] = true;
    let mut queue = VecDeque::new();
    queue.push_back(a);
    'bfs: while let Some(cell) = queue.pop_front() {
        for n in layout.neighbors4(cell) {
            if layout.is_walkable(n) && !seen[idx(n)] {
                seen[idx(n)] = true;
                parent[idx(n)] = Some(cell);
                if n == b {
                    break 'bfs;
                }
                queue.push_back(n);
            }
        }
    }
    if !seen[idx(b)] {
        return Err(NavError::NoPath { from: a, to: b });
    }
    let mut path = vec![b];
    let mut cur = b;
    while let Some(p) = parent[idx(cur)] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}

/// Pairwise shortest-path step counts between waypoints. `matrix[i][i]` is 0;
/// an unreachable pair is an error naming the offending waypoints.
pub fn waypoint_distances(layout: &Layout, waypoints: &[Cell]) -> Result<Vec<Vec<u32>>, NavError> {
    let mut matrix = vec![vec![0u32; waypoints.len()]; waypoints.len()];
    for (i, &w) in waypoints.iter().enumerate() {
        let field = DistanceField::new(layout, w)?;
        for (j, &v) in waypoints.iter().enumerate() {
            match field.distance(v) {
                Some(d) => matrix[i][j] = d,
                None => return Err(NavError::UnreachablePair { a: w, b: v }),
            }
        }
    }
    Ok(matrix)
}
