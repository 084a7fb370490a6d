//! Trajectories: time-ordered (state, action) sequences through a layout,
//! their construction from cell paths, validation against the gridworld
//! dynamics, and the line-delimited interchange format.
//!
//! All trajectories start at the entrance facing north. A forward action
//! moves one cell in the facing direction (blocked moves stay in place),
//! turns rotate in place, and the pickup/checkout action interacts with the
//! cell directly ahead.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Basket, CategoryId, Cell, CellKind, CheckoutId, Layout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
    ];

    pub fn index(self) -> usize {
        match self {
            Orientation::North => 0,
            Orientation::East => 1,
            Orientation::South => 2,
            Orientation::West => 3,
        }
    }

    pub fn from_index(i: usize) -> Orientation {
        Orientation::ALL[i % 4]
    }

    /// (dcol, drow) of one step ahead.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Orientation::North => (0, -1),
            Orientation::East => (1, 0),
            Orientation::South => (0, 1),
            Orientation::West => (-1, 0),
        }
    }

    pub fn turn_right(self) -> Orientation {
        Orientation::from_index(self.index() + 1)
    }

    pub fn turn_left(self) -> Orientation {
        Orientation::from_index(self.index() + 3)
    }

    /// Orientation that faces `to` from the 4-adjacent cell `from`.
    pub fn towards(from: Cell, to: Cell) -> Option<Orientation> {
        let dc = to.col as i32 - from.col as i32;
        let dr = to.row as i32 - from.row as i32;
        match (dc, dr) {
            (0, -1) => Some(Orientation::North),
            (1, 0) => Some(Orientation::East),
            (0, 1) => Some(Orientation::South),
            (-1, 0) => Some(Orientation::West),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Orientation::North => 'N',
            Orientation::East => 'E',
            Orientation::South => 'S',
            Orientation::West => 'W',
        }
    }

    pub fn from_char(c: char) -> Option<Orientation> {
        match c {
            'N' => Some(Orientation::North),
            'E' => Some(Orientation::East),
            'S' => Some(Orientation::South),
            'W' => Some(Orientation::West),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    PickupOrCheckout,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::PickupOrCheckout,
    ];

    pub fn to_char(self) -> char {
        match self {
            Action::Forward => 'F',
            Action::TurnLeft => 'L',
            Action::TurnRight => 'R',
            Action::PickupOrCheckout => 'P',
        }
    }

    pub fn from_char(c: char) -> Option<Action> {
        match c {
            'F' => Some(Action::Forward),
            'L' => Some(Action::TurnLeft),
            'R' => Some(Action::TurnRight),
            'P' => Some(Action::PickupOrCheckout),
            _ => None,
        }
    }
}

/// One timestep: the state before the action, and the action taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub cell: Cell,
    pub orientation: Orientation,
    pub action: Action,
}

/// A complete shopping trip.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub conditions: Basket,
    pub steps: Vec<Step>,
    /// (step index, category) for each pickup, in step order.
    pub pickups: Vec<(usize, CategoryId)>,
}

impl Trajectory {
    /// Number of forward moves; the spatial route length in cell steps.
    pub fn moves(&self) -> u32 {
        self.steps
            .iter()
            .filter(|s| s.action == Action::Forward)
            .count() as u32
    }

    /// Episode length in timesteps (actions).
    pub fn len_actions(&self) -> u32 {
        self.steps.len() as u32
    }

    /// Cells occupied per timestep, in order (revisits repeated).
    pub fn occupied_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.steps.iter().map(|s| s.cell)
    }

    /// The checkout this trajectory ends at, if it ends with a checkout
    /// action (horizon-ended trajectories return `None`).
    pub fn final_checkout(&self, layout: &Layout) -> Option<CheckoutId> {
        let last = self.steps.last()?;
        if last.action != Action::PickupOrCheckout {
            return None;
        }
        let ahead = facing_cell(layout, last.cell, last.orientation)?;
        if layout.kind(ahead) != CellKind::Checkout {
            return None;
        }
        layout
            .checkouts()
            .iter()
            .position(|&c| c == ahead)
            .map(|i| CheckoutId(i as u16))
    }

    /// Distinct basket categories picked up.
    pub fn collected(&self) -> BTreeSet<CategoryId> {
        self.pickups.iter().map(|&(_, c)| c).collect()
    }
}

/// Cell directly ahead of `(cell, orientation)`, if in bounds.
pub fn facing_cell(layout: &Layout, cell: Cell, orientation: Orientation) -> Option<Cell> {
    let (dc, dr) = orientation.delta();
    let col = cell.col as i32 + dc;
    let row = cell.row as i32 + dr;
    if col < 0 || row < 0 {
        return None;
    }
    let c = Cell::new(col as u16, row as u16);
    layout.in_bounds(c).then_some(c)
}

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("trajectory does not start at the entrance (starts at {0})")]
    BadStart(Cell),
    #[error("trajectory must start facing north")]
    BadStartOrientation,
    #[error("step {index}: state {found:?} inconsistent with dynamics (expected {expected:?})")]
    InconsistentStep {
        index: usize,
        expected: (Cell, Orientation),
        found: (Cell, Orientation),
    },
    #[error("step {index}: forward move target is not walkable")]
    BlockedMoveMismatch { index: usize },
    #[error("pickup at step {index} does not face a shelf holding the recorded category")]
    BadPickup { index: usize },
    #[error("walk segment does not continue from the current cell")]
    DisjointSegment,
    #[error("cells {a} and {b} are not 4-adjacent")]
    NotAdjacent { a: Cell, b: Cell },
    #[error("cannot face {target} from {from}: not adjacent")]
    CannotFace { from: Cell, target: Cell },
    #[error("record format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Applies one action to a state under the layout dynamics, ignoring pickup
/// effects (cell/orientation only).
pub fn apply_action(
    layout: &Layout,
    cell: Cell,
    orientation: Orientation,
    action: Action,
) -> (Cell, Orientation) {
    match action {
        Action::TurnLeft => (cell, orientation.turn_left()),
        Action::TurnRight => (cell, orientation.turn_right()),
        Action::PickupOrCheckout => (cell, orientation),
        Action::Forward => match facing_cell(layout, cell, orientation) {
            Some(ahead) if layout.is_walkable(ahead) => (ahead, orientation),
            _ => (cell, orientation),
        },
    }
}

/// Checks the trajectory invariants against a layout: starts at the entrance
/// facing north, every consecutive state pair is consistent with the
/// dynamics, and every recorded pickup faces a shelf holding its category.
pub fn validate(traj: &Trajectory, layout: &Layout) -> Result<(), TrajError> {
    let Some(first) = traj.steps.first() else {
        return Ok(());
    };
    if first.cell != layout.entrance() {
        return Err(TrajError::BadStart(first.cell));
    }
    if first.orientation != Orientation::North {
        return Err(TrajError::BadStartOrientation);
    }
    for i in 0..traj.steps.len() {
        let s = traj.steps[i];
        if !layout.is_walkable(s.cell) {
            return Err(TrajError::InconsistentStep {
                index: i,
                expected: (s.cell, s.orientation),
                found: (s.cell, s.orientation),
            });
        }
        if i + 1 < traj.steps.len() {
            let expected = apply_action(layout, s.cell, s.orientation, s.action);
            let next = traj.steps[i + 1];
            if (next.cell, next.orientation) != expected {
                return Err(TrajError::InconsistentStep {
                    index: i + 1,
                    expected,
                    found: (next.cell, next.orientation),
                });
            }
        }
    }
    for &(index, cat) in &traj.pickups {
        let ok = traj.steps.get(index).is_some_and(|s| {
            s.action == Action::PickupOrCheckout
                && facing_cell(layout, s.cell, s.orientation).is_some_and(|ahead| {
                    layout.kind(ahead) == CellKind::Shelf
                        && layout.placements().get(&ahead) == Some(&cat)
                })
        });
        if !ok {
            return Err(TrajError::BadPickup { index });
        }
    }
    Ok(())
}

/// Builds a dynamics-consistent action sequence from cell paths and
/// interaction events. Starts at the entrance facing north; turns are
/// inserted with the shortest rotation (a half turn is two right turns).
pub struct TrajectoryBuilder<'a> {
    layout: &'a Layout,
    cell: Cell,
    orientation: Orientation,
    steps: Vec<Step>,
    pickups: Vec<(usize, CategoryId)>,
}

impl<'a> TrajectoryBuilder<'a> {
    pub fn new(layout: &'a Layout) -> Self {
        TrajectoryBuilder {
            layout,
            cell: layout.entrance(),
            orientation: Orientation::North,
            steps: Vec::new(),
            pickups: Vec::new(),
        }
    }

    pub fn position(&self) -> Cell {
        self.cell
    }

    fn push(&mut self, action: Action) {
        self.steps.push(Step {
            cell: self.cell,
            orientation: self.orientation,
            action,
        });
        let (cell, orientation) =
            apply_action(self.layout, self.cell, self.orientation, action);
        self.cell = cell;
        self.orientation = orientation;
    }

    fn rotate_to(&mut self, target: Orientation) {
        let diff = (4 + target.index() - self.orientation.index()) % 4;
        match diff {
            0 => {}
            1 => self.push(Action::TurnRight),
            3 => self.push(Action::TurnLeft),
            2 => {
                self.push(Action::TurnRight);
                self.push(Action::TurnRight);
            }
            _ => unreachable!(),
        }
    }

    /// Walks along `path` (inclusive cells); `path[0]` must be the current
    /// position and consecutive cells must be 4-adjacent walkable cells.
    pub fn walk(&mut self, path: &[Cell]) -> Result<(), TrajError> {
        let Some(&first) = path.first() else {
            return Ok(());
        };
        if first != self.cell {
            return Err(TrajError::DisjointSegment);
        }
        for pair in path.windows(2) {
            let dir = Orientation::towards(pair[0], pair[1])
                .ok_or(TrajError::NotAdjacent { a: pair[0], b: pair[1] })?;
            self.rotate_to(dir);
            self.push(Action::Forward);
            debug_assert_eq!(self.cell, pair[1]);
        }
        Ok(())
    }

    /// Turns toward the adjacent `shelf` and picks up `category` from it.
    pub fn pickup(&mut self, shelf: Cell, category: CategoryId) -> Result<(), TrajError> {
        let dir = Orientation::towards(self.cell, shelf)
            .ok_or(TrajError::CannotFace { from: self.cell, target: shelf })?;
        self.rotate_to(dir);
        self.pickups.push((self.steps.len(), category));
        self.push(Action::PickupOrCheckout);
        Ok(())
    }

    /// Turns toward the adjacent `checkout` cell and checks out.
    pub fn checkout(&mut self, checkout: Cell) -> Result<(), TrajError> {
        let dir = Orientation::towards(self.cell, checkout)
            .ok_or(TrajError::CannotFace { from: self.cell, target: checkout })?;
        self.rotate_to(dir);
        self.push(Action::PickupOrCheckout);
        Ok(())
    }

    pub fn finish(self, conditions: Basket) -> Trajectory {
        Trajectory {
            conditions,
            steps: self.steps,
            pickups: self.pickups,
        }
    }
}

// ---------------------------------------------------------------------------
// Line-delimited interchange format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CondRecord {
    items: Vec<String>,
    checkout: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<u32>,
}

/// One trajectory per line: conditions, steps as `[col, row, "N", "F"]`
/// tuples, pickups as `[step_index, category_id]` pairs.
#[derive(Serialize, Deserialize)]
pub struct TrajRecord {
    conditions: CondRecord,
    steps: Vec<(u16, u16, char, char)>,
    pickups: Vec<(usize, String)>,
}

impl TrajRecord {
    pub fn from_trajectory(traj: &Trajectory, layout: &Layout) -> TrajRecord {
        TrajRecord {
            conditions: CondRecord {
                items: traj
                    .conditions
                    .items
                    .iter()
                    .map(|&c| layout.category(c).id.clone())
                    .collect(),
                checkout: traj.conditions.checkout.0,
                budget: traj.conditions.budget,
            },
            steps: traj
                .steps
                .iter()
                .map(|s| (s.cell.col, s.cell.row, s.orientation.to_char(), s.action.to_char()))
                .collect(),
            pickups: traj
                .pickups
                .iter()
                .map(|&(i, c)| (i, layout.category(c).id.clone()))
                .collect(),
        }
    }

    pub fn into_trajectory(self, layout: &Layout) -> Result<Trajectory, TrajError> {
        let mut items = BTreeSet::new();
        for name in &self.conditions.items {
            let id = layout
                .category_by_name(name)
                .ok_or_else(|| TrajError::Format(format!("unknown category {name:?}")))?;
            items.insert(id);
        }
        let mut steps = Vec::with_capacity(self.steps.len());
        for (col, row, o, a) in self.steps {
            steps.push(Step {
                cell: Cell::new(col, row),
                orientation: Orientation::from_char(o)
                    .ok_or_else(|| TrajError::Format(format!("bad orientation {o:?}")))?,
                action: Action::from_char(a)
                    .ok_or_else(|| TrajError::Format(format!("bad action {a:?}")))?,
            });
        }
        let mut pickups = Vec::with_capacity(self.pickups.len());
        for (i, name) in self.pickups {
            let id = layout
                .category_by_name(&name)
                .ok_or_else(|| TrajError::Format(format!("unknown category {name:?}")))?;
            pickups.push((i, id));
        }
        Ok(Trajectory {
            conditions: Basket {
                items,
                checkout: CheckoutId(self.conditions.checkout),
                budget: self.conditions.budget,
            },
            steps,
            pickups,
        })
    }
}

pub fn write_jsonl<W: Write>(
    mut w: W,
    trajs: &[Trajectory],
    layout: &Layout,
) -> Result<(), TrajError> {
    for t in trajs {
        let rec = TrajRecord::from_trajectory(t, layout);
        let line = serde_json::to_string(&rec).map_err(|e| TrajError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R, layout: &Layout) -> Result<Vec<Trajectory>, TrajError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajRecord =
            serde_json::from_str(&line).map_err(|e| TrajError::Format(e.to_string()))?;
        out.push(rec.into_trajectory(layout)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Layout;

    fn store() -> Layout {
        Layout::load(
            r#"
version = 1
width = 5
height = 4
grid = ["..S.C", ".....", ".....", "E...."]
entrance = [0, 3]
checkouts = [[4, 0]]

[[categories]]
id = "soda"
name = "Soda"
price = 3.59
margin = 0.05

[placements]
soda = [[2, 0]]
"#,
        )
        .unwrap()
    }

    #[test]
    fn builder_inserts_shortest_rotations() {
        let layout = store();
        let mut b = TrajectoryBuilder::new(&layout);
        // North -> East is a single right turn.
        b.walk(&[Cell::new(0, 3), Cell::new(1, 3)]).unwrap();
        // East -> North is a single left turn.
        b.walk(&[Cell::new(1, 3), Cell::new(1, 2)]).unwrap();
        let basket = layout.basket_from_names(&[], CheckoutId(0)).unwrap();
        let t = b.finish(basket);
        let actions: Vec<Action> = t.steps.iter().map(|s| s.action).collect();
        assert_eq!(
            actions,
            vec![Action::TurnRight, Action::Forward, Action::TurnLeft, Action::Forward]
        );
        validate(&t, &layout).unwrap();
    }

    #[test]
    fn half_turn_is_two_turns() {
        let layout = store();
        let mut b = TrajectoryBuilder::new(&layout);
        b.walk(&[Cell::new(0, 3), Cell::new(0, 2), Cell::new(0, 3)]).unwrap();
        let basket = layout.basket_from_names(&[], CheckoutId(0)).unwrap();
        let t = b.finish(basket);
        let turns = t
            .steps
            .iter()
            .filter(|s| matches!(s.action, Action::TurnLeft | Action::TurnRight))
            .count();
        assert_eq!(turns, 2);
        assert_eq!(t.moves(), 2);
        validate(&t, &layout).unwrap();
    }

    #[test]
    fn pickup_and_checkout_roundtrip() {
        let layout = store();
        let soda = layout.category_by_name("soda").unwrap();
        let basket = layout.basket_from_names(&["soda"], CheckoutId(0)).unwrap();
        let mut b = TrajectoryBuilder::new(&layout);
        b.walk(&[
            Cell::new(0, 3),
            Cell::new(0, 2),
            Cell::new(0, 1),
            Cell::new(1, 1),
            Cell::new(2, 1),
        ])
        .unwrap();
        b.pickup(Cell::new(2, 0), soda).unwrap();
        b.walk(&[Cell::new(2, 1), Cell::new(3, 1), Cell::new(4, 1)]).unwrap();
        b.checkout(Cell::new(4, 0)).unwrap();
        let t = b.finish(basket);
        validate(&t, &layout).unwrap();
        assert_eq!(t.final_checkout(&layout), Some(CheckoutId(0)));
        assert_eq!(t.collected().len(), 1);

        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&t), &layout).unwrap();
        let back = read_jsonl(buf.as_slice(), &layout).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], t);
    }

    #[test]
    fn validate_rejects_teleport() {
        let layout = store();
        let basket = layout.basket_from_names(&[], CheckoutId(0)).unwrap();
        let t = Trajectory {
            conditions: basket,
            steps: vec![
                Step {
                    cell: Cell::new(0, 3),
                    orientation: Orientation::North,
                    action: Action::Forward,
                },
                Step {
                    cell: Cell::new(3, 1),
                    orientation: Orientation::North,
                    action: Action::Forward,
                },
            ],
            pickups: vec![],
        };
        assert!(matches!(
            validate(&t, &layout),
            Err(TrajError::InconsistentStep { .. })
        ));
    }
}
