//! The discretized store world: grid geometry, shelf contents, entrance and
//! checkouts, plus layout loading, validation, and editing.
//!
//! A [`Layout`] is immutable after construction and is validated on load:
//! exactly one entrance, at least one checkout, every floor cell reachable
//! from the entrance through 4-connected walkable cells, and every placement
//! on a shelf cell with a known category. Edits ([`Layout::reposition`])
//! return new values.
//!
//! Layout files are versioned TOML documents; unknown fields and unknown
//! grid characters are rejected rather than ignored.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

/// Grid coordinate, `(col, row)` with the origin at the top-left.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u16; 2]", into = "[u16; 2]")]
pub struct Cell {
    pub col: u16,
    pub row: u16,
}

impl Cell {
    pub fn new(col: u16, row: u16) -> Self {
        Cell { col, row }
    }
}

impl From<[u16; 2]> for Cell {
    fn from(v: [u16; 2]) -> Self {
        Cell { col: v[0], row: v[1] }
    }
}

impl From<Cell> for [u16; 2] {
    fn from(c: Cell) -> Self {
        [c.col, c.row]
    }
}

impl fmt::Debug for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Floor,
    Wall,
    Shelf,
    Entrance,
    Checkout,
}

impl CellKind {
    fn from_char(c: char) -> Option<CellKind> {
        match c {
            '.' => Some(CellKind::Floor),
            '#' => Some(CellKind::Wall),
            'S' => Some(CellKind::Shelf),
            'E' => Some(CellKind::Entrance),
            'C' => Some(CellKind::Checkout),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Floor => '.',
            CellKind::Wall => '#',
            CellKind::Shelf => 'S',
            CellKind::Entrance => 'E',
            CellKind::Checkout => 'C',
        }
    }
}

/// Index into a layout's category table.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CategoryId(pub u16);

/// Index into a layout's checkout list.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CheckoutId(pub u16);

/// A product category: price, margin, and (once estimated) an impulse rate.
///
/// The impulse rate is a probability-like ratio and may exceed 1 when the
/// purchase probability is high relative to the shelf-visit probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductProfile {
    pub id: String,
    pub name: String,
    pub price: f64,
    pub margin: f64,
    pub impulse_rate: Option<ImpulseRate>,
}

/// Impulse rate estimate for a product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImpulseRate {
    /// Purchase probability divided by shelf-visit probability. Never
    /// clamped; values above 1 are kept as-is.
    Finite(f64),
    /// The product was purchased but its shelves were never visited, so the
    /// ratio is undefined (reported as `Inf`).
    Unobserved,
}

impl ImpulseRate {
    pub fn finite(self) -> Option<f64> {
        match self {
            ImpulseRate::Finite(v) => Some(v),
            ImpulseRate::Unobserved => None,
        }
    }
}

impl fmt::Display for ImpulseRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImpulseRate::Finite(v) => write!(f, "{v}"),
            ImpulseRate::Unobserved => write!(f, "Inf"),
        }
    }
}

impl ProductProfile {
    /// Per-unit profit: price times margin.
    pub fn per_unit_profit(&self) -> f64 {
        self.price * self.margin
    }
}

/// A shopping trip's conditioning: items to buy, checkout to use, and an
/// optional target trip length in steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basket {
    pub items: BTreeSet<CategoryId>,
    pub checkout: CheckoutId,
    pub budget: Option<u32>,
}

impl Basket {
    pub fn new(items: impl IntoIterator<Item = CategoryId>, checkout: CheckoutId) -> Self {
        Basket {
            items: items.into_iter().collect(),
            checkout,
            budget: None,
        }
    }

    pub fn with_budget(mut self, budget: u32) -> Self {
        self.budget = Some(budget);
        self
    }
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout parse error: {0}")]
    Parse(String),
    #[error("unsupported layout file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("grid dimensions must be positive")]
    EmptyGrid,
    #[error("grid row {row} has {found} cells, expected {expected}")]
    RaggedRow { row: u16, found: usize, expected: usize },
    #[error("unknown cell character {ch:?} at {cell}")]
    UnknownCellChar { ch: char, cell: Cell },
    #[error("expected exactly one entrance, found {0}")]
    EntranceCount(usize),
    #[error("entrance field {field} does not match entrance cell {grid}")]
    EntranceMismatch { field: Cell, grid: Cell },
    #[error("entrance overlaps a {kind:?} cell at {cell}")]
    EntranceOverlap { kind: CellKind, cell: Cell },
    #[error("layout has no checkout cells")]
    NoCheckouts,
    #[error("checkouts field does not match the grid's checkout cells (field {field:?}, grid {grid:?})")]
    CheckoutMismatch { field: Vec<Cell>, grid: Vec<Cell> },
    #[error("checkout at {0} has no adjacent walkable cell")]
    CheckoutSealed(Cell),
    #[error("unknown category id {0:?}")]
    UnknownCategory(String),
    #[error("duplicate category id {0:?}")]
    DuplicateCategory(String),
    #[error("placement for {category:?} at {cell} is on a {kind:?} cell, not a shelf")]
    PlacementNotShelf { category: String, cell: Cell, kind: CellKind },
    #[error("shelf at {cell} holds two categories ({a:?} and {b:?})")]
    PlacementOverlap { cell: Cell, a: String, b: String },
    #[error("floor cell at {0} is unreachable from the entrance")]
    UnreachableFloor(Cell),
    #[error("invalid product profile for {id:?}: {reason}")]
    BadProfile { id: String, reason: String },
    #[error("reposition target {0} is not a shelf cell")]
    RepositionNotShelf(Cell),
    #[error("reposition target {cell} is occupied by {occupant:?}")]
    RepositionOccupied { cell: Cell, occupant: String },
    #[error("cell {0} is out of bounds")]
    OutOfBounds(Cell),
}

const LAYOUT_FILE_VERSION: u32 = 1;

fn default_cell_size() -> f64 {
    0.5
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    version: u32,
    width: u16,
    height: u16,
    #[serde(default = "default_cell_size")]
    cell_size_m: f64,
    grid: Vec<String>,
    entrance: [u16; 2],
    checkouts: Vec<[u16; 2]>,
    categories: Vec<CategoryFile>,
    #[serde(default)]
    placements: BTreeMap<String, Vec<[u16; 2]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryFile {
    id: String,
    name: String,
    price: f64,
    margin: f64,
}

/// The discretized store. Immutable after construction; edits return new
/// values, so a layout can be shared freely across rollout workers.
#[derive(Clone, Debug)]
pub struct Layout {
    width: u16,
    height: u16,
    cell_size_m: f64,
    kinds: Vec<CellKind>,
    entrance: Cell,
    checkouts: Vec<Cell>,
    categories: Vec<ProductProfile>,
    placements: BTreeMap<Cell, CategoryId>,
}

impl Layout {
    /// Parses and validates a layout document. Validation failures carry the
    /// offending cell coordinates.
    pub fn load(source: &str) -> Result<Layout, LayoutError> {
        let file: LayoutFile =
            toml::from_str(source).map_err(|e| LayoutError::Parse(e.to_string()))?;
        Layout::from_file(file)
    }

    fn from_file(file: LayoutFile) -> Result<Layout, LayoutError> {
        if file.version != LAYOUT_FILE_VERSION {
            return Err(LayoutError::Version {
                found: file.version,
                expected: LAYOUT_FILE_VERSION,
            });
        }
        if file.width == 0 || file.height == 0 {
            return Err(LayoutError::EmptyGrid);
        }
        if file.grid.len() != file.height as usize {
            return Err(LayoutError::RaggedRow {
                row: file.grid.len().min(u16::MAX as usize) as u16,
                found: file.grid.len(),
                expected: file.height as usize,
            });
        }

        let mut kinds = Vec::with_capacity(file.width as usize * file.height as usize);
        for (row, line) in file.grid.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != file.width as usize {
                return Err(LayoutError::RaggedRow {
                    row: row as u16,
                    found: chars.len(),
                    expected: file.width as usize,
                });
            }
            for (col, ch) in chars.into_iter().enumerate() {
                let kind = CellKind::from_char(ch).ok_or(LayoutError::UnknownCellChar {
                    ch,
                    cell: Cell::new(col as u16, row as u16),
                })?;
                kinds.push(kind);
            }
        }

        let mut categories = Vec::new();
        let mut seen = BTreeSet::new();
        for cat in &file.categories {
            if !seen.insert(cat.id.clone()) {
                return Err(LayoutError::DuplicateCategory(cat.id.clone()));
            }
            if cat.price < 0.0 {
                return Err(LayoutError::BadProfile {
                    id: cat.id.clone(),
                    reason: format!("price {} is negative", cat.price),
                });
            }
            if !(0.0..=1.0).contains(&cat.margin) {
                return Err(LayoutError::BadProfile {
                    id: cat.id.clone(),
                    reason: format!("margin {} outside [0, 1]", cat.margin),
                });
            }
            categories.push(ProductProfile {
                id: cat.id.clone(),
                name: cat.name.clone(),
                price: cat.price,
                margin: cat.margin,
                impulse_rate: None,
            });
        }

        let mut placements = BTreeMap::new();
        for (cat_id, cells) in &file.placements {
            let idx = categories
                .iter()
                .position(|c| &c.id == cat_id)
                .ok_or_else(|| LayoutError::UnknownCategory(cat_id.clone()))?;
            for &coord in cells {
                let cell = Cell::from(coord);
                if let Some(prev) = placements.insert(cell, CategoryId(idx as u16)) {
                    return Err(LayoutError::PlacementOverlap {
                        cell,
                        a: categories[prev.0 as usize].id.clone(),
                        b: cat_id.clone(),
                    });
                }
            }
        }

        let layout = Layout {
            width: file.width,
            height: file.height,
            cell_size_m: file.cell_size_m,
            kinds,
            entrance: Cell::from(file.entrance),
            checkouts: file.checkouts.into_iter().map(Cell::from).collect(),
            categories,
            placements,
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<(), LayoutError> {
        if !self.in_bounds(self.entrance) {
            return Err(LayoutError::OutOfBounds(self.entrance));
        }
        // The declared entrance must not sit on a shelf, wall, or checkout.
        if let kind @ (CellKind::Shelf | CellKind::Wall | CellKind::Checkout) =
            self.kind(self.entrance)
        {
            return Err(LayoutError::EntranceOverlap { kind, cell: self.entrance });
        }
        // Exactly one entrance in the grid, matching the declared coord.
        let entrances: Vec<Cell> = self
            .cells()
            .filter(|&c| self.kind(c) == CellKind::Entrance)
            .collect();
        if entrances.len() != 1 {
            return Err(LayoutError::EntranceCount(entrances.len()));
        }
        if self.kind(self.entrance) == CellKind::Floor {
            return Err(LayoutError::EntranceMismatch {
                field: self.entrance,
                grid: entrances[0],
            });
        }

        // Checkouts: the ordered field must cover the grid's checkout cells.
        let grid_checkouts: BTreeSet<Cell> = self
            .cells()
            .filter(|&c| self.kind(c) == CellKind::Checkout)
            .collect();
        if grid_checkouts.is_empty() {
            return Err(LayoutError::NoCheckouts);
        }
        let field_set: BTreeSet<Cell> = self.checkouts.iter().copied().collect();
        if field_set != grid_checkouts || field_set.len() != self.checkouts.len() {
            return Err(LayoutError::CheckoutMismatch {
                field: self.checkouts.clone(),
                grid: grid_checkouts.into_iter().collect(),
            });
        }
        for &c in &self.checkouts {
            if !self.neighbors4(c).iter().any(|&n| self.is_walkable(n)) {
                return Err(LayoutError::CheckoutSealed(c));
            }
        }

        // Placements must sit on shelf cells.
        for (&cell, &cat) in &self.placements {
            if !self.in_bounds(cell) {
                return Err(LayoutError::OutOfBounds(cell));
            }
            let kind = self.kind(cell);
            if kind != CellKind::Shelf {
                return Err(LayoutError::PlacementNotShelf {
                    category: self.categories[cat.0 as usize].id.clone(),
                    cell,
                    kind,
                });
            }
        }

        // Every floor cell reachable from the entrance via walkable cells.
        let mut visited = vec![false; self.kinds.len()];
        let mut queue = VecDeque::new();
        visited[self.index(self.entrance)] = true;
        queue.push_back(self.entrance);
        while let Some(cell) = queue.pop_front() {
            for n in self.neighbors4(cell) {
                let idx = self.index(n);
                if !visited[idx] && self.is_walkable(n) {
                    visited[idx] = true;
                    queue.push_back(n);
                }
            }
        }
        for cell in self.cells() {
            if self.kind(cell) == CellKind::Floor && !visited[self.index(cell)] {
                return Err(LayoutError::UnreachableFloor(cell));
            }
        }
        Ok(())
    }

    /// Serializes to the canonical TOML document. Loading the result yields
    /// an identical layout.
    pub fn to_file_string(&self) -> String {
        let mut grid = Vec::with_capacity(self.height as usize);
        for row in 0..self.height {
            let mut line = String::with_capacity(self.width as usize);
            for col in 0..self.width {
                line.push(self.kind(Cell::new(col, row)).to_char());
            }
            grid.push(line);
        }
        let mut placements: BTreeMap<String, Vec<[u16; 2]>> = BTreeMap::new();
        for (&cell, &cat) in &self.placements {
            placements
                .entry(self.categories[cat.0 as usize].id.clone())
                .or_default()
                .push(cell.into());
        }
        for cells in placements.values_mut() {
            cells.sort();
        }
        let file = LayoutFile {
            version: LAYOUT_FILE_VERSION,
            width: self.width,
            height: self.height,
            cell_size_m: self.cell_size_m,
            grid,
            entrance: self.entrance.into(),
            checkouts: self.checkouts.iter().map(|&c| c.into()).collect(),
            categories: self
                .categories
                .iter()
                .map(|c| CategoryFile {
                    id: c.id.clone(),
                    name: c.name.clone(),
                    price: c.price,
                    margin: c.margin,
                })
                .collect(),
            placements,
        };
        toml::to_string_pretty(&file).expect("layout serializes")
    }

    /// SHA-256 of the canonical serialization; used to key policy caches and
    /// run manifests.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn entrance(&self) -> Cell {
        self.entrance
    }

    pub fn checkouts(&self) -> &[Cell] {
        &self.checkouts
    }

    pub fn checkout_cell(&self, id: CheckoutId) -> Option<Cell> {
        self.checkouts.get(id.0 as usize).copied()
    }

    pub fn categories(&self) -> &[ProductProfile] {
        &self.categories
    }

    pub fn category(&self, id: CategoryId) -> &ProductProfile {
        &self.categories[id.0 as usize]
    }

    pub fn category_by_name(&self, id: &str) -> Option<CategoryId> {
        self.categories
            .iter()
            .position(|c| c.id == id)
            .map(|i| CategoryId(i as u16))
    }

    pub fn placements(&self) -> &BTreeMap<Cell, CategoryId> {
        &self.placements
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    fn index(&self, cell: Cell) -> usize {
        cell.row as usize * self.width as usize + cell.col as usize
    }

    pub fn kind(&self, cell: Cell) -> CellKind {
        self.kinds[self.index(cell)]
    }

    /// Cells an agent can stand on: floor and the entrance.
    pub fn is_walkable(&self, cell: Cell) -> bool {
        self.in_bounds(cell)
            && matches!(self.kind(cell), CellKind::Floor | CellKind::Entrance)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let width = self.width;
        let height = self.height;
        (0..height).flat_map(move |row| (0..width).map(move |col| Cell::new(col, row)))
    }

    /// In-bounds 4-neighbours in N, E, S, W order.
    pub fn neighbors4(&self, cell: Cell) -> Vec<Cell> {
        let mut out = Vec::with_capacity(4);
        let (c, r) = (cell.col as i32, cell.row as i32);
        for (dc, dr) in [(0, -1), (1, 0), (0, 1), (-1, 0)] {
            let (nc, nr) = (c + dc, r + dr);
            if nc >= 0 && nr >= 0 && (nc as u16) < self.width && (nr as u16) < self.height {
                out.push(Cell::new(nc as u16, nr as u16));
            }
        }
        out
    }

    pub fn shelf_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| self.kind(c) == CellKind::Shelf)
    }

    /// Shelf cells currently holding `category`, in (row, col) scan order.
    pub fn shelves_of(&self, category: CategoryId) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self
            .placements
            .iter()
            .filter(|&(_, &cat)| cat == category)
            .map(|(&cell, _)| cell)
            .collect();
        cells.sort_by_key(|c| (c.row, c.col));
        cells
    }

    /// Shelf cells with no category, in (row, col) scan order.
    pub fn unoccupied_shelves(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self
            .shelf_cells()
            .filter(|c| !self.placements.contains_key(c))
            .collect();
        cells.sort_by_key(|c| (c.row, c.col));
        cells
    }

    /// Walkable cells 4-adjacent to `cell`, in N, E, S, W order.
    pub fn adjacent_walkable(&self, cell: Cell) -> Vec<Cell> {
        self.neighbors4(cell)
            .into_iter()
            .filter(|&n| self.is_walkable(n))
            .collect()
    }

    /// Moves `category` so that it occupies exactly `targets`. Targets must
    /// be shelf cells not occupied by another category. The original layout
    /// is unchanged; wall, floor, entrance, and checkout cells are never
    /// touched.
    pub fn reposition(
        &self,
        category: CategoryId,
        targets: &[Cell],
    ) -> Result<Layout, LayoutError> {
        for &t in targets {
            if !self.in_bounds(t) {
                return Err(LayoutError::OutOfBounds(t));
            }
            if self.kind(t) != CellKind::Shelf {
                return Err(LayoutError::RepositionNotShelf(t));
            }
            if let Some(&occupant) = self.placements.get(&t) {
                if occupant != category {
                    return Err(LayoutError::RepositionOccupied {
                        cell: t,
                        occupant: self.categories[occupant.0 as usize].id.clone(),
                    });
                }
            }
        }
        let mut next = self.clone();
        next.placements.retain(|_, &mut cat| cat != category);
        for &t in targets {
            next.placements.insert(t, category);
        }
        next.validate()?;
        Ok(next)
    }

    /// Builds a basket from category id strings, validating against this
    /// layout. Checkout id must index an existing checkout.
    pub fn basket_from_names(
        &self,
        items: &[&str],
        checkout: CheckoutId,
    ) -> Result<Basket, LayoutError> {
        if self.checkout_cell(checkout).is_none() {
            return Err(LayoutError::OutOfBounds(Cell::new(u16::MAX, u16::MAX)));
        }
        let mut set = BTreeSet::new();
        for name in items {
            let id = self
                .category_by_name(name)
                .ok_or_else(|| LayoutError::UnknownCategory(name.to_string()))?;
            set.insert(id);
        }
        Ok(Basket {
            items: set,
            checkout,
            budget: None,
        })
    }
}
