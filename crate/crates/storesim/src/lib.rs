//! Agent-based simulation of customer movement in a gridworld retail store,
//! with analytics for shelf traffic, impulse-purchase rates, and product
//! placement decisions.
//!
//! The store is a rectangular grid of walls, shelves, checkouts, and floor
//! cells ([`grid::Layout`]). Customers are simulated as agents that enter at
//! the entrance, collect the items of a target basket, and leave through a
//! checkout. Three generators produce trajectories for a given basket:
//!
//! - [`generators::gen_tsp`] — the globally shortest route (exact Held-Karp),
//! - [`generators::gen_pnn`] — stochastic greedy routing, next item chosen
//!   with probability inversely proportional to distance,
//! - [`maxent`] — an exact maximum-entropy agent solved by soft value
//!   iteration, sampling from the Boltzmann distribution over trajectories.
//!
//! A fourth generator ([`generators::NoisyHumanModel`]) produces
//! detour-calibrated routes that stand in for real customers when none are
//! available.
//!
//! The [`analytics`] module turns trajectory sets into occupancy
//! distributions, divergence metrics (Jensen-Shannon, Wasserstein), shelf
//! traffic densities, basket clusters, and impulse-rate estimates. The
//! [`layout_opt`] module uses those estimates to reposition an impulse
//! product and score the resulting layout by expected impulse profit.
//!
//! Everything is deterministic given explicit seeds; see the `storesim`
//! binary for the command-line pipeline.

pub mod analytics;
pub mod cli;
pub mod generators;
pub mod grid;
pub mod ingest;
pub mod layout_opt;
pub mod maxent;
pub mod nav;
pub mod pipeline;
pub mod traj;
pub mod util;

pub mod fixtures {
    //! Bundled store definitions used by the test suite and as CLI examples.

    /// A 16x36 convenience store: 11 product categories, two checkouts,
    /// entrance at the bottom. See the file header for coordinate notes.
    pub const STORE_16X36: &str = include_str!("../fixtures/store_16x36.toml");

    /// Cluster profile for a coffee-and-pastry customer segment of the
    /// 16x36 store (two essential products, two impulse products).
    pub const CLUSTER2_PROFILE: &str = include_str!("../fixtures/cluster2_profile.json");

    /// A small room with a short and a long corridor around a dividing
    /// shelf wall; exercises multi-modal route recovery.
    pub const TWO_CORRIDOR: &str = include_str!("../fixtures/two_corridor.toml");
}

pub use grid::{Basket, CategoryId, Cell, CellKind, CheckoutId, Layout, ProductProfile};
pub use traj::{Action, Orientation, Step, Trajectory};
