//! Distributions and scalar metrics over trajectory sets: occupancy
//! heatmaps, Jensen-Shannon divergence, Wasserstein distance, shelf-traffic
//! density, basket clustering, and impulse-rate estimation.

mod cluster;
mod emd;

pub use cluster::{
    cluster_baskets, weighted_indicators, ClusterProfile, ClusterProfileFile, Clustering,
    IMPULSE_THRESHOLD,
};
pub use emd::wasserstein;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::grid::{Basket, CategoryId, Cell, CellKind, ImpulseRate, Layout};
use crate::traj::Trajectory;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("empty trajectory set")]
    EmptySet,
    #[error("distribution shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u16, u16, u16, u16),
    #[error("total mass differs beyond tolerance: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("clustering needs k_max >= 2 (got {0})")]
    BadKMax(usize),
    #[error("clustering needs at least one basket")]
    NoBaskets,
    #[error("min-cost flow failed to converge")]
    FlowDiverged,
}

/// Normalized per-cell visit mass of a trajectory set. Every occupied cell
/// of every timestep counts, so revisits accumulate; the total is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyDistribution {
    width: u16,
    height: u16,
    mass: Vec<f64>,
}

impl OccupancyDistribution {
    pub fn from_mass(width: u16, height: u16, mass: Vec<f64>) -> OccupancyDistribution {
        assert_eq!(mass.len(), width as usize * height as usize);
        OccupancyDistribution { width, height, mass }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.mass[cell.row as usize * self.width as usize + cell.col as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        let width = self.width;
        self.mass.iter().enumerate().map(move |(i, &m)| {
            let row = (i / width as usize) as u16;
            let col = (i % width as usize) as u16;
            (Cell::new(col, row), m)
        })
    }

    pub fn same_shape(&self, other: &OccupancyDistribution) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Numeric grid text: one row per line, cell masses separated by spaces.
    pub fn to_grid_text(&self) -> String {
        let mut out = String::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if col > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{:.9e}", self.get(Cell::new(col, row))));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-timestep occupancy counts normalized to total mass 1.
pub fn occupancy(
    trajs: &[Trajectory],
    layout: &Layout,
) -> Result<OccupancyDistribution, AnalyticsError> {
    let mut counts = vec![0u64; layout.width() as usize * layout.height() as usize];
    let mut total = 0u64;
    for t in trajs {
        for cell in t.occupied_cells() {
            counts[cell.row as usize * layout.width() as usize + cell.col as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(AnalyticsError::EmptySet);
    }
    let mass = counts.into_iter().map(|c| c as f64 / total as f64).collect();
    Ok(OccupancyDistribution::from_mass(layout.width(), layout.height(), mass))
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`. Zero-mass cells contribute
/// nothing (`0 log 0 = 0`).
pub fn jsd(p: &OccupancyDistribution, q: &OccupancyDistribution) -> Result<f64, AnalyticsError> {
    if !p.same_shape(q) {
        return Err(AnalyticsError::ShapeMismatch(p.width, p.height, q.width, q.height));
    }
    let mut total = 0.0;
    for (pi, qi) in p.mass.iter().zip(q.mass.iter()) {
        let m = 0.5 * (pi + qi);
        if *pi > 0.0 {
            total += 0.5 * pi * (pi / m).log2();
        }
        if *qi > 0.0 {
            total += 0.5 * qi * (qi / m).log2();
        }
    }
    // Clamp tiny negative rounding noise.
    Ok(total.max(0.0))
}

/// Probability that each shelf is approached during a trip.
///
/// A trajectory visits a shelf when at least one of its steps stands on a
/// cell 4-adjacent to that shelf; the count is per-trajectory binary and
/// normalized by the number of trajectories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShelfTraffic {
    visits: BTreeMap<Cell, f64>,
}

impl ShelfTraffic {
    pub fn get(&self, shelf: Cell) -> f64 {
        self.visits.get(&shelf).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.visits.iter().map(|(&c, &v)| (c, v))
    }

    /// Sum of visit probabilities over a category's shelves, capped at 1.
    pub fn visit_probability(&self, layout: &Layout, category: CategoryId) -> f64 {
        let sum: f64 = layout.shelves_of(category).iter().map(|&s| self.get(s)).sum();
        sum.min(1.0)
    }
}

pub fn shelf_traffic(
    trajs: &[Trajectory],
    layout: &Layout,
) -> Result<ShelfTraffic, AnalyticsError> {
    if trajs.is_empty() {
        return Err(AnalyticsError::EmptySet);
    }
    let mut counts: BTreeMap<Cell, u64> = BTreeMap::new();
    for shelf in layout.shelf_cells() {
        counts.insert(shelf, 0);
    }
    for t in trajs {
        let mut touched: BTreeSet<Cell> = BTreeSet::new();
        for step_cell in t.occupied_cells() {
            for n in layout.neighbors4(step_cell) {
                if layout.kind(n) == CellKind::Shelf {
                    touched.insert(n);
                }
            }
        }
        for shelf in touched {
            *counts.get_mut(&shelf).expect("shelf cell") += 1;
        }
    }
    let n = trajs.len() as f64;
    Ok(ShelfTraffic {
        visits: counts.into_iter().map(|(c, k)| (c, k as f64 / n)).collect(),
    })
}

/// Impulse rate from a purchase probability and a shelf-visit probability:
/// the probability a product is bought given its shelf was seen. Zero
/// purchases give rate 0; purchases without any visit are `Unobserved`.
pub fn impulse_rate_from(p_purchase: f64, p_visit: f64) -> ImpulseRate {
    if p_purchase == 0.0 {
        ImpulseRate::Finite(0.0)
    } else if p_visit == 0.0 {
        ImpulseRate::Unobserved
    } else {
        ImpulseRate::Finite(p_purchase / p_visit)
    }
}

/// Fills per-category shelf-visit probabilities and impulse rates for a
/// cluster from trajectories of customers shopping only its essential
/// products. Rates are never clamped; values above 1 and `Unobserved`
/// entries pass through.
pub fn impulse_rates(
    profile: &ClusterProfile,
    essential_trajs: &[Trajectory],
    layout: &Layout,
) -> Result<ClusterProfile, AnalyticsError> {
    let theta = shelf_traffic(essential_trajs, layout)?;
    let mut out = profile.clone();
    for cat_idx in 0..out.purchase_prob.len() {
        let cat = CategoryId(cat_idx as u16);
        if !out.is_impulse(cat) {
            continue;
        }
        let p_visit = theta.visit_probability(layout, cat);
        out.visit_prob[cat_idx] = Some(p_visit);
        out.impulse_rate[cat_idx] =
            Some(impulse_rate_from(out.purchase_prob[cat_idx], p_visit));
    }
    Ok(out)
}

/// Key identifying a basket's conditioning for grouping: item set plus
/// checkout.
pub type BasketKey = (Vec<CategoryId>, u16);

pub fn basket_key(basket: &Basket) -> BasketKey {
    (basket.items.iter().copied().collect(), basket.checkout.0)
}

/// Groups trajectories by their conditioning.
pub fn group_by_basket(trajs: &[Trajectory]) -> BTreeMap<BasketKey, Vec<&Trajectory>> {
    let mut groups: BTreeMap<BasketKey, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajs {
        groups.entry(basket_key(&t.conditions)).or_default().push(t);
    }
    groups
}

/// Divergences of a method's trajectory set against a reference set:
/// pooled-heatmap JSD/WD plus per-basket averages weighted by the reference
/// set's basket frequencies.
#[derive(Clone, Debug)]
pub struct Divergences {
    pub jsd_pooled: f64,
    pub wd_pooled: f64,
    pub jsd_avg: f64,
    pub wd_avg: f64,
}

pub fn divergences(
    reference: &[Trajectory],
    method: &[Trajectory],
    layout: &Layout,
) -> Result<Divergences, AnalyticsError> {
    let ref_pooled = occupancy(reference, layout)?;
    let m_pooled = occupancy(method, layout)?;
    let jsd_pooled = jsd(&ref_pooled, &m_pooled)?;
    let wd_pooled = wasserstein(&ref_pooled, &m_pooled)?;

    let ref_groups = group_by_basket(reference);
    let m_groups = group_by_basket(method);
    let mut jsd_avg = 0.0;
    let mut wd_avg = 0.0;
    let mut weight_total = 0.0;
    for (key, ref_trajs) in &ref_groups {
        let Some(m_trajs) = m_groups.get(key) else {
            continue;
        };
        let weight = ref_trajs.len() as f64 / reference.len() as f64;
        let ref_occ = occupancy_refs(ref_trajs, layout)?;
        let m_occ = occupancy_refs(m_trajs, layout)?;
        jsd_avg += weight * jsd(&ref_occ, &m_occ)?;
        wd_avg += weight * wasserstein(&ref_occ, &m_occ)?;
        weight_total += weight;
    }
    if weight_total > 0.0 {
        jsd_avg /= weight_total;
        wd_avg /= weight_total;
    }
    Ok(Divergences { jsd_pooled, wd_pooled, jsd_avg, wd_avg })
}

fn occupancy_refs(
    trajs: &[&Trajectory],
    layout: &Layout,
) -> Result<OccupancyDistribution, AnalyticsError> {
    let owned: Vec<Trajectory> = trajs.iter().map(|&t| t.clone()).collect();
    occupancy(&owned, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CheckoutId, Layout};
    use crate::traj::{Action, Orientation, Step};

    fn store() -> Layout {
        Layout::load(
            r#"
version = 1
width = 5
height = 4
grid = ["..S.C", ".....", "..S..", "E...."]
entrance = [0, 3]
checkouts = [[4, 0]]

[[categories]]
id = "a"
name = "A"
price = 1.0
margin = 0.1

[[categories]]
id = "b"
name = "B"
price = 1.0
margin = 0.1

[placements]
a = [[2, 0]]
b = [[2, 2]]
"#,
        )
        .unwrap()
    }

    fn walk_traj(layout: &Layout, cells: &[Cell]) -> Trajectory {
        // A synthetic trajectory over the given cells (steps forged for
        // occupancy/traffic tests; not dynamics-checked).
        let basket = layout.basket_from_names(&[], CheckoutId(0)).unwrap();
        Trajectory {
            conditions: basket,
            steps: cells
                .iter()
                .map(|&c| Step { cell: c, orientation: Orientation::North, action: Action::Forward })
                .collect(),
            pickups: vec![],
        }
    }

    #[test]
    fn occupancy_uniform_over_four_distinct_cells() {
        let layout = store();
        let t = walk_traj(
            &layout,
            &[Cell::new(0, 3), Cell::new(1, 3), Cell::new(2, 3), Cell::new(3, 3)],
        );
        let occ = occupancy(std::slice::from_ref(&t), &layout).unwrap();
        for col in 0..4 {
            assert!((occ.get(Cell::new(col, 3)) - 0.25).abs() < 1e-12);
        }
        assert!((occ.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn occupancy_counts_revisits() {
        let layout = store();
        let t = walk_traj(
            &layout,
            &[Cell::new(0, 3), Cell::new(1, 3), Cell::new(0, 3), Cell::new(1, 2)],
        );
        let occ = occupancy(std::slice::from_ref(&t), &layout).unwrap();
        assert!((occ.get(Cell::new(0, 3)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occupancy_invariant_to_duplication() {
        let layout = store();
        let t = walk_traj(&layout, &[Cell::new(0, 3), Cell::new(1, 3)]);
        let one = occupancy(std::slice::from_ref(&t), &layout).unwrap();
        let two = occupancy(&[t.clone(), t], &layout).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn occupancy_rejects_empty() {
        let layout = store();
        assert!(matches!(occupancy(&[], &layout), Err(AnalyticsError::EmptySet)));
    }

    #[test]
    fn jsd_identity_and_disjoint_bounds() {
        let p = OccupancyDistribution::from_mass(2, 2, vec![0.5, 0.5, 0.0, 0.0]);
        let q = OccupancyDistribution::from_mass(2, 2, vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jsd_matches_direct_summation() {
        let p = OccupancyDistribution::from_mass(2, 2, vec![0.5, 0.5, 0.0, 0.0]);
        let q = OccupancyDistribution::from_mass(2, 2, vec![0.25, 0.25, 0.25, 0.25]);
        // Direct evaluation of 0.5 KL(P||M) + 0.5 KL(Q||M) in log base 2:
        // M = (0.375, 0.375, 0.125, 0.125)
        // KL(P||M) = 2 * 0.5 * log2(0.5/0.375)        = log2(4/3)
        // KL(Q||M) = 2 * 0.25 * log2(0.25/0.375)
        //          + 2 * 0.25 * log2(0.25/0.125)      = 0.5 log2(2/3) + 0.5
        let expected = 0.5 * (4.0f64 / 3.0).log2()
            + 0.5 * (0.5 * (2.0f64 / 3.0).log2() + 0.5);
        let got = jsd(&p, &q).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        assert!((got - 0.3112781244591328).abs() < 1e-12);
    }

    #[test]
    fn jsd_shape_mismatch_is_error() {
        let p = OccupancyDistribution::from_mass(2, 2, vec![0.25; 4]);
        let q = OccupancyDistribution::from_mass(4, 1, vec![0.25; 4]);
        assert!(matches!(jsd(&p, &q), Err(AnalyticsError::ShapeMismatch(..))));
    }

    #[test]
    fn shelf_traffic_binary_per_trajectory() {
        let layout = store();
        // Hugs the shelf at (2,0) via (2,1); never near (2,2)'s other side...
        let t = walk_traj(&layout, &[Cell::new(2, 1), Cell::new(3, 1)]);
        let theta = shelf_traffic(std::slice::from_ref(&t), &layout).unwrap();
        assert_eq!(theta.get(Cell::new(2, 0)), 1.0);
        assert_eq!(theta.get(Cell::new(2, 2)), 1.0); // (2,1) is adjacent to both shelves
        let far = walk_traj(&layout, &[Cell::new(0, 3)]);
        let theta2 = shelf_traffic(std::slice::from_ref(&far), &layout).unwrap();
        assert_eq!(theta2.get(Cell::new(2, 0)), 0.0);
        assert_eq!(theta2.get(Cell::new(2, 2)), 0.0);
    }

    #[test]
    fn shelf_traffic_monotone_under_union() {
        // Probabilities stay in [0, 1]; visit counts (theta times n) never
        // drop when more trajectories are pooled in.
        let layout = store();
        let a = walk_traj(&layout, &[Cell::new(2, 1)]);
        let b = walk_traj(&layout, &[Cell::new(0, 3)]);
        let only_a = shelf_traffic(std::slice::from_ref(&a), &layout).unwrap();
        let both = shelf_traffic(&[a, b], &layout).unwrap();
        for (cell, v) in both.iter() {
            assert!((0.0..=1.0).contains(&v));
            let count_a = only_a.get(cell) * 1.0;
            let count_both = v * 2.0;
            assert!(count_both >= count_a - 1e-12);
        }
        assert!((only_a.get(Cell::new(2, 0)) - 1.0).abs() < 1e-12);
        assert!((both.get(Cell::new(2, 0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn impulse_rate_semantics() {
        assert_eq!(impulse_rate_from(0.0, 0.5), ImpulseRate::Finite(0.0));
        assert_eq!(impulse_rate_from(0.0363, 0.0), ImpulseRate::Unobserved);
        match impulse_rate_from(0.0363, 0.3157) {
            ImpulseRate::Finite(v) => assert!((v - 0.115).abs() < 5e-4, "got {v}"),
            other => panic!("unexpected {other:?}"),
        }
        // Rates above 1 are preserved, never clamped.
        match impulse_rate_from(0.9, 0.125) {
            ImpulseRate::Finite(v) => assert!((v - 7.2).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
