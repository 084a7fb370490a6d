//! Basket clustering: weighted k-means over category-indicator vectors with
//! the cluster count chosen at the elbow of the within-cluster
//! sum-of-squares curve (largest second difference).

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::grid::{CategoryId, ImpulseRate, Layout};

/// Classification threshold: products purchased in under 20% of a cluster's
/// trips count as impulse products.
pub const IMPULSE_THRESHOLD: f64 = 0.20;

/// Per-cluster purchase behaviour: purchase probability per category, plus
/// (once estimated) shelf-visit probabilities and impulse rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterProfile {
    pub cluster_id: usize,
    /// Fraction of total basket weight assigned to this cluster.
    pub weight: f64,
    /// Indexed by `CategoryId`.
    pub purchase_prob: Vec<f64>,
    pub visit_prob: Vec<Option<f64>>,
    pub impulse_rate: Vec<Option<ImpulseRate>>,
}

impl ClusterProfile {
    pub fn new(cluster_id: usize, weight: f64, purchase_prob: Vec<f64>) -> ClusterProfile {
        let n = purchase_prob.len();
        ClusterProfile {
            cluster_id,
            weight,
            purchase_prob,
            visit_prob: vec![None; n],
            impulse_rate: vec![None; n],
        }
    }

    /// Impulse products: purchased sometimes, but in under
    /// [`IMPULSE_THRESHOLD`] of trips.
    pub fn is_impulse(&self, cat: CategoryId) -> bool {
        let p = self.purchase_prob[cat.0 as usize];
        p > 0.0 && p < IMPULSE_THRESHOLD
    }

    /// Essential products: purchase probability at or above the threshold.
    pub fn is_essential(&self, cat: CategoryId) -> bool {
        self.purchase_prob[cat.0 as usize] >= IMPULSE_THRESHOLD
    }

    pub fn impulse_categories(&self) -> Vec<CategoryId> {
        (0..self.purchase_prob.len() as u16)
            .map(CategoryId)
            .filter(|&c| self.is_impulse(c))
            .collect()
    }

    pub fn essential_categories(&self) -> Vec<CategoryId> {
        (0..self.purchase_prob.len() as u16)
            .map(CategoryId)
            .filter(|&c| self.is_essential(c))
            .collect()
    }
}

/// Serialized cluster profile keyed by category id strings.
#[derive(Serialize, Deserialize)]
pub struct ClusterProfileFile {
    pub cluster_id: usize,
    pub weight: f64,
    pub purchase_prob: BTreeMap<String, f64>,
    #[serde(default)]
    pub visit_prob: BTreeMap<String, f64>,
    #[serde(default)]
    pub impulse_rate: BTreeMap<String, String>,
}

impl ClusterProfile {
    pub fn to_file(&self, layout: &Layout) -> ClusterProfileFile {
        let name = |i: usize| layout.categories()[i].id.clone();
        ClusterProfileFile {
            cluster_id: self.cluster_id,
            weight: self.weight,
            purchase_prob: self
                .purchase_prob
                .iter()
                .enumerate()
                .map(|(i, &p)| (name(i), p))
                .collect(),
            visit_prob: self
                .visit_prob
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (name(i), v)))
                .collect(),
            impulse_rate: self
                .impulse_rate
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|r| (name(i), r.to_string())))
                .collect(),
        }
    }

    pub fn from_file(file: &ClusterProfileFile, layout: &Layout) -> Option<ClusterProfile> {
        let n = layout.categories().len();
        let mut profile = ClusterProfile::new(file.cluster_id, file.weight, vec![0.0; n]);
        for (id, &p) in &file.purchase_prob {
            let cat = layout.category_by_name(id)?;
            profile.purchase_prob[cat.0 as usize] = p;
        }
        for (id, &v) in &file.visit_prob {
            let cat = layout.category_by_name(id)?;
            profile.visit_prob[cat.0 as usize] = Some(v);
        }
        for (id, r) in &file.impulse_rate {
            let cat = layout.category_by_name(id)?;
            let rate = if r == "Inf" {
                ImpulseRate::Unobserved
            } else {
                ImpulseRate::Finite(r.parse().ok()?)
            };
            profile.impulse_rate[cat.0 as usize] = Some(rate);
        }
        Some(profile)
    }
}

/// Clustering outcome: the chosen k, profiles, and the WCSS curve that
/// selected it (index i holds WCSS at k = i + 1).
#[derive(Clone, Debug)]
pub struct Clustering {
    pub k: usize,
    pub profiles: Vec<ClusterProfile>,
    pub wcss_curve: Vec<f64>,
}

/// Aggregates a basket list into distinct indicator vectors with frequency
/// weights.
pub fn weighted_indicators(
    baskets: &[Vec<CategoryId>],
    n_categories: usize,
) -> Vec<(Vec<f64>, f64)> {
    let mut counts: BTreeMap<Vec<u16>, u64> = BTreeMap::new();
    for basket in baskets {
        let mut key: Vec<u16> = basket.iter().map(|c| c.0).collect();
        key.sort_unstable();
        key.dedup();
        *counts.entry(key).or_insert(0) += 1;
    }
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(key, count)| {
            let mut ind = vec![0.0; n_categories];
            for c in key {
                ind[c as usize] = 1.0;
            }
            (ind, count as f64 / total as f64)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted Lloyd iterations from a k-means++ seeding; returns assignments
/// and the within-cluster sum of squares.
fn kmeans_once(
    points: &[(Vec<f64>, f64)],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, f64) {
    let dim = points[0].0.len();
    // k-means++ seeding over weighted points.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = pick_weighted(points.iter().map(|(_, w)| *w), rng);
    centroids.push(points[first].0.clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|(p, w)| {
                w * centroids
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            pick_weighted(d2.iter().copied(), rng)
        } else {
            pick_weighted(points.iter().map(|(_, w)| *w), rng)
        };
        centroids.push(points[next].0.clone());
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, (p, _)) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| {
                    sq_dist(p, &centroids[a])
                        .partial_cmp(&sq_dist(p, &centroids[b]))
                        .unwrap()
                })
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut weights = vec![0.0; k];
        for (i, (p, w)) in points.iter().enumerate() {
            weights[assign[i]] += w;
            for (s, x) in sums[assign[i]].iter_mut().zip(p) {
                *s += w * x;
            }
        }
        for c in 0..k {
            if weights[c] > 0.0 {
                for s in &mut sums[c] {
                    *s /= weights[c];
                }
                centroids[c] = sums[c].clone();
            }
        }
        if !changed {
            break;
        }
    }
    let wcss: f64 = points
        .iter()
        .zip(&assign)
        .map(|((p, w), &a)| w * sq_dist(p, &centroids[a]))
        .sum();
    (assign, wcss)
}

fn pick_weighted<R: Rng>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let ws: Vec<f64> = weights.collect();
    let total: f64 = ws.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in ws.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    ws.len() - 1
}

const KMEANS_RESTARTS: u64 = 10;

fn best_kmeans(points: &[(Vec<f64>, f64)], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(
            crate::util::derive_seed(seed, (k as u64) << 32 | restart),
        );
        let (assign, wcss) = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|&(_, bw)| wcss < bw - 1e-15) {
            best = Some((assign, wcss));
        }
    }
    best.unwrap()
}

/// Clusters weighted basket indicators. The cluster count is picked at the
/// elbow of the WCSS curve over `k = 1..=k_max` (largest second difference
/// at interior points); identical baskets collapse to a single cluster.
pub fn cluster_baskets(
    points: &[(Vec<f64>, f64)],
    k_max: usize,
    seed: u64,
) -> Result<Clustering, AnalyticsError> {
    if k_max < 2 {
        return Err(AnalyticsError::BadKMax(k_max));
    }
    if points.is_empty() {
        return Err(AnalyticsError::NoBaskets);
    }
    let k_cap = k_max.min(points.len());
    let mut curves: Vec<(Vec<usize>, f64)> = Vec::with_capacity(k_cap);
    for k in 1..=k_cap {
        curves.push(best_kmeans(points, k, seed));
    }
    let wcss_curve: Vec<f64> = curves.iter().map(|&(_, w)| w).collect();

    let k = if wcss_curve[0] <= 1e-12 || k_cap < 3 {
        1
    } else {
        // Largest second difference over interior ks.
        let mut best_k = 2.min(k_cap);
        let mut best_d2 = f64::NEG_INFINITY;
        for i in 1..k_cap - 1 {
            let d2 = wcss_curve[i - 1] - 2.0 * wcss_curve[i] + wcss_curve[i + 1];
            if d2 > best_d2 {
                best_d2 = d2;
                best_k = i + 1;
            }
        }
        best_k
    };

    let (assign, _) = &curves[k - 1];
    let dim = points[0].0.len();
    let mut weight = vec![0.0; k];
    let mut mean = vec![vec![0.0; dim]; k];
    for ((p, w), &a) in points.iter().zip(assign) {
        weight[a] += w;
        for (m, x) in mean[a].iter_mut().zip(p) {
            *m += w * x;
        }
    }
    let mut profiles = Vec::new();
    for c in 0..k {
        if weight[c] == 0.0 {
            continue;
        }
        for m in &mut mean[c] {
            *m /= weight[c];
        }
        profiles.push(ClusterProfile::new(0, weight[c], mean[c].clone()));
    }
    // Deterministic ids: heaviest cluster first, centroid order tie-break.
    profiles.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then_with(|| {
                a.purchase_prob
                    .partial_cmp(&b.purchase_prob)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    for (i, p) in profiles.iter_mut().enumerate() {
        p.cluster_id = i + 1;
    }
    let k = profiles.len();
    Ok(Clustering { k, profiles, wcss_curve })
}
