//! Seeded experiment orchestration: cluster-driven basket sampling, batch
//! trajectory generation per method, human-length budget conditioning, and
//! the divergence comparison used by the reporting commands.
//!
//! Work unit `i` of a batch always draws its RNG from `(seed, i)`, so every
//! batch is reproducible bit-for-bit regardless of chunking or worker count.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, ClusterProfile, Divergences};
use crate::generators::{self, GenError, NoisyHumanModel};
use crate::grid::{Basket, CheckoutId, Layout};
#[cfg(test)]
use crate::grid::Cell;
use crate::maxent::{self, MaxEntError, RewardSpec};
use crate::traj::Trajectory;
use crate::util::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Tsp,
    Pnn,
    MaxEnt,
    NoisyHuman,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tsp => "tsp",
            Method::Pnn => "pnn",
            Method::MaxEnt => "maxent",
            Method::NoisyHuman => "noisy_human",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "tsp" => Some(Method::Tsp),
            "pnn" => Some(Method::Pnn),
            "maxent" => Some(Method::MaxEnt),
            "noisy_human" | "human" => Some(Method::NoisyHuman),
            _ => None,
        }
    }
}

/// Tunables for batch generation. Defaults match the seeded experiment
/// configuration shipped with the repository.
#[derive(Clone, Debug)]
pub struct GenParams {
    pub pnn_exponent: f64,
    pub detour_target: f64,
    pub calibration_batch: usize,
    pub tau: f64,
    pub w_items: f64,
    pub w_checkout: f64,
    pub w_wrong: f64,
    /// Budget-adherence weight per unit of `budget * tau`; scaling with the
    /// budget keeps the per-step deviation penalty comparable across trip
    /// lengths.
    pub budget_slope: f64,
    /// Horizon as a multiple of the budget when one is conditioned.
    pub horizon_budget_factor: f64,
    /// Horizon as a multiple of the TSP action count otherwise.
    pub horizon_tsp_factor: f64,
    /// Scales the item/checkout/wrong-pickup weights when a budget is
    /// conditioned, so task success stays binding while the budget term
    /// dominates length. Successful routes of equal length keep equal
    /// reward under any scale, so route diversity is unaffected.
    pub task_scale: f64,
    /// Per-stationary-timestep penalty used when a budget is conditioned;
    /// keeps the entropy budget flowing into spatial detours rather than
    /// dithering in place. Unbudgeted solves stay terminal-only.
    pub w_idle: f64,
    /// Retention threshold; `None` means the default (full basket plus
    /// correct checkout).
    pub min_reward: Option<f64>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            pnn_exponent: 1.0,
            detour_target: 0.28,
            calibration_batch: 400,
            tau: 0.5,
            w_items: 1.0,
            w_checkout: 0.5,
            w_wrong: 0.25,
            budget_slope: 2.5,
            horizon_budget_factor: 1.6,
            horizon_tsp_factor: 4.0,
            task_scale: 32.0,
            w_idle: 2.0,
            min_reward: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    MaxEnt(#[from] MaxEntError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("checkout weights must be non-empty and non-negative")]
    BadCheckoutWeights,
    #[error("batch count must be at least 1")]
    EmptyBatch,
}

/// A generated batch plus its deterministic work statistics.
pub struct MethodBatch {
    pub method: Method,
    pub trajectories: Vec<Trajectory>,
    /// Retained / attempted, for methods with a retention threshold.
    pub retention_rate: f64,
    pub rollout_attempts: u64,
    /// Soft Bellman backups performed (maxent only).
    pub solve_updates: u64,
    /// Mean episode length in actions.
    pub mean_len_actions: f64,
    /// Achieved mean detour ratios per basket group (noisy human only).
    pub calibration_ratios: Vec<f64>,
}

impl MethodBatch {
    fn new(method: Method, trajectories: Vec<Trajectory>) -> MethodBatch {
        let mean = if trajectories.is_empty() {
            0.0
        } else {
            trajectories.iter().map(|t| t.len_actions() as f64).sum::<f64>()
                / trajectories.len() as f64
        };
        MethodBatch {
            method,
            trajectories,
            retention_rate: 1.0,
            rollout_attempts: 0,
            solve_updates: 0,
            mean_len_actions: mean,
            calibration_ratios: Vec::new(),
        }
    }
}

/// Samples `n` essential-only baskets from a cluster profile: each essential
/// category is included with its purchase probability, the checkout is
/// drawn from `checkout_weights`.
pub fn sample_essential_baskets(
    layout: &Layout,
    profile: &ClusterProfile,
    n: usize,
    seed: u64,
    checkout_weights: &[f64],
) -> Result<Vec<Basket>, PipelineError> {
    if checkout_weights.is_empty()
        || checkout_weights.len() > layout.checkouts().len()
        || checkout_weights.iter().any(|&w| w < 0.0)
        || checkout_weights.iter().sum::<f64>() <= 0.0
    {
        return Err(PipelineError::BadCheckoutWeights);
    }
    let essentials = profile.essential_categories();
    let total: f64 = checkout_weights.iter().sum();
    Ok((0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let items = essentials
                .iter()
                .copied()
                .filter(|&c| rng.gen::<f64>() < profile.purchase_prob[c.0 as usize])
                .collect::<Vec<_>>();
            let mut u = rng.gen::<f64>() * total;
            let mut checkout = 0usize;
            for (k, &w) in checkout_weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    checkout = k;
                    break;
                }
            }
            Basket::new(items, CheckoutId(checkout as u16))
        })
        .collect())
}

type GroupKey = (Vec<u16>, u16, Option<u32>);

fn group_key(basket: &Basket) -> GroupKey {
    (
        basket.items.iter().map(|c| c.0).collect(),
        basket.checkout.0,
        basket.budget,
    )
}

fn group_indices(baskets: &[Basket]) -> BTreeMap<GroupKey, Vec<usize>> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, b) in baskets.iter().enumerate() {
        groups.entry(group_key(b)).or_default().push(i);
    }
    groups
}

/// One TSP trajectory per basket (solved once per distinct basket).
pub fn gen_tsp_batch(layout: &Layout, baskets: &[Basket]) -> Result<MethodBatch, PipelineError> {
    if baskets.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let mut out: Vec<Option<Trajectory>> = vec![None; baskets.len()];
    for (_, indices) in group_indices(baskets) {
        let traj = generators::gen_tsp(layout, &baskets[indices[0]])?;
        for &i in &indices {
            out[i] = Some(traj.clone());
        }
    }
    Ok(MethodBatch::new(
        Method::Tsp,
        out.into_iter().map(|t| t.expect("filled")).collect(),
    ))
}

pub fn gen_pnn_batch(
    layout: &Layout,
    baskets: &[Basket],
    seed: u64,
    exponent: f64,
) -> Result<MethodBatch, PipelineError> {
    if baskets.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let trajs: Result<Vec<Trajectory>, GenError> = baskets
        .par_iter()
        .enumerate()
        .map(|(i, basket)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            generators::gen_pnn(layout, basket, &mut rng, exponent)
        })
        .collect();
    Ok(MethodBatch::new(Method::Pnn, trajs?))
}

/// Calibrates one detour model per distinct basket, then samples.
pub fn gen_noisy_batch(
    layout: &Layout,
    baskets: &[Basket],
    seed: u64,
    params: &GenParams,
) -> Result<MethodBatch, PipelineError> {
    if baskets.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let groups = group_indices(baskets);
    let mut models: BTreeMap<GroupKey, NoisyHumanModel> = BTreeMap::new();
    let mut ratios = Vec::new();
    for (key, indices) in &groups {
        let model = generators::calibrate_noisy_human(
            layout,
            &baskets[indices[0]],
            params.detour_target,
            derive_seed(seed, 0xca11_b8a7),
            params.calibration_batch,
        )?;
        ratios.push(model.achieved_ratio);
        models.insert(key.clone(), model);
    }
    let trajs: Result<Vec<Trajectory>, GenError> = baskets
        .par_iter()
        .enumerate()
        .map(|(i, basket)| {
            let model = &models[&group_key(basket)];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            model.sample(layout, basket, &mut rng)
        })
        .collect();
    let mut batch = MethodBatch::new(Method::NoisyHuman, trajs?);
    batch.calibration_ratios = ratios;
    Ok(batch)
}

/// Reward spec for a basket under the experiment parameters.
pub fn reward_spec_for(
    layout: &Layout,
    basket: &Basket,
    params: &GenParams,
) -> Result<RewardSpec, PipelineError> {
    let horizon = match basket.budget {
        Some(b) => (b as f64 * params.horizon_budget_factor).ceil() as u32,
        None => {
            let tsp = generators::gen_tsp(layout, basket)?;
            (tsp.len_actions() as f64 * params.horizon_tsp_factor).ceil() as u32
        }
    };
    let (w_budget, w_idle, scale) = match basket.budget {
        Some(b) => (
            params.budget_slope * b as f64 * params.tau,
            params.w_idle,
            params.task_scale,
        ),
        None => (0.5, 0.0, 1.0),
    };
    Ok(RewardSpec {
        w_items: params.w_items * scale,
        w_checkout: params.w_checkout * scale,
        w_budget,
        w_wrong: params.w_wrong * scale,
        w_idle,
        horizon,
    })
}

/// Solves one policy per distinct basket and samples retained rollouts.
pub fn gen_maxent_batch(
    layout: &Layout,
    baskets: &[Basket],
    seed: u64,
    params: &GenParams,
    cache_dir: Option<&std::path::Path>,
) -> Result<MethodBatch, PipelineError> {
    if baskets.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let mut out: Vec<Option<Trajectory>> = vec![None; baskets.len()];
    let mut attempts = 0u64;
    let mut retained = 0u64;
    let mut updates = 0u64;
    for (gi, (_, indices)) in group_indices(baskets).into_iter().enumerate() {
        let basket = &baskets[indices[0]];
        let spec = reward_spec_for(layout, basket, params)?;
        let policy = maxent::Policy::load_or_solve(layout, basket, &spec, params.tau, cache_dir)?;
        updates += policy.solve_updates;
        let batch = match params.min_reward {
            Some(min_reward) => maxent::sample_retained(
                &policy,
                layout,
                indices.len(),
                derive_seed(seed, gi as u64),
                min_reward,
            )?,
            // Large budget weights swamp the scalar threshold, so the
            // default retention is exact task success.
            None => maxent::sample_retained_by(
                &policy,
                layout,
                indices.len(),
                derive_seed(seed, gi as u64),
                |r| maxent::task_exact(&r.summary, &policy.basket),
            )?,
        };
        attempts += batch.attempts;
        retained += indices.len() as u64;
        for (&i, t) in indices.iter().zip(batch.trajectories) {
            out[i] = Some(t);
        }
    }
    let mut batch = MethodBatch::new(
        Method::MaxEnt,
        out.into_iter().map(|t| t.expect("filled")).collect(),
    );
    batch.retention_rate = retained as f64 / attempts.max(1) as f64;
    batch.rollout_attempts = attempts;
    batch.solve_updates = updates;
    Ok(batch)
}

/// Copies of `baskets` with each basket's budget set to the mean episode
/// length (in actions) of the reference trajectories sharing its basket
/// group. Groups absent from the reference set keep no budget.
pub fn attach_budgets_from(baskets: &[Basket], reference: &[Trajectory]) -> Vec<Basket> {
    let mut sums: BTreeMap<GroupKey, (f64, u64)> = BTreeMap::new();
    for t in reference {
        let e = sums.entry(group_key(&t.conditions)).or_insert((0.0, 0));
        e.0 += t.len_actions() as f64;
        e.1 += 1;
    }
    baskets
        .iter()
        .map(|b| {
            let mut b = b.clone();
            if let Some(&(total, count)) = sums.get(&group_key(&b)) {
                b.budget = Some((total / count as f64).round() as u32);
            }
            b
        })
        .collect()
}

/// Generates a batch for one method against a shared basket list. MaxEnt
/// baskets should already carry budgets when length conditioning is wanted.
pub fn generate_batch(
    layout: &Layout,
    method: Method,
    baskets: &[Basket],
    seed: u64,
    params: &GenParams,
    cache_dir: Option<&std::path::Path>,
) -> Result<MethodBatch, PipelineError> {
    match method {
        Method::Tsp => gen_tsp_batch(layout, baskets),
        Method::Pnn => gen_pnn_batch(layout, baskets, seed, params.pnn_exponent),
        Method::NoisyHuman => gen_noisy_batch(layout, baskets, seed, params),
        Method::MaxEnt => gen_maxent_batch(layout, baskets, seed, params, cache_dir),
    }
}

/// The three-method divergence comparison against a synthetic-human ground
/// truth, all conditioned on the same sampled baskets.
pub struct ComparisonRun {
    pub human: MethodBatch,
    pub rows: Vec<(Method, MethodBatch, Divergences)>,
}

pub fn divergence_comparison(
    layout: &Layout,
    profile: &ClusterProfile,
    n: usize,
    seed: u64,
    params: &GenParams,
    checkout_weights: &[f64],
) -> Result<ComparisonRun, PipelineError> {
    let baskets = sample_essential_baskets(layout, profile, n, derive_seed(seed, 1), checkout_weights)?;
    let human = gen_noisy_batch(layout, &baskets, derive_seed(seed, 2), params)?;
    let budgeted = attach_budgets_from(&baskets, &human.trajectories);
    let mut rows = Vec::new();
    for (method, s) in [(Method::Tsp, 3u64), (Method::Pnn, 4), (Method::MaxEnt, 5)] {
        let batch = match method {
            Method::MaxEnt => generate_batch(layout, method, &budgeted, derive_seed(seed, s), params, None)?,
            _ => generate_batch(layout, method, &baskets, derive_seed(seed, s), params, None)?,
        };
        let div = analytics::divergences(&human.trajectories, &batch.trajectories, layout)?;
        rows.push((method, batch, div));
    }
    Ok(ComparisonRun { human, rows })
}

/// Everything the four-step repositioning pipeline consumed and produced:
/// per-method estimates, ground-truth rates, and the profit report.
pub struct UseCase3Outcome {
    pub report: crate::layout_opt::ProfitReport,
    pub ground_rates: ClusterProfile,
    pub method_rates: Vec<(Method, ClusterProfile)>,
    pub human_estimate: MethodBatch,
}

/// Runs the full repositioning study: estimate shelf traffic and impulse
/// rates per method from essential-shopper sets, pick and move each
/// method's product, then score every suggested layout on held-out
/// synthetic-human trajectories under the human-derived rates.
pub fn usecase3_experiment(
    layout: &Layout,
    profile: &ClusterProfile,
    n: usize,
    seed: u64,
    params: &GenParams,
    checkout_weights: &[f64],
) -> Result<UseCase3Outcome, PipelineError> {
    use crate::layout_opt::{run_usecase3, LayoutOptError, MethodEstimate};

    let baskets =
        sample_essential_baskets(layout, profile, n, derive_seed(seed, 1), checkout_weights)?;
    let human = gen_noisy_batch(layout, &baskets, derive_seed(seed, 2), params)?;
    let budgeted = attach_budgets_from(&baskets, &human.trajectories);

    // Held-out baskets for evaluation rows.
    let eval_baskets =
        sample_essential_baskets(layout, profile, n, derive_seed(seed, 6), checkout_weights)?;
    let eval_budgeted = attach_budgets_from(&eval_baskets, &human.trajectories);
    let heldout_human = gen_noisy_batch(layout, &eval_baskets, derive_seed(seed, 7), params)?;

    let ground_rates = crate::analytics::impulse_rates(profile, &human.trajectories, layout)?;

    let mut estimates = Vec::new();
    let mut method_rates = Vec::new();
    for (method, gen_seed, eval_seed) in [
        (Method::Tsp, 3u64, 8u64),
        (Method::Pnn, 4, 9),
        (Method::MaxEnt, 5, 10),
    ] {
        let est_baskets: &[Basket] =
            if method == Method::MaxEnt { &budgeted } else { &baskets };
        let eval_bs: &[Basket] =
            if method == Method::MaxEnt { &eval_budgeted } else { &eval_baskets };
        let est = generate_batch(layout, method, est_baskets, derive_seed(seed, gen_seed), params, None)?;
        let own_eval =
            generate_batch(layout, method, eval_bs, derive_seed(seed, eval_seed), params, None)?;
        let theta = crate::analytics::shelf_traffic(&est.trajectories, layout)?;
        let rates = crate::analytics::impulse_rates(profile, &est.trajectories, layout)?;
        method_rates.push((method, rates.clone()));
        estimates.push(MethodEstimate {
            name: method.name().to_string(),
            theta,
            rates,
            eval_trajs: own_eval.trajectories,
        });
    }
    // The ground-truth column: the human estimate set drives the choices,
    // the held-out human set evaluates them.
    estimates.push(MethodEstimate {
        name: "human".to_string(),
        theta: crate::analytics::shelf_traffic(&human.trajectories, layout)?,
        rates: ground_rates.clone(),
        eval_trajs: heldout_human.trajectories.clone(),
    });

    let report = run_usecase3(
        layout,
        &ground_rates,
        &estimates,
        &heldout_human.trajectories,
        derive_seed(seed, 11),
    )
    .map_err(|e| match e {
        LayoutOptError::Layout(le) => PipelineError::Gen(GenError::Traj(
            crate::traj::TrajError::Format(le.to_string()),
        )),
        other => PipelineError::Gen(GenError::Traj(crate::traj::TrajError::Format(
            other.to_string(),
        ))),
    })?;
    Ok(UseCase3Outcome {
        report,
        ground_rates,
        method_rates,
        human_estimate: human,
    })
}
