//! Command-line surface: generate, analyze, traffic, cluster, impulse,
//! usecase3, report, validate-layout.
//!
//! Commands compose through files only. Every run takes explicit seeds and
//! re-running with the same config reproduces outputs byte for byte; wall
//! times go to stderr, while manifests carry deterministic work counters
//! instead. Exit codes: 0 success, 2 validation error, 3 runtime error, with
//! a machine-readable error record on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytics::{self, ClusterProfile, ClusterProfileFile};
use crate::grid::{Basket, CheckoutId, Layout};
use crate::pipeline::{self, GenParams, Method};
use crate::traj::{self, Trajectory};
use crate::util::sha256_hex;

#[derive(Parser)]
#[command(name = "storesim", version, about = "Gridworld retail-store trajectory simulation and layout analytics")]
pub struct Cli {
    /// Bound worker threads (0 = all cores). Results never depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse and validate a layout file.
    ValidateLayout(ValidateArgs),
    /// Generate trajectories for a basket or a cluster profile.
    Generate(GenerateArgs),
    /// Divergence tables and heatmaps of methods against a reference set.
    Analyze(AnalyzeArgs),
    /// Shelf-traffic density of a trajectory set.
    Traffic(TrafficArgs),
    /// Cluster baskets and emit per-cluster purchase profiles.
    Cluster(ClusterArgs),
    /// Estimate impulse rates for a cluster from essential-shopper routes.
    Impulse(ImpulseArgs),
    /// The four-step repositioning study with a synthetic ground truth.
    Usecase3(Usecase3Args),
    /// Bundle the artifacts of a run directory into one report.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub layout: PathBuf,
}

/// Flags shared by the generation-heavy commands. Values given on the
/// command line override the config file.
#[derive(Args, Clone, Default)]
pub struct ParamFlags {
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub pnn_exponent: Option<f64>,
    #[arg(long)]
    pub detour_target: Option<f64>,
    #[arg(long)]
    pub min_reward: Option<f64>,
    #[arg(long)]
    pub budget_slope: Option<f64>,
    #[arg(long)]
    pub idle_penalty: Option<f64>,
    #[arg(long)]
    pub task_scale: Option<f64>,
}

impl ParamFlags {
    fn merge_into(&self, cfg: &mut ExperimentConfig) {
        cfg.tau = self.tau.or(cfg.tau);
        cfg.pnn_exponent = self.pnn_exponent.or(cfg.pnn_exponent);
        cfg.detour_target = self.detour_target.or(cfg.detour_target);
        cfg.min_reward = self.min_reward.or(cfg.min_reward);
        cfg.budget_slope = self.budget_slope.or(cfg.budget_slope);
        cfg.idle_penalty = self.idle_penalty.or(cfg.idle_penalty);
        cfg.task_scale = self.task_scale.or(cfg.task_scale);
    }
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Experiment config file (TOML); flags win over its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// tsp | pnn | maxent | noisy_human
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated category ids, e.g. "hot_coffee_tea,bakery_pastries".
    #[arg(long)]
    pub basket: Option<String>,
    #[arg(long)]
    pub checkout: Option<u16>,
    /// Optional timestep budget for the basket.
    #[arg(long)]
    pub budget: Option<u32>,
    /// Cluster profile file: sample essential-only baskets from it instead
    /// of a fixed basket.
    #[arg(long)]
    pub cluster: Option<PathBuf>,
    /// Checkout sampling weights for cluster-driven baskets.
    #[arg(long, value_delimiter = ',')]
    pub checkout_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for cached value tables, keyed by layout/basket/spec.
    #[arg(long)]
    pub policy_cache: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamFlags,
}

/// Experiment config file contents; mirrors the generate flags.
#[derive(Deserialize, Serialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub layout: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: Option<String>,
    #[serde(default)]
    pub basket: Option<Vec<String>>,
    pub checkout: Option<u16>,
    pub budget: Option<u32>,
    pub cluster: Option<PathBuf>,
    pub checkout_weights: Option<Vec<f64>>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub policy_cache: Option<PathBuf>,
    pub tau: Option<f64>,
    pub pnn_exponent: Option<f64>,
    pub detour_target: Option<f64>,
    pub min_reward: Option<f64>,
    pub budget_slope: Option<f64>,
    pub idle_penalty: Option<f64>,
    pub task_scale: Option<f64>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub layout: PathBuf,
    /// Reference trajectory set (the ground truth column).
    #[arg(long)]
    pub reference: PathBuf,
    /// Method sets as name=path pairs.
    #[arg(long = "method", value_name = "NAME=PATH")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrafficArgs {
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long)]
    pub trajs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub layout: PathBuf,
    /// Line-delimited trajectory file whose conditions carry the baskets.
    #[arg(long)]
    pub baskets: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ImpulseArgs {
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    /// Essential-shopper trajectories used to estimate shelf visits.
    #[arg(long)]
    pub trajs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct Usecase3Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub checkout_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamFlags,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
}

/// Errors mapped to exit code 2 (validation) or 3 (runtime).
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.workers > 0 {
        // Results are independent of the pool size by construction.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    match cli.command {
        Command::ValidateLayout(args) => cmd_validate(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Traffic(args) => cmd_traffic(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Impulse(args) => cmd_impulse(args),
        Command::Usecase3(args) => cmd_usecase3(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_layout(path: &Path) -> Result<Layout, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    Layout::load(&text).map_err(validation)
}

fn load_trajs(path: &Path, layout: &Layout) -> Result<Vec<Trajectory>, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    traj::read_jsonl(BufReader::new(file), layout).map_err(runtime)
}

fn load_profile(path: &Path, layout: &Layout) -> Result<ClusterProfile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let file: ClusterProfileFile = serde_json::from_str(&text).map_err(validation)?;
    ClusterProfile::from_file(&file, layout)
        .ok_or_else(|| validation("profile references categories missing from the layout"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(path, bytes).map_err(runtime)
}

fn timing(label: &str, start: std::time::Instant) {
    eprintln!("# {label}: {:.3}s", start.elapsed().as_secs_f64());
}

/// Deterministic manifest written next to every command's outputs.
#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    config_hash: String,
    layout_hash: String,
    seed: u64,
    entries: BTreeMap<String, serde_json::Value>,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config_repr: &str,
    layout: &Layout,
    seed: u64,
    entries: BTreeMap<String, serde_json::Value>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sha256_hex(config_repr.as_bytes()),
        layout_hash: layout.content_hash(),
        seed,
        entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    write_file(&dir.join("manifest.json"), json.as_bytes())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let layout = load_layout(&args.layout)?;
    println!(
        "ok: {}x{} cells, {} categories, {} checkouts, {} shelves ({} unoccupied), hash {}",
        layout.width(),
        layout.height(),
        layout.categories().len(),
        layout.checkouts().len(),
        layout.shelf_cells().count(),
        layout.unoccupied_shelves().len(),
        &layout.content_hash()[..12],
    );
    Ok(())
}

fn merge_generate(args: &GenerateArgs) -> Result<(ExperimentConfig, String), CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<ExperimentConfig>(&text).map_err(validation)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &args.layout {
        cfg.layout = Some(v.clone());
    }
    if let Some(v) = &args.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &args.method {
        cfg.method = Some(v.clone());
    }
    if let Some(v) = &args.basket {
        cfg.basket = Some(v.split(',').map(|s| s.trim().to_string()).collect());
    }
    if let Some(v) = args.checkout {
        cfg.checkout = Some(v);
    }
    if let Some(v) = args.budget {
        cfg.budget = Some(v);
    }
    if let Some(v) = &args.cluster {
        cfg.cluster = Some(v.clone());
    }
    if let Some(v) = &args.checkout_weights {
        cfg.checkout_weights = Some(v.clone());
    }
    if let Some(v) = args.count {
        cfg.count = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = &args.policy_cache {
        cfg.policy_cache = Some(v.clone());
    }
    args.params.merge_into(&mut cfg);
    let repr = semantic_repr(&cfg)?;
    Ok((cfg, repr))
}

/// Canonical config text for hashing: identifies the experiment, not where
/// its inputs and outputs happen to live (the layout content is hashed
/// separately in the manifest).
fn semantic_repr(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut c = cfg.clone();
    c.layout = None;
    c.out = None;
    c.policy_cache = None;
    toml::to_string(&c).map_err(runtime)
}

fn params_from_config(cfg: &ExperimentConfig) -> GenParams {
    let mut params = GenParams::default();
    if let Some(v) = cfg.tau {
        params.tau = v;
    }
    if let Some(v) = cfg.pnn_exponent {
        params.pnn_exponent = v;
    }
    if let Some(v) = cfg.detour_target {
        params.detour_target = v;
    }
    if let Some(v) = cfg.min_reward {
        params.min_reward = Some(v);
    }
    if let Some(v) = cfg.budget_slope {
        params.budget_slope = v;
    }
    if let Some(v) = cfg.idle_penalty {
        params.w_idle = v;
    }
    if let Some(v) = cfg.task_scale {
        params.task_scale = v;
    }
    params
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let (cfg, repr) = merge_generate(&args)?;
    let layout_path = cfg.layout.clone().ok_or_else(|| validation("missing --layout"))?;
    let out = cfg.out.clone().ok_or_else(|| validation("missing --out"))?;
    let method_name = cfg.method.clone().ok_or_else(|| validation("missing --method"))?;
    let method = Method::parse(&method_name)
        .ok_or_else(|| validation(format!("unknown method {method_name:?}")))?;
    let count = cfg.count.ok_or_else(|| validation("missing --count"))?;
    let seed = cfg.seed.ok_or_else(|| validation("missing --seed (seeds are explicit)"))?;
    let layout = load_layout(&layout_path)?;
    let params = params_from_config(&cfg);

    let baskets: Vec<Basket> = match (&cfg.cluster, &cfg.basket) {
        (Some(profile_path), _) => {
            let profile = load_profile(profile_path, &layout)?;
            let weights = cfg
                .checkout_weights
                .clone()
                .unwrap_or_else(|| vec![1.0; layout.checkouts().len()]);
            pipeline::sample_essential_baskets(&layout, &profile, count, seed ^ 1, &weights)
                .map_err(runtime)?
        }
        (None, names) => {
            let names = names.clone().unwrap_or_default();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let mut basket = layout
                .basket_from_names(&refs, CheckoutId(cfg.checkout.unwrap_or(0)))
                .map_err(validation)?;
            basket.budget = cfg.budget;
            vec![basket; count]
        }
    };

    let batch = pipeline::generate_batch(
        &layout,
        method,
        &baskets,
        seed,
        &params,
        cfg.policy_cache.as_deref(),
    )
    .map_err(runtime)?;

    let mut buf = Vec::new();
    traj::write_jsonl(&mut buf, &batch.trajectories, &layout).map_err(runtime)?;
    write_file(&out.join(format!("{}.jsonl", method.name())), &buf)?;

    let mut entries = BTreeMap::new();
    entries.insert("method".into(), serde_json::json!(method.name()));
    entries.insert("count".into(), serde_json::json!(batch.trajectories.len()));
    entries.insert("retention_rate".into(), serde_json::json!(batch.retention_rate));
    entries.insert("rollout_attempts".into(), serde_json::json!(batch.rollout_attempts));
    entries.insert("solve_updates".into(), serde_json::json!(batch.solve_updates));
    entries.insert("mean_len_actions".into(), serde_json::json!(batch.mean_len_actions));
    if !batch.calibration_ratios.is_empty() {
        entries.insert(
            "calibration_ratios".into(),
            serde_json::json!(batch.calibration_ratios),
        );
    }
    write_manifest(&out, "generate", &repr, &layout, seed, entries)?;
    timing("generate", start);
    Ok(())
}

fn occupancy_png(occ: &analytics::OccupancyDistribution) -> Vec<u8> {
    let max = occ.iter().map(|(_, m)| m).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        occ.width() as u32,
        occ.height() as u32,
    );
    for (cell, mass) in occ.iter() {
        let v = ((mass / max) * u16::MAX as f64).round() as u16;
        img.put_pixel(cell.col as u32, cell.row as u32, image::Luma([v]));
    }
    let mut bytes = Vec::new();
    image::DynamicImage::ImageLuma16(img)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("png encode");
    bytes
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let layout = load_layout(&args.layout)?;
    let reference = load_trajs(&args.reference, &layout)?;
    if reference.is_empty() {
        return Err(validation("reference trajectory set is empty"));
    }
    let mut rows: Vec<(String, analytics::Divergences)> = Vec::new();
    let mut heatmaps: Vec<(String, analytics::OccupancyDistribution)> = Vec::new();
    heatmaps.push((
        "reference".into(),
        analytics::occupancy(&reference, &layout).map_err(runtime)?,
    ));
    for spec in &args.methods {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| validation(format!("--method wants NAME=PATH, got {spec:?}")))?;
        let trajs = load_trajs(Path::new(path), &layout)?;
        let div = analytics::divergences(&reference, &trajs, &layout).map_err(runtime)?;
        heatmaps.push((
            name.to_string(),
            analytics::occupancy(&trajs, &layout).map_err(runtime)?,
        ));
        rows.push((name.to_string(), div));
    }

    // Divergence table in the familiar shape: metric rows, method columns.
    let mut table = String::from("divergence_vs_reference");
    for (name, _) in &rows {
        table.push('\t');
        table.push_str(name);
    }
    table.push('\n');
    for (label, pick) in [
        ("jsd_pooled_heatmap", 0usize),
        ("wd_pooled_heatmap", 1),
        ("jsd_per_basket_avg", 2),
        ("wd_per_basket_avg", 3),
    ] {
        table.push_str(label);
        for (_, d) in &rows {
            let v = match pick {
                0 => d.jsd_pooled,
                1 => d.wd_pooled,
                2 => d.jsd_avg,
                _ => d.wd_avg,
            };
            table.push_str(&format!("\t{v:.6}"));
        }
        table.push('\n');
    }
    write_file(&args.out.join("divergence.tsv"), table.as_bytes())?;
    for (name, occ) in &heatmaps {
        write_file(
            &args.out.join(format!("heatmap_{name}.txt")),
            occ.to_grid_text().as_bytes(),
        )?;
        write_file(&args.out.join(format!("heatmap_{name}.png")), &occupancy_png(occ))?;
    }
    timing("analyze", start);
    Ok(())
}

fn cmd_traffic(args: TrafficArgs) -> Result<(), CliError> {
    let layout = load_layout(&args.layout)?;
    let trajs = load_trajs(&args.trajs, &layout)?;
    let theta = analytics::shelf_traffic(&trajs, &layout).map_err(runtime)?;
    let mut text = String::from("shelf_col\tshelf_row\tcategory\ttheta\n");
    for (cell, v) in theta.iter() {
        let occupant = layout
            .placements()
            .get(&cell)
            .map(|&c| layout.category(c).id.clone())
            .unwrap_or_else(|| "-".into());
        text.push_str(&format!("{}\t{}\t{}\t{v:.6}\n", cell.col, cell.row, occupant));
    }
    write_file(&args.out.join("traffic.tsv"), text.as_bytes())?;
    // Grid view, normalized for rendering.
    let mut mass = vec![0.0; layout.width() as usize * layout.height() as usize];
    for (cell, v) in theta.iter() {
        mass[cell.row as usize * layout.width() as usize + cell.col as usize] = v;
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        let grid = analytics::OccupancyDistribution::from_mass(
            layout.width(),
            layout.height(),
            mass.iter().map(|m| m / total).collect(),
        );
        write_file(&args.out.join("traffic.png"), &occupancy_png(&grid))?;
        write_file(&args.out.join("traffic.txt"), grid.to_grid_text().as_bytes())?;
    }
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<(), CliError> {
    let layout = load_layout(&args.layout)?;
    let trajs = load_trajs(&args.baskets, &layout)?;
    if trajs.is_empty() {
        return Err(validation("basket trajectory file is empty"));
    }
    let baskets: Vec<Vec<crate::grid::CategoryId>> = trajs
        .iter()
        .map(|t| t.conditions.items.iter().copied().collect())
        .collect();
    let points = analytics::weighted_indicators(&baskets, layout.categories().len());
    let clustering =
        analytics::cluster_baskets(&points, args.k_max, args.seed).map_err(validation)?;

    let mut wcss = String::from("k\twcss\n");
    for (i, v) in clustering.wcss_curve.iter().enumerate() {
        wcss.push_str(&format!("{}\t{v:.9}\n", i + 1));
    }
    write_file(&args.out.join("wcss.tsv"), wcss.as_bytes())?;
    let files: Vec<ClusterProfileFile> = clustering
        .profiles
        .iter()
        .map(|p| p.to_file(&layout))
        .collect();
    let json = serde_json::to_string_pretty(&files).map_err(runtime)?;
    write_file(&args.out.join("clusters.json"), json.as_bytes())?;
    println!("k = {} (wcss curve in wcss.tsv)", clustering.k);
    Ok(())
}

fn cmd_impulse(args: ImpulseArgs) -> Result<(), CliError> {
    let layout = load_layout(&args.layout)?;
    let profile = load_profile(&args.profile, &layout)?;
    let trajs = load_trajs(&args.trajs, &layout)?;
    let enriched = analytics::impulse_rates(&profile, &trajs, &layout).map_err(runtime)?;
    let mut table = String::from("category\tpurchase_prob\tvisit_prob\timpulse_rate\n");
    for cat in enriched.impulse_categories() {
        let i = cat.0 as usize;
        table.push_str(&format!(
            "{}\t{:.6}\t{}\t{}\n",
            layout.category(cat).id,
            enriched.purchase_prob[i],
            enriched.visit_prob[i].map_or("-".into(), |v| format!("{v:.6}")),
            enriched.impulse_rate[i].map_or("-".into(), |r| r.to_string()),
        ));
    }
    write_file(&args.out.join("impulse_rates.tsv"), table.as_bytes())?;
    let json = serde_json::to_string_pretty(&enriched.to_file(&layout)).map_err(runtime)?;
    write_file(&args.out.join("profile_with_rates.json"), json.as_bytes())?;
    Ok(())
}

fn cmd_usecase3(args: Usecase3Args) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<ExperimentConfig>(&text).map_err(validation)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &args.layout {
        cfg.layout = Some(v.clone());
    }
    if let Some(v) = args.count {
        cfg.count = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = &args.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &args.checkout_weights {
        cfg.checkout_weights = Some(v.clone());
    }
    args.params.merge_into(&mut cfg);
    let repr = semantic_repr(&cfg)?;

    let layout =
        load_layout(&cfg.layout.clone().ok_or_else(|| validation("missing --layout"))?)?;
    let out = cfg.out.clone().ok_or_else(|| validation("missing --out"))?;
    let seed = cfg.seed.ok_or_else(|| validation("missing --seed"))?;
    let count = cfg.count.unwrap_or(2000);
    let profile = load_profile(&args.profile, &layout)?;
    let params = params_from_config(&cfg);
    let weights = cfg
        .checkout_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; layout.checkouts().len()]);

    let outcome =
        pipeline::usecase3_experiment(&layout, &profile, count, seed, &params, &weights)
            .map_err(runtime)?;
    write_file(&out.join("usecase3.tsv"), outcome.report.to_tsv().as_bytes())?;
    let rates_json =
        serde_json::to_string_pretty(&outcome.ground_rates.to_file(&layout)).map_err(runtime)?;
    write_file(&out.join("ground_rates.json"), rates_json.as_bytes())?;

    let mut entries = BTreeMap::new();
    entries.insert("count".into(), serde_json::json!(count));
    entries.insert(
        "calibration_ratios".into(),
        serde_json::json!(outcome.human_estimate.calibration_ratios),
    );
    let rows: BTreeMap<String, serde_json::Value> = outcome
        .report
        .rows
        .iter()
        .map(|r| {
            (
                r.method.clone(),
                serde_json::json!({
                    "chosen_product": r.chosen_product,
                    "fallback": r.purchase_prob_fallback,
                    "suggested_ground": r.suggested_ground,
                }),
            )
        })
        .collect();
    entries.insert("rows".into(), serde_json::json!(rows));
    write_manifest(&out, "usecase3", &repr, &layout, seed, entries)?;
    timing("usecase3", start);
    Ok(())
}

const REPORT_ARTIFACTS: [&str; 5] = [
    "divergence.tsv",
    "traffic.tsv",
    "impulse_rates.tsv",
    "usecase3.tsv",
    "manifest.json",
];

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut bundle = String::new();
    let mut missing = Vec::new();
    let mut found = 0;
    for name in REPORT_ARTIFACTS {
        let path = args.run.join(name);
        match fs::read_to_string(&path) {
            Ok(text) => {
                found += 1;
                bundle.push_str(&format!("=== {name}\n{text}\n"));
            }
            Err(_) => missing.push(name),
        }
    }
    if found == 0 {
        return Err(CliError::Validation(format!(
            "nothing to report in {}",
            args.run.display()
        )));
    }
    if !missing.is_empty() {
        bundle.push_str("=== missing artifacts\n");
        for name in &missing {
            bundle.push_str(name);
            bundle.push('\n');
        }
    }
    write_file(&args.run.join("report.txt"), bundle.as_bytes())?;
    print!("{bundle}");
    std::io::stdout().flush().ok();
    Ok(())
}
