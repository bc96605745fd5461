//! Command-line front end. Every subcommand resolves its configuration
//! (flag > config file > default), validates it before doing any work, and
//! stamps the resulting config hash on everything it writes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::curriculum::{self, CurriculumSchedule};
use crate::error::{Error, Result};
use crate::hpr::{self, AugmentConfig};
use crate::provider::{EmbeddingProvider, SyntheticProvider, TableProvider};
use crate::scene::{self, SceneConfig};
use crate::templates;
use crate::train::{self, ModelFile, TrainConfig, TrainMode};
use crate::triplets::{self, OutdoorConfig, SyntheticConfig, TripletDataset};
use crate::zeroshot::{self, AccuracyMode, EvalConfig};

pub const EXIT_OK: i32 = 0;
/// Unknown flag or malformed command line.
pub const EXIT_USAGE: i32 = 2;
/// Configuration or input invariant violated.
pub const EXIT_INVALID: i32 = 3;
/// A path could not be read or written.
pub const EXIT_IO: i32 = 4;
/// A file was readable but its contents are malformed.
pub const EXIT_CORRUPT: i32 = 5;
/// Scene lookups: unknown instance, missing pose, invisible crop.
pub const EXIT_SCENE: i32 = 6;
pub const EXIT_EMBEDDING: i32 = 7;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Config { .. } => EXIT_INVALID,
        Error::Io { .. } => EXIT_IO,
        Error::Corrupt { .. } | Error::Json { .. } => EXIT_CORRUPT,
        Error::NotVisible { .. } | Error::UnknownInstance(_) | Error::MissingPose(_) => EXIT_SCENE,
        Error::Embedding(_) => EXIT_EMBEDDING,
    }
}

fn category(code: i32) -> &'static str {
    match code {
        EXIT_INVALID => "invalid",
        EXIT_IO => "io",
        EXIT_CORRUPT => "corrupt",
        EXIT_SCENE => "scene",
        EXIT_EMBEDDING => "embedding",
        _ => "error",
    }
}

/// Default dimension of the built-in frozen provider.
pub const PROVIDER_DIM: usize = 32;
const PROVIDER_NOISE: f64 = 0.3;

#[derive(Debug, Parser)]
#[command(name = "mixalign", version, about = "LiDAR/image/text triplet generation and curriculum contrastive alignment")]
pub struct Cli {
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, env = "MIXALIGN_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one or more annotated driving scenes.
    SimulateScene(SimulateArgs),
    /// Fuse sweeps and build outdoor triplets from simulated scenes.
    GenTriplets(GenTripletsArgs),
    /// Generate the synthetic-domain triplet dataset.
    GenSynthetic(GenSyntheticArgs),
    /// Replace every cloud by its part visible from a random viewpoint.
    HprAugment(HprArgs),
    /// Print the per-epoch mixing schedule as CSV.
    Schedule(ScheduleArgs),
    /// Train the point encoder.
    Train(TrainArgs),
    /// Zero-shot evaluation, retrieval and feature export.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON scene config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    /// With more than one scene, each goes to its own subdirectory and gets
    /// a seed derived from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
}

#[derive(Debug, Args)]
pub struct GenTripletsArgs {
    /// Scene directories, or directories holding scene subdirectories.
    #[arg(long, num_args = 1.., required = true)]
    pub scene: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON outdoor config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub min_points: Option<usize>,
    #[arg(long)]
    pub visibility: Option<f64>,
    /// Fuse without motion compensation.
    #[arg(long)]
    pub no_compensation: bool,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub objects_per_class: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HprArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Inner shell radius as a multiple of each cloud's radius.
    #[arg(long)]
    pub rmin: Option<f64>,
    #[arg(long)]
    pub rmax: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub we: Option<u32>,
    #[arg(long)]
    pub te: Option<u32>,
    #[arg(long)]
    pub rmax: Option<f64>,
    #[arg(long)]
    pub psi: Option<f64>,
    /// Size of the synthetic dataset.
    #[arg(long)]
    pub ncad: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub devices: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Curriculum,
    Static,
    TwoStep,
    SyntheticOnly,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Curriculum => TrainMode::Curriculum,
            ModeArg::Static => TrainMode::Static,
            ModeArg::TwoStep => TrainMode::TwoStep,
            ModeArg::SyntheticOnly => TrainMode::SyntheticOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Embedding table file; without it the built-in provider is used.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub provider_seed: u64,
    #[arg(long, default_value_t = PROVIDER_DIM)]
    pub provider_dim: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON curriculum schedule.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// JSON training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub outdoor: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub metrics_out: PathBuf,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    ObjectWise,
    ClassWise,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file written by `train`.
    #[arg(long, alias = "params")]
    pub model: PathBuf,
    /// Prompt template file, one per line; defaults to the bundled ensemble.
    #[arg(long, conflicts_with = "outdoor_prompt")]
    pub prompts: Option<PathBuf>,
    /// Use the single outdoor prompt instead of an ensemble.
    #[arg(long)]
    pub outdoor_prompt: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub topk: Vec<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: EvalModeArg,
    /// Only score instances of these classes.
    #[arg(long, value_delimiter = ',')]
    pub holdout: Vec<String>,
    /// Candidate classes; defaults to the classes present in the dataset.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub retrieve: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

/// Resolved configuration of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunConfig<T: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub config: T,
    pub config_hash: String,
}

impl<T: Serialize> RunConfig<T> {
    pub fn new(command: &'static str, config: T) -> Self {
        let config_hash = triplets::config_hash(&(command, &config));
        RunConfig {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            config_hash,
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_run<T: Serialize>(dir: &Path, run: &RunConfig<T>) -> Result<()> {
    let path = dir.join("run.json");
    let json = serde_json::to_vec_pretty(run).map_err(|e| Error::json(&path, e))?;
    write_file(&path, &json)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn make_provider(args: &ProviderArgs) -> Result<Box<dyn EmbeddingProvider>> {
    match &args.embeddings {
        Some(p) => Ok(Box::new(TableProvider::read(p)?)),
        None => {
            if args.provider_dim == 0 {
                return Err(Error::config("provider_dim", "must be at least 1"));
            }
            let classes: Vec<String> = templates::synthetic_classes().into_iter().map(|c| c.name).collect();
            Ok(Box::new(SyntheticProvider::new(
                &classes,
                args.provider_dim,
                args.provider_seed,
                PROVIDER_NOISE,
                PROVIDER_NOISE,
            )))
        }
    }
}

fn provider_identity(args: &ProviderArgs) -> Result<String> {
    Ok(match &args.embeddings {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            format!("table:{}", triplets::config_hash(&bytes))
        }
        None => format!("synthetic:{}:{}", args.provider_dim, args.provider_seed),
    })
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg: SceneConfig = load_or_default(args.config.as_ref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = &args.name {
        cfg.name.clone_from(n);
    }
    if let Some(n) = args.sweeps {
        cfg.n_sweeps = n;
    }
    if let Some(n) = args.objects {
        cfg.n_objects = n;
    }
    cfg.validate()?;
    if args.scenes == 0 {
        return Err(Error::config("scenes", "must be at least 1"));
    }
    let run = RunConfig::new("simulate-scene", (&cfg, args.scenes));
    let configs = if args.scenes == 1 {
        vec![cfg.clone()]
    } else {
        scene::scene_series(&cfg, args.scenes, cfg.seed)
    };
    for c in &configs {
        let dir = if args.scenes == 1 { args.out.clone() } else { args.out.join(&c.name) };
        let (sc, truth) = scene::generate_scene(c)?;
        scene::write_scene(&sc, Some(&truth), &dir)?;
        log::info!("wrote scene {} ({} sweeps) to {}", sc.name, sc.sweeps.len(), dir.display());
    }
    write_run(&args.out, &run)
}

fn scene_dirs(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for root in roots {
        if root.join("scene.json").is_file() {
            out.push(root.clone());
            continue;
        }
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut subs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("scene.json").is_file())
            .collect();
        if subs.is_empty() {
            return Err(Error::invalid(format!("{} holds no scenes", root.display())));
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

fn gen_triplets(args: &GenTripletsArgs) -> Result<()> {
    let mut cfg: OutdoorConfig = load_or_default(args.config.as_ref())?;
    if let Some(n) = args.sweeps {
        cfg.fusion.n_sweeps = n;
    }
    if let Some(n) = args.min_points {
        cfg.min_points = n;
    }
    if let Some(v) = args.visibility {
        cfg.min_visibility = v;
    }
    if args.no_compensation {
        cfg.fusion.compensate_motion = false;
    }
    cfg.validate()?;
    let dirs = scene_dirs(&args.scene)?;
    if dirs.iter().any(|d| same_dir(d, &args.out)) {
        return Err(Error::invalid("output directory must differ from the scene directories"));
    }
    let mut parts = Vec::with_capacity(dirs.len());
    let mut scene_names = Vec::new();
    for d in &dirs {
        let sc = scene::read_scene(d)?;
        scene_names.push(sc.name.clone());
        parts.push(triplets::build_outdoor_dataset(&sc, &cfg)?);
    }
    let run = RunConfig::new("gen-triplets", (&cfg, &scene_names));
    let refs: Vec<&TripletDataset> = parts.iter().collect();
    let ds = TripletDataset::merged("outdoor", &run.config_hash, &refs);
    let m = triplets::write_dataset(&ds, &args.out)?;
    log::info!("{} clouds, {} triplets", m.n_clouds, m.n_triplets);
    write_run(&args.out, &run)
}

fn gen_synthetic(args: &GenSyntheticArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = load_or_default(args.config.as_ref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.objects_per_class {
        cfg.objects_per_class = n;
    }
    if let Some(n) = args.views {
        cfg.views = n;
    }
    if let Some(n) = args.points {
        cfg.points_per_object = n;
    }
    let run = RunConfig::new("gen-synthetic", &cfg);
    let ds = triplets::generate_synthetic(&cfg)?;
    let m = triplets::write_dataset(&ds, &args.out)?;
    log::info!("{} clouds, {} triplets", m.n_clouds, m.n_triplets);
    write_run(&args.out, &run)
}

fn hpr_augment(args: &HprArgs) -> Result<()> {
    let defaults = AugmentConfig::default();
    let cfg = AugmentConfig {
        gamma: args.gamma.unwrap_or(defaults.gamma),
        r_min_factor: args.rmin.unwrap_or(defaults.r_min_factor),
        r_max_factor: args.rmax.unwrap_or(defaults.r_max_factor),
        seed: args.seed.unwrap_or(defaults.seed),
    };
    if !(cfg.r_min_factor > 1.0 && cfg.r_min_factor <= cfg.r_max_factor) {
        return Err(Error::config("rmin", "need 1 < rmin <= rmax so viewpoints lie outside the cloud"));
    }
    if same_dir(&args.input, &args.out) {
        return Err(Error::invalid("output directory must differ from the input"));
    }
    let ds = triplets::read_dataset(&args.input)?;
    let run = RunConfig::new("hpr-augment", (&cfg, &ds.config_hash));
    let out = hpr::augment_dataset(&ds, &cfg)?;
    triplets::write_dataset(&out, &args.out)?;
    write_run(&args.out, &run)
}

fn resolve_schedule(args: &ScheduleArgs) -> Result<CurriculumSchedule> {
    let mut s: CurriculumSchedule = load_or_default(args.config.as_ref())?;
    if let Some(v) = args.we {
        s.warmup_epochs = v;
    }
    if let Some(v) = args.te {
        s.total_epochs = v;
    }
    if let Some(v) = args.rmax {
        s.r_max = v;
    }
    if let Some(v) = args.psi {
        s.coverage = v;
    }
    if let Some(v) = args.ncad {
        s.n_synthetic = v;
    }
    if let Some(v) = args.batch {
        s.batch_size = v;
    }
    if let Some(v) = args.devices {
        s.devices = v;
    }
    s.validate()?;
    Ok(s)
}

/// Append a constant `config_hash` column to a CSV document.
pub fn with_hash_column(csv: &str, hash: &str) -> String {
    let mut out = String::with_capacity(csv.len() + 80 * csv.lines().count());
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            let _ = writeln!(out, "{line},config_hash");
        } else {
            let _ = writeln!(out, "{line},{hash}");
        }
    }
    out
}

fn schedule(args: &ScheduleArgs) -> Result<()> {
    let s = resolve_schedule(args)?;
    let run = RunConfig::new("schedule", &s);
    let csv = with_hash_column(&curriculum::schedule_csv(&s)?, &run.config_hash);
    match &args.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_or_default(args.config.as_ref())?;
    if let Some(p) = &args.schedule {
        cfg.schedule = read_json(p)?;
    }
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.schedule.total_epochs = e;
        cfg.schedule.warmup_epochs = cfg.schedule.warmup_epochs.min(e);
    }
    cfg.validate()?;
    let provider = make_provider(&args.provider)?;
    let synthetic = triplets::read_dataset(&args.synthetic)?;
    let outdoor = match &args.outdoor {
        Some(p) => triplets::read_dataset(p)?,
        None => TripletDataset::empty("outdoor", ""),
    };
    let run = RunConfig::new("train", (&cfg, provider_identity(&args.provider)?));
    let outcome = train::train(&cfg, &synthetic, &outdoor, provider.as_ref())?;
    let csv = train::metrics_csv(cfg.mode, &outcome.metrics, &run.config_hash);
    write_file(&args.metrics_out, csv.as_bytes())?;
    if let Some(p) = &args.model_out {
        let mut model = outcome.model(&cfg);
        model.config_hash.clone_from(&run.config_hash);
        model.save(p)?;
    }
    log::info!("embedding checksum {}", outcome.embedding_checksum);
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    if args.topk.is_empty() || args.topk.contains(&0) {
        return Err(Error::config("topk", "values must be at least 1"));
    }
    let ds = triplets::read_dataset(&args.dataset)?;
    let model = ModelFile::load(&args.model)?;
    let provider = make_provider(&args.provider)?;
    let templates = if args.outdoor_prompt {
        vec![zeroshot::OUTDOOR_PROMPT.to_string()]
    } else {
        match &args.prompts {
            Some(p) => zeroshot::read_templates(p)?,
            None => zeroshot::default_templates(),
        }
    };
    let classes = if args.classes.is_empty() {
        let set: std::collections::BTreeSet<&String> = ds.clouds.iter().map(|c| &c.class).collect();
        set.into_iter().cloned().collect()
    } else {
        args.classes.clone()
    };
    let modes = match args.mode {
        EvalModeArg::ObjectWise => vec![AccuracyMode::ObjectWise],
        EvalModeArg::ClassWise => vec![AccuracyMode::ClassWise],
        EvalModeArg::Both => vec![AccuracyMode::ObjectWise, AccuracyMode::ClassWise],
    };
    let cfg = EvalConfig {
        ks: args.topk.clone(),
        modes,
        holdout: args.holdout.clone(),
        min_points: 1,
        max_points: model.max_points,
        normalize: model.normalize,
    };
    let run = RunConfig::new(
        "eval",
        (
            &cfg,
            &templates,
            &classes,
            &model.config_hash,
            &ds.config_hash,
            provider_identity(&args.provider)?,
        ),
    );
    let protos = zeroshot::build_prototypes(&classes, &templates, provider.as_ref())?;
    if let Some(out) = &args.out {
        let report = zeroshot::evaluate(&ds, &model.encoder, &protos, &cfg)?;
        for r in &report.rows {
            log::info!("{} top-{}: {:.4}", r.mode.name(), r.k, r.accuracy);
        }
        write_file(out, report.to_csv(&run.config_hash).as_bytes())?;
    }
    if let Some(prompt) = &args.retrieve {
        let hits = zeroshot::retrieve(prompt, provider.as_ref(), &ds, &model.encoder, args.top)?;
        let mut text = String::from("rank,id,similarity\n");
        for (i, (id, s)) in hits.iter().enumerate() {
            let _ = writeln!(text, "{},{id},{s}", i + 1);
        }
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    }
    if let Some(p) = &args.features_out {
        let table = zeroshot::export_features(&ds, &model.encoder)?;
        write_file(p, with_hash_column(&table.to_csv(), &run.config_hash).as_bytes())?;
    }
    Ok(())
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::SimulateScene(a) => simulate(a),
        Command::GenTriplets(a) => gen_triplets(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::HprAugment(a) => hpr_augment(a),
        Command::Schedule(a) => schedule(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    })
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error[{}]: {e}", category(code));
            code
        }
    }
}
