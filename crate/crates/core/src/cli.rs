//! The `llmlab` command-line driver.
//!
//! Every subcommand resolves its parameters (command-line flag, then the
//! `--config` JSON file, then the built-in default), writes its artifacts
//! into `--out`, and finishes with `manifest.json`, which lists every
//! resolved value, where it came from, and the files written. Nothing in
//! the artifacts depends on the clock or the environment, so the same
//! configuration reproduces the same bytes.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_IO`], [`EXIT_USAGE`], [`EXIT_VALIDATION`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::attention::{
    attention_weights, contextual_distance, embed, generate, qkv_project, run_blocks, BlockParams, BlockShape,
};
use crate::bpe::{self, TokenId, TokenSequence, Vocabulary};
use crate::capacity::{capacity_study, write_study_csv};
use crate::contexts::{
    bank_graph, born_probabilities, commutator_norm, disambiguate, intertwine_check, make_observable, rotated_context,
    ContextBasis,
};
use crate::floatlab::{
    batch_simulation, compare_plans, into_requests, spread_corpus, write_batch_csv, write_report_csv, PlanFamily,
    Precision, ReductionPlan, Strategy,
};
use crate::micrograd::{gradient_check, MicroNetParams, MicroNetShape, Target};
use crate::numkit::{gaussian_matrix, io, Rng, Vector};
use crate::uattention::{measure, Circuit, Readout, StateVector, UnitaryOp};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
/// An invalid parameter value, or a check the run performs did not hold.
pub const EXIT_VALIDATION: i32 = 3;

pub const MANIFEST: &str = "manifest.json";
pub const DEFAULT_OUT: &str = "llmlab-out";

#[derive(Debug, Parser)]
#[command(name = "llmlab", version, about = "Seeded experiments on the numerical core of transformer language models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON object of parameter values; keys are flag names with `_` for `-`
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Output directory [default: llmlab-out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Independent seeded trials (default depends on the subcommand)
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Run trials on a thread pool; results are merged in trial order
    #[arg(long, global = true)]
    pub parallel: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic gradients of a small network against finite differences
    Gradcheck(GradcheckArgs),
    /// Causal attention weights, contextual separation, and causality checks
    AttentionDemo(AttentionDemoArgs),
    /// Temperature sampling from a randomly initialized transformer stack
    Generate(GenerateArgs),
    /// Learn a byte-pair vocabulary from a file
    BpeTrain(BpeTrainArgs),
    /// Encode text with a saved vocabulary
    BpeEncode(BpeEncodeArgs),
    /// Decode token ids with a saved vocabulary
    BpeDecode(BpeDecodeArgs),
    /// Greedy quasi-orthogonal packing counts across dimensions
    Capacity(CapacityArgs),
    /// Rotated bases, commutators, and Born tables for a shared-vector graph
    Contexts(ContextsArgs),
    /// Run a unitary circuit and histogram repeated terminal measurements
    Uattention(UattentionArgs),
    /// Reduction-order discrepancies and batch invariance
    Floatlab(FloatlabArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gradcheck(_) => "gradcheck",
            Command::AttentionDemo(_) => "attention-demo",
            Command::Generate(_) => "generate",
            Command::BpeTrain(_) => "bpe-train",
            Command::BpeEncode(_) => "bpe-encode",
            Command::BpeDecode(_) => "bpe-decode",
            Command::Capacity(_) => "capacity",
            Command::Contexts(_) => "contexts",
            Command::Uattention(_) => "uattention",
            Command::Floatlab(_) => "floatlab",
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// [default: 8]
    #[arg(long)]
    pub vocab: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub dim: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub token: Option<usize>,
    /// 0 or 1 [default: 1]
    #[arg(long)]
    pub target: Option<u8>,
    /// Central-difference step [default: 1e-5]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Largest acceptable relative error [default: 1e-6]
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AttentionDemoArgs {
    /// [default: 16]
    #[arg(long)]
    pub vocab: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub dim: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub heads: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Tokens before and after the probe token [default: 4]
    #[arg(long)]
    pub context_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// [default: 16]
    #[arg(long)]
    pub vocab: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub dim: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub heads: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub layers: Option<usize>,
    /// [default: 1.0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// New tokens to sample [default: 8]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated token ids [default: 0]
    #[arg(long, value_delimiter = ',')]
    pub prompt: Option<Vec<TokenId>>,
}

#[derive(Debug, Args)]
pub struct BpeTrainArgs {
    /// Training corpus (raw bytes), required
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target vocabulary size including the 256 byte tokens [default: 512]
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BpeEncodeArgs {
    /// Vocabulary written by bpe-train, required
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Text to encode (alternative to --input)
    #[arg(long)]
    pub text: Option<String>,
    /// File to encode (alternative to --text)
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BpeDecodeArgs {
    /// Vocabulary written by bpe-train, required
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Comma-separated token ids (alternative to --tokens)
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<TokenId>>,
    /// tokens.json written by bpe-encode (alternative to --ids)
    #[arg(long)]
    pub tokens: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    /// [default: 0.25]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated dimensions [default: 32,64,128,256]
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Consecutive rejected candidates that end a greedy run [default: 2]
    #[arg(long)]
    pub max_attempts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ContextsArgs {
    /// Clockwise rotation of the second basis, radians [default: π/4]
    #[arg(long)]
    pub angle: Option<f64>,
    /// Comma-separated real state, normalized before use [default: 1,0.5,0.2]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub state: Option<Vec<f64>>,
    /// Eigenvalues of the first observable [default: 1,2,3]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eigenvalues_a: Option<Vec<f64>>,
    /// Eigenvalues of the second observable [default: 4,5,6]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eigenvalues_b: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct UattentionArgs {
    /// Circuit JSON; the built-in 4-dimensional circuit when absent
    #[arg(long)]
    pub circuit: Option<PathBuf>,
    /// Index of the standard basis state fed in [default: 0]
    #[arg(long)]
    pub input_state: Option<usize>,
    /// Measurements to histogram [default: 10000]
    #[arg(long)]
    pub shots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FloatlabArgs {
    /// Corpus length [default: 10000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Exponents drawn from [-spread, spread] [default: 30]
    #[arg(long)]
    pub spread: Option<i32>,
    /// Values per request [default: 100]
    #[arg(long)]
    pub request_len: Option<usize>,
    /// Comma-separated batch sizes [default: 1,2,7,64]
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    /// Chunk size of the deterministic kernel [default: 16]
    #[arg(long)]
    pub fixed_chunk: Option<usize>,
    /// f32 or f64 accumulation in the batch-dependent kernel [default: f64]
    #[arg(long)]
    pub precision: Option<String>,
}

/// Failure of a run, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flag,
    Config,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub value: Value,
    pub source: Source,
}

enum Fallback {
    Value(Value),
    /// No default; the run is a usage error unless flag or config sets it.
    Required,
    /// No default; absence is meaningful (recorded as `null`).
    Optional,
}

struct ParamDecl {
    name: &'static str,
    flag: Option<Value>,
    fallback: Fallback,
}

fn with_default<T: Serialize>(name: &'static str, flag: &Option<T>, default: impl Serialize) -> ParamDecl {
    ParamDecl {
        name,
        flag: flag.as_ref().map(|v| json!(v)),
        fallback: Fallback::Value(json!(default)),
    }
}

fn required<T: Serialize>(name: &'static str, flag: &Option<T>) -> ParamDecl {
    ParamDecl {
        name,
        flag: flag.as_ref().map(|v| json!(v)),
        fallback: Fallback::Required,
    }
}

fn optional<T: Serialize>(name: &'static str, flag: &Option<T>) -> ParamDecl {
    ParamDecl {
        name,
        flag: flag.as_ref().map(|v| json!(v)),
        fallback: Fallback::Optional,
    }
}

/// The fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: &'static str,
    pub config_file: Option<PathBuf>,
    pub params: BTreeMap<String, Resolved>,
}

impl RunConfig {
    fn get<T: DeserializeOwned>(&self, name: &str) -> CliResult<T> {
        let r = self
            .params
            .get(name)
            .ok_or_else(|| CliError::Usage(format!("`{}` takes no parameter `{name}`", self.subcommand)))?;
        serde_json::from_value(r.value.clone())
            .map_err(|e| CliError::Validation(format!("invalid parameter `{name}` = {}: {e}", r.value)))
    }

    fn seed(&self) -> CliResult<u64> {
        self.get("seed")
    }

    fn trials(&self) -> CliResult<usize> {
        let t: usize = self.get("trials")?;
        if t == 0 {
            return Err(CliError::Validation("invalid parameter `trials`: must be at least 1".into()));
        }
        Ok(t)
    }

    pub fn out_dir(&self) -> CliResult<PathBuf> {
        self.get("out")
    }
}

fn read_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

fn global_decls(g: &GlobalArgs, default_trials: usize) -> Vec<ParamDecl> {
    vec![
        with_default("seed", &g.seed, 0u64),
        with_default("out", &g.out, DEFAULT_OUT),
        with_default("trials", &g.trials, default_trials),
        with_default("parallel", &g.parallel.then_some(true), false),
    ]
}

fn command_decls(cmd: &Command) -> (usize, Vec<ParamDecl>) {
    use std::f64::consts::FRAC_PI_4;
    match cmd {
        Command::Gradcheck(a) => (
            1,
            vec![
                with_default("vocab", &a.vocab, 8),
                with_default("dim", &a.dim, 4),
                with_default("hidden", &a.hidden, 4),
                with_default("token", &a.token, 0),
                with_default("target", &a.target, 1),
                with_default("epsilon", &a.epsilon, crate::micrograd::FD_EPSILON),
                with_default("threshold", &a.threshold, 1e-6),
            ],
        ),
        Command::AttentionDemo(a) => (
            20,
            vec![
                with_default("vocab", &a.vocab, 16),
                with_default("dim", &a.dim, 8),
                with_default("heads", &a.heads, 2),
                with_default("layers", &a.layers, 1),
                with_default("context_len", &a.context_len, 4),
            ],
        ),
        Command::Generate(a) => (
            1,
            vec![
                with_default("vocab", &a.vocab, 16),
                with_default("dim", &a.dim, 8),
                with_default("heads", &a.heads, 2),
                with_default("layers", &a.layers, 1),
                with_default("temperature", &a.temperature, 1.0),
                with_default("steps", &a.steps, 8),
                with_default("prompt", &a.prompt, [0]),
            ],
        ),
        Command::BpeTrain(a) => (
            1,
            vec![required("input", &a.input), with_default("vocab_size", &a.vocab_size, 512)],
        ),
        Command::BpeEncode(a) => (
            1,
            vec![
                required("vocab", &a.vocab),
                optional("text", &a.text),
                optional("input", &a.input),
            ],
        ),
        Command::BpeDecode(a) => (
            1,
            vec![
                required("vocab", &a.vocab),
                optional("ids", &a.ids),
                optional("tokens", &a.tokens),
            ],
        ),
        Command::Capacity(a) => (
            10,
            vec![
                with_default("epsilon", &a.epsilon, 0.25),
                with_default("dims", &a.dims, [32, 64, 128, 256]),
                with_default("max_attempts", &a.max_attempts, 2),
            ],
        ),
        Command::Contexts(a) => (
            1,
            vec![
                with_default("angle", &a.angle, FRAC_PI_4),
                with_default("state", &a.state, [1.0, 0.5, 0.2]),
                with_default("eigenvalues_a", &a.eigenvalues_a, [1.0, 2.0, 3.0]),
                with_default("eigenvalues_b", &a.eigenvalues_b, [4.0, 5.0, 6.0]),
            ],
        ),
        Command::Uattention(a) => (
            1,
            vec![
                optional("circuit", &a.circuit),
                with_default("input_state", &a.input_state, 0),
                with_default("shots", &a.shots, 10_000),
            ],
        ),
        Command::Floatlab(a) => (
            1,
            vec![
                with_default("n", &a.n, 10_000),
                with_default("spread", &a.spread, 30),
                with_default("request_len", &a.request_len, 100),
                with_default("batch_sizes", &a.batch_sizes, [1, 2, 7, 64]),
                with_default("fixed_chunk", &a.fixed_chunk, 16),
                with_default("precision", &a.precision, "f64"),
            ],
        ),
    }
}

/// Applies flag > config file > default to every parameter of the
/// subcommand. Unknown config keys and missing required values are usage
/// errors.
pub fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let subcommand = cli.command.name();
    let (default_trials, mut decls) = command_decls(&cli.command);
    decls.extend(global_decls(&cli.global, default_trials));
    let mut config = match &cli.global.config {
        Some(path) => read_config(path)?,
        None => Map::new(),
    };
    let mut params = BTreeMap::new();
    for decl in decls {
        let from_config = config.remove(decl.name);
        let resolved = match (decl.flag, from_config, decl.fallback) {
            (Some(v), _, _) => Resolved { value: v, source: Source::Flag },
            (None, Some(v), _) => Resolved { value: v, source: Source::Config },
            (None, None, Fallback::Value(v)) => Resolved { value: v, source: Source::Default },
            (None, None, Fallback::Optional) => Resolved { value: Value::Null, source: Source::Default },
            (None, None, Fallback::Required) => {
                return Err(CliError::Usage(format!(
                    "`{subcommand}` needs `--{}` (or `{}` in the config file)",
                    decl.name.replace('_', "-"),
                    decl.name
                )))
            }
        };
        params.insert(decl.name.to_string(), resolved);
    }
    if let Some(key) = config.keys().next() {
        return Err(CliError::Usage(format!("unknown config key `{key}` for `{subcommand}`")));
    }
    Ok(RunConfig {
        subcommand,
        config_file: cli.global.config.clone(),
        params,
    })
}

/// Files produced by a run, in the order they were produced.
#[derive(Debug, Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }
}

/// What a successful or check-failing run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    /// Set when the run completed but one of its checks did not hold.
    pub failed_check: Option<String>,
}

fn fan_out<T: Send>(
    trials: usize,
    parallel: bool,
    f: impl Fn(usize) -> CliResult<T> + Sync + Send,
) -> CliResult<Vec<T>> {
    if parallel {
        (0..trials).into_par_iter().map(f).collect()
    } else {
        (0..trials).map(f).collect()
    }
}

fn trial_rng(seed: u64, trial: usize) -> Rng {
    Rng::new(seed).child(trial as u64)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn bad(name: &str, reason: impl fmt::Display) -> CliError {
    CliError::Validation(format!("invalid parameter `{name}`: {reason}"))
}

fn random_stack(rng: &mut Rng, d: usize, heads: usize, layers: usize) -> CliResult<Vec<BlockParams>> {
    if heads == 0 || d == 0 || d % heads != 0 {
        return Err(bad("heads", format!("{heads} must divide dim {d}")));
    }
    if layers == 0 {
        return Err(bad("layers", "must be at least 1"));
    }
    (0..layers)
        .map(|_| Ok(BlockParams::random(BlockShape::new(d, heads), rng)?))
        .collect()
}

fn run_gradcheck(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let shape = MicroNetShape {
        vocab: cfg.get("vocab")?,
        dim: cfg.get("dim")?,
        hidden: cfg.get("hidden")?,
    };
    let token: usize = cfg.get("token")?;
    let target = match cfg.get::<u8>("target")? {
        0 => Target::Zero,
        1 => Target::One,
        t => return Err(bad("target", format!("{t} must be 0 or 1"))),
    };
    let eps: f64 = cfg.get("epsilon")?;
    let threshold: f64 = cfg.get("threshold")?;
    let seed = cfg.seed()?;
    let reports = fan_out(cfg.trials()?, cfg.get("parallel")?, |t| {
        let params = MicroNetParams::random(shape, &mut trial_rng(seed, t))?;
        Ok(gradient_check(&params, token, target, eps)?)
    })?;
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let passed = worst <= threshold;
    out.json(
        "gradcheck.json",
        &json!({
            "threshold": threshold,
            "max_relative_error": worst,
            "passed": passed,
            "trials": reports,
        }),
    )?;
    Ok((!passed).then(|| format!("max relative error {worst:e} exceeds {threshold:e}")))
}

#[derive(Serialize)]
struct AttentionTrial {
    trial: usize,
    left: Vec<TokenId>,
    right: Vec<TokenId>,
    distance: f64,
    causal_rows_unchanged: bool,
}

fn run_attention_demo(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    const SEPARATION: f64 = 1e-3;
    let vocab: usize = cfg.get("vocab")?;
    let d: usize = cfg.get("dim")?;
    let heads: usize = cfg.get("heads")?;
    let layers: usize = cfg.get("layers")?;
    let len: usize = cfg.get("context_len")?;
    if vocab < 2 {
        return Err(bad("vocab", "must be at least 2"));
    }
    let seed = cfg.seed()?;
    // the probe token is id 0; contexts draw from the rest
    let probe: TokenId = 0;
    let build = |t: usize| -> CliResult<_> {
        let mut rng = trial_rng(seed, t);
        let embedding = gaussian_matrix(&mut rng, vocab, d, 1.0);
        let blocks = random_stack(&mut rng, d, heads, layers)?;
        let mut draw = || (0..len).map(|_| 1 + rng.below(vocab - 1) as TokenId).collect::<Vec<_>>();
        let (left, right) = (draw(), draw());
        Ok((embedding, blocks, left, right))
    };
    let trials = fan_out(cfg.trials()?, cfg.get("parallel")?, |t| {
        let (embedding, blocks, left, right) = build(t)?;
        let distance = contextual_distance(&blocks, &embedding, &left, &right, probe, true)?;
        // change every token after the probe and recompute from scratch
        let mut ids = left.clone();
        ids.push(probe);
        ids.extend(&right);
        let mut perturbed = ids.clone();
        for id in &mut perturbed[len + 1..] {
            *id = 1 + (*id % (vocab as TokenId - 1));
        }
        let base = run_blocks(&embed(&embedding, &ids)?, &blocks, true)?;
        let moved = run_blocks(&embed(&embedding, &perturbed)?, &blocks, true)?;
        let causal_rows_unchanged = (0..=len).all(|i| base.row(i) == moved.row(i));
        Ok(AttentionTrial {
            trial: t,
            left,
            right,
            distance,
            causal_rows_unchanged,
        })
    })?;

    let (embedding, blocks, left, right) = build(0)?;
    let mut ids = left;
    ids.push(probe);
    ids.extend(&right);
    let (q, k, _) = qkv_project(&embed(&embedding, &ids)?, &blocks[0].heads[0])?;
    let weights = attention_weights(&q, &k, true)?;
    let mut csv = Vec::new();
    io::write_csv(weights.matrix(), &mut csv)?;
    out.add("attention_weights.csv", csv);

    let separated = trials.iter().filter(|t| t.distance > SEPARATION).count();
    let causal = trials.iter().all(|t| t.causal_rows_unchanged);
    out.json(
        "attention_demo.json",
        &json!({
            "probe_token": probe,
            "separation_threshold": SEPARATION,
            "separated": separated,
            "causality_exact": causal,
            "trials": trials,
        }),
    )?;
    Ok((!causal).then(|| "a future-token perturbation changed an earlier output row".to_string()))
}

fn run_generate(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let vocab: usize = cfg.get("vocab")?;
    let d: usize = cfg.get("dim")?;
    let prompt: Vec<TokenId> = cfg.get("prompt")?;
    let temperature: f64 = cfg.get("temperature")?;
    let steps: usize = cfg.get("steps")?;
    let root = Rng::new(cfg.seed()?);
    let mut init = root.child(0);
    let e_in = gaussian_matrix(&mut init, vocab, d, 1.0);
    let e_out = gaussian_matrix(&mut init, vocab, d, 1.0);
    let blocks = random_stack(&mut init, d, cfg.get("heads")?, cfg.get("layers")?)?;
    let prompt = TokenSequence::new(prompt);
    let tokens = generate(&blocks, &e_in, &e_out, &prompt, temperature, steps, &mut root.child(1))?;
    out.json(
        "generated.json",
        &json!({
            "prompt": prompt.ids(),
            "generated": &tokens.ids()[prompt.len()..],
            "tokens": tokens.ids(),
        }),
    )?;
    Ok(None)
}

fn run_bpe_train(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let input: PathBuf = cfg.get("input")?;
    let corpus = fs::read(&input).map_err(|e| io_err(&input, e))?;
    let vocab = bpe::train(&corpus, cfg.get("vocab_size")?)?;
    let mut jsonl = Vec::new();
    vocab.write_jsonl(&mut jsonl)?;
    out.add("vocab.jsonl", jsonl);
    let first: Vec<_> = vocab.merges().iter().take(10).map(|m| [m.left, m.right, m.id]).collect();
    out.json(
        "bpe_train.json",
        &json!({
            "corpus_bytes": corpus.len(),
            "vocab_size": vocab.size(),
            "merges": vocab.merges().len(),
            "first_merges": first,
        }),
    )?;
    Ok(None)
}

fn load_vocab(cfg: &RunConfig) -> CliResult<Vocabulary> {
    let path: PathBuf = cfg.get("vocab")?;
    let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    Ok(Vocabulary::read_jsonl(std::io::BufReader::new(file))?)
}

fn exactly_one(cfg: &RunConfig, a: &str, b: &str) -> CliResult<()> {
    let set = |k: &str| cfg.params.get(k).is_some_and(|r| !r.value.is_null());
    match (set(a), set(b)) {
        (true, false) | (false, true) => Ok(()),
        _ => Err(CliError::Usage(format!(
            "`{}` needs exactly one of `--{}` and `--{}`",
            cfg.subcommand,
            a.replace('_', "-"),
            b.replace('_', "-")
        ))),
    }
}

fn run_bpe_encode(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    exactly_one(cfg, "text", "input")?;
    let vocab = load_vocab(cfg)?;
    let bytes = match cfg.get::<Option<String>>("text")? {
        Some(t) => t.into_bytes(),
        None => {
            let path: PathBuf = cfg.get("input")?;
            fs::read(&path).map_err(|e| io_err(&path, e))?
        }
    };
    let seq = bpe::encode_bytes(&vocab, &bytes);
    out.json("tokens.json", &json!({ "bytes": bytes.len(), "count": seq.len(), "ids": seq.ids() }))?;
    Ok(None)
}

fn run_bpe_decode(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    exactly_one(cfg, "ids", "tokens")?;
    let vocab = load_vocab(cfg)?;
    let ids: Vec<TokenId> = match cfg.get::<Option<Vec<TokenId>>>("ids")? {
        Some(ids) => ids,
        None => {
            let path: PathBuf = cfg.get("tokens")?;
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| bad("tokens", format!("{}: {e}", path.display())))?;
            let ids = v.get("ids").cloned().unwrap_or(v);
            serde_json::from_value(ids).map_err(|e| bad("tokens", format!("{}: {e}", path.display())))?
        }
    };
    let decoded = bpe::decode(&vocab, &TokenSequence::new(ids))?;
    out.add("decoded.txt", decoded.text.clone().into_bytes());
    out.json("decoded.json", &json!({ "lossy": decoded.lossy, "bytes": decoded.text.len() }))?;
    Ok(None)
}

fn run_capacity(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let seed = cfg.seed()?;
    let seeds: Vec<u64> = (0..cfg.trials()? as u64).map(|i| seed.wrapping_add(i)).collect();
    let dims: Vec<usize> = cfg.get("dims")?;
    let study = capacity_study(cfg.get("epsilon")?, &dims, cfg.get("max_attempts")?, &seeds, cfg.get("parallel")?)?;
    let mut csv = Vec::new();
    write_study_csv(&study, &mut csv)?;
    out.add("capacity.csv", csv);
    out.json(
        "capacity.json",
        &json!({
            "epsilon": study.epsilon,
            "max_attempts": study.max_attempts,
            "seeds": study.seeds,
            "dims": dims,
            "mean_log_n": study.mean_log_n,
            "fitted_slope": study.fitted_slope,
            "r_squared": study.r_squared,
        }),
    )?;
    Ok(None)
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn run_contexts(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let angle: f64 = cfg.get("angle")?;
    let state: Vec<f64> = cfg.get("state")?;
    let eig_a: Vec<f64> = cfg.get("eigenvalues_a")?;
    let eig_b: Vec<f64> = cfg.get("eigenvalues_b")?;
    let e = ContextBasis::standard("e", words("e", 3))?;
    let f = rotated_context("f", angle, words("f", 3))?;
    let a = make_observable(&e, &eig_a)?;
    let b = make_observable(&f, &eig_b)?;
    let commutator = commutator_norm(&a, &b)?;

    let graph = bank_graph()?;
    let psi = Vector::new(state).normalized().map_err(|e| bad("state", e))?;
    if psi.dim() != graph.dim() {
        return Err(bad("state", format!("needs {} components", graph.dim())));
    }
    let mut csv = String::from("context,word,probability\n");
    let mut readings = Vec::new();
    for basis in graph.bases() {
        let p = born_probabilities(&psi, basis)?;
        for (w, q) in basis.words().iter().zip(p.as_slice()) {
            csv.push_str(&format!("{},{w},{q:?}\n", basis.label()));
        }
        let (word, _) = disambiguate(&psi, &graph, basis.label())?;
        readings.push(json!({ "context": basis.label(), "most_likely": word }));
    }
    out.add("born.csv", csv.into_bytes());
    out.add("graph.json", graph.to_json()?.into_bytes());
    out.json(
        "contexts.json",
        &json!({
            "angle": angle,
            "e": e.vectors().iter().map(|v| v.as_slice()).collect::<Vec<_>>(),
            "f": f.vectors().iter().map(|v| v.as_slice()).collect::<Vec<_>>(),
            "eigenvalues_a": eig_a,
            "eigenvalues_b": eig_b,
            "commutator_norm": commutator,
            "state": psi.as_slice(),
            "readings": readings,
            "intertwining": intertwine_check(&graph)?,
        }),
    )?;
    Ok(None)
}

/// Four-dimensional demonstration circuit: three phased plane rotations and
/// a cyclic shift, read out in the standard basis.
pub fn builtin_circuit() -> crate::Result<Circuit> {
    Ok(Circuit {
        dim: 4,
        stages: vec![
            UnitaryOp::rotation(4, 0, 1, 0.7, 0.3)?,
            UnitaryOp::rotation(4, 1, 2, 1.1, -0.5)?,
            UnitaryOp::permutation(vec![1, 2, 3, 0])?,
            UnitaryOp::rotation(4, 2, 3, 0.4, 1.2)?,
        ],
        readout: Readout::Standard,
    })
}

fn run_uattention(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let circuit = match cfg.get::<Option<PathBuf>>("circuit")? {
        Some(path) => Circuit::load(&path)?,
        None => builtin_circuit()?,
    };
    let pipeline = circuit.pipeline()?;
    let input: usize = cfg.get("input_state")?;
    let shots: usize = cfg.get("shots")?;
    let mut psi = StateVector::basis(pipeline.dim(), input)?;
    let mut norm_deviation: f64 = 0.0;
    for stage in pipeline.stages() {
        psi = stage.apply(&psi)?;
        norm_deviation = norm_deviation.max((psi.norm() - 1.0).abs());
    }
    let probabilities = pipeline.probabilities(&StateVector::basis(pipeline.dim(), input)?)?;
    let mut rng = Rng::new(cfg.seed()?);
    let mut counts = vec![0usize; pipeline.dim()];
    for _ in 0..shots {
        let (k, _) = measure(&psi, pipeline.readout(), &mut rng)?;
        counts[k] += 1;
    }
    let mut csv = String::from("outcome,word,count,frequency,probability\n");
    for (k, (&c, w)) in counts.iter().zip(pipeline.readout().words()).enumerate() {
        let freq = if shots == 0 { 0.0 } else { c as f64 / shots as f64 };
        csv.push_str(&format!("{k},{w},{c},{freq:?},{:?}\n", probabilities.get(k)));
    }
    out.add("histogram.csv", csv.into_bytes());
    out.add("circuit.json", circuit.to_json()?.into_bytes());
    out.json(
        "uattention.json",
        &json!({
            "dim": pipeline.dim(),
            "input_state": input,
            "shots": shots,
            "probabilities": probabilities.as_slice(),
            "counts": counts,
            "max_norm_deviation": norm_deviation,
        }),
    )?;
    Ok((norm_deviation > 1e-12).then(|| format!("state norm drifted by {norm_deviation:e}")))
}

fn run_floatlab(cfg: &RunConfig, out: &mut Artifacts) -> CliResult<Option<String>> {
    let seed = cfg.seed()?;
    let precision = match cfg.get::<String>("precision")?.as_str() {
        "f32" => Precision::F32,
        "f64" => Precision::F64,
        other => return Err(bad("precision", format!("`{other}` is not f32 or f64"))),
    };
    let fixed_chunk: usize = cfg.get("fixed_chunk")?;
    let batch_sizes: Vec<usize> = cfg.get("batch_sizes")?;
    let spread: i32 = cfg.get("spread")?;
    if !(0..=500).contains(&spread) {
        return Err(bad("spread", "must lie in 0..=500"));
    }
    let plans = [
        ReductionPlan::f64(Strategy::Sequential)?,
        ReductionPlan::f64(Strategy::PairwiseTree)?,
        ReductionPlan::f64(Strategy::Chunked(fixed_chunk.max(1)))?,
        ReductionPlan::f64(Strategy::Shuffled(seed))?,
        ReductionPlan::new(Strategy::Sequential, Precision::F32)?,
    ];
    let witness = compare_plans(&[1e20, -1e20, 1.0], &plans)?;
    let corpus = spread_corpus(&mut Rng::new(seed), cfg.get("n")?, spread);
    let on_corpus = compare_plans(&corpus, &plans)?;
    let requests = into_requests(&corpus, cfg.get("request_len")?);
    let dependent = batch_simulation(&requests, &batch_sizes, PlanFamily::BatchDependent(precision))?;
    let fixed = batch_simulation(&requests, &batch_sizes, PlanFamily::Deterministic { fixed_chunk })?;

    let mut buf = Vec::new();
    write_report_csv(&witness, &mut buf)?;
    out.add("witness.csv", buf);
    let mut buf = Vec::new();
    write_report_csv(&on_corpus, &mut buf)?;
    out.add("plans.csv", buf);
    let mut buf = Vec::new();
    write_batch_csv(&dependent, &mut buf)?;
    out.add("batch.csv", buf);
    let mut buf = Vec::new();
    write_batch_csv(&fixed, &mut buf)?;
    out.add("deterministic.csv", buf);
    let summary = |r: &crate::floatlab::BatchReport| {
        json!({ "max_abs_diff": r.max_abs_diff, "bitwise_identical": r.bitwise_identical })
    };
    out.json(
        "floatlab.json",
        &json!({
            "witness": witness,
            "corpus_plans": { "max_abs_diff": on_corpus.max_abs_diff, "bitwise_identical": on_corpus.bitwise_identical },
            "requests": requests.len(),
            "batch_sizes": batch_sizes,
            "batch_dependent": summary(&dependent),
            "deterministic": summary(&fixed),
        }),
    )?;
    Ok((!fixed.bitwise_identical).then(|| "deterministic kernel differed across batch sizes".to_string()))
}

fn manifest(cfg: &RunConfig, files: &[String]) -> Value {
    json!({
        "tool": "llmlab",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cfg.subcommand,
        "config_file": cfg.config_file,
        "rng": Rng::ALGORITHM,
        "parameters": cfg.params,
        "outputs": files,
    })
}

/// Resolves, runs, and writes every artifact plus the manifest.
pub fn execute(cli: &Cli) -> CliResult<RunSummary> {
    let cfg = resolve(cli)?;
    let mut out = Artifacts::default();
    let failed_check = match &cli.command {
        Command::Gradcheck(_) => run_gradcheck(&cfg, &mut out)?,
        Command::AttentionDemo(_) => run_attention_demo(&cfg, &mut out)?,
        Command::Generate(_) => run_generate(&cfg, &mut out)?,
        Command::BpeTrain(_) => run_bpe_train(&cfg, &mut out)?,
        Command::BpeEncode(_) => run_bpe_encode(&cfg, &mut out)?,
        Command::BpeDecode(_) => run_bpe_decode(&cfg, &mut out)?,
        Command::Capacity(_) => run_capacity(&cfg, &mut out)?,
        Command::Contexts(_) => run_contexts(&cfg, &mut out)?,
        Command::Uattention(_) => run_uattention(&cfg, &mut out)?,
        Command::Floatlab(_) => run_floatlab(&cfg, &mut out)?,
    };
    let dir = cfg.out_dir()?;
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut files = Vec::with_capacity(out.files.len() + 1);
    for (name, bytes) in &out.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        files.push(name.clone());
    }
    files.push(MANIFEST.to_string());
    let mut text = serde_json::to_string_pretty(&manifest(&cfg, &files)).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(RunSummary {
        out_dir: dir,
        files,
        failed_check,
    })
}

/// Parses `args` (program name first), runs, reports on stdout/stderr, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("wrote {} files to {}", summary.files.len(), summary.out_dir.display());
            match summary.failed_check {
                None => EXIT_OK,
                Some(msg) => {
                    eprintln!("llmlab: check failed: {msg}");
                    EXIT_VALIDATION
                }
            }
        }
        Err(e) => {
            eprintln!("llmlab: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `llmlab {} --help` for usage", cli.command.name());
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("llmlab").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_are_recorded_with_their_source() {
        let cfg = resolve(&parse(&["gradcheck"])).unwrap();
        assert_eq!(cfg.params["seed"], Resolved { value: json!(0), source: Source::Default });
        assert_eq!(cfg.params["epsilon"].value, json!(1e-5));
        assert_eq!(cfg.params["trials"].value, json!(1));
        assert_eq!(cfg.params["parallel"].value, json!(false));
        assert_eq!(cfg.params["out"].value, json!(DEFAULT_OUT));
        let cap = resolve(&parse(&["capacity"])).unwrap();
        assert_eq!(cap.params["trials"].value, json!(10));
        assert_eq!(cap.params["dims"].value, json!([32, 64, 128, 256]));
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 5, "steps": 3, "temperature": 0.5}"#).unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve(&parse(&["generate", "--config", p, "--seed", "9"])).unwrap();
        assert_eq!(cfg.params["seed"], Resolved { value: json!(9), source: Source::Flag });
        assert_eq!(cfg.params["steps"], Resolved { value: json!(3), source: Source::Config });
        assert_eq!(cfg.params["vocab"].source, Source::Default);
        // global flags may come before the subcommand too
        let cfg = resolve(&parse(&["--seed", "4", "generate", "--config", p])).unwrap();
        assert_eq!(cfg.params["seed"].value, json!(4));
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"stepz": 3}"#).unwrap();
        let err = resolve(&parse(&["generate", "--config", path.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("stepz"));
        fs::write(&path, "[1, 2]").unwrap();
        assert_eq!(resolve(&parse(&["generate", "--config", path.to_str().unwrap()])).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn mistyped_config_value_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"steps": "many"}"#).unwrap();
        let cfg = resolve(&parse(&["generate", "--config", path.to_str().unwrap()])).unwrap();
        let err = cfg.get::<usize>("steps").unwrap_err();
        assert_eq!(err.exit_code(), EXIT_VALIDATION);
        assert!(err.to_string().contains("`steps`"));
    }

    #[test]
    fn missing_required_input_is_usage_error() {
        let err = resolve(&parse(&["bpe-train"])).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("--input"));
    }

    #[test]
    fn negative_list_values_parse() {
        let cfg = resolve(&parse(&["contexts", "--state", "-1,0.5,2"])).unwrap();
        assert_eq!(cfg.params["state"].value, json!([-1.0, 0.5, 2.0]));
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        let io: CliError = crate::Error::Io(std::io::Error::other("x")).into();
        assert_eq!(io.exit_code(), EXIT_IO);
        let v: CliError = crate::Error::param("x", "bad").into();
        assert_eq!(v.exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn builtin_circuit_is_valid() {
        let c = builtin_circuit().unwrap();
        let p = c.pipeline().unwrap();
        let probs = p.probabilities(&StateVector::basis(4, 0).unwrap()).unwrap();
        let total: f64 = probs.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
