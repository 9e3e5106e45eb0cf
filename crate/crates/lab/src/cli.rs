//! The `mess3` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mess3_core::analysis::{
    attention_decay_fit, collect_activations, embedding_geometry_check, mean_attention, ov_geometry_check,
    parity_masses, pca, regress_to_geometry, ActivationSet, DecayFit, EmbeddingReport, OvReport, ParityMass,
    RegressionFit, Stage, Weighting,
};
use mess3_core::belief::{build_geometry_cloud, simplex_coords, GeometryCloud, GeometryVariant};
use mess3_core::hmm::{build_mess3, enumerate_contexts, sample_sequence, stationary_distribution, HmmSpec, TokenSeq};
use mess3_core::nn::{ModelConfig, ModelParams};
use mess3_core::spectral::{decompose, predict_auto, predict_ov_and_embeddings, requires_two_heads, OvEmbedPrediction};
use mess3_core::train::{evaluate, initial_params, train_with, AdamConfig, EvalReport, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{LabError, LabResult};
use crate::exec::Threads;
use crate::formats;
use crate::manifest::Manifest;
use crate::svg::{render_panels, render_svg, Panel, Point};

#[derive(Debug, Parser)]
#[command(name = "mess3", version, about = "Belief geometry of Mess3 processes and the transformers trained on them")]
pub struct Cli {
    /// Seed for sampling, initialization and data order.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample sequences, and optionally enumerate every context with its probability.
    Generate(GenerateArgs),
    /// Belief-state point cloud over every context up to a length.
    Geometry(GeometryArgs),
    /// Spectral decomposition and the predicted attention, OV and embedding geometry.
    Theory(TheoryArgs),
    /// Train a transformer on sampled sequences.
    Train(TrainArgs),
    /// Compare a trained checkpoint with the theory.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProcessArgs {
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.15)]
    pub x: f64,
}

impl ProcessArgs {
    fn spec(&self) -> LabResult<HmmSpec> {
        Ok(build_mess3(self.alpha, self.x)?)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub process: ProcessArgs,
    /// Number of sampled sequences.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub len: usize,
    /// Also write every context up to this length.
    #[arg(long)]
    pub enumerate: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Full,
    ConstrainedBayes,
    ConstrainedRownorm,
    Spectral,
}

impl VariantArg {
    fn geometry(self) -> GeometryVariant {
        match self {
            VariantArg::Full => GeometryVariant::Full,
            VariantArg::ConstrainedBayes => GeometryVariant::ConstrainedBayes,
            VariantArg::ConstrainedRownorm => GeometryVariant::ConstrainedRownorm,
            VariantArg::Spectral => GeometryVariant::ConstrainedSpectral,
        }
    }
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[command(flatten)]
    pub process: ProcessArgs,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[command(flatten)]
    pub process: ProcessArgs,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub process: ProcessArgs,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 2_000_000)]
    pub tokens: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 250)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 8)]
    pub eval_max_len: usize,
    /// Pre-norm layer normalization.
    #[arg(long)]
    pub layer_norm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Prob,
    Uniform,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Prob => Weighting::Probability,
            WeightingArg::Uniform => Weighting::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint step or `latest`.
    #[arg(long, default_value = "latest")]
    pub checkpoint: String,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, value_enum, default_value_t = WeightingArg::Prob)]
    pub weighting: WeightingArg,
    /// Defaults to `<run>/analysis/step-<n>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Ctx {
    seed: u64,
    quiet: bool,
    exec: Threads,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn create_dir(dir: &Path) -> LabResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn create(path: &Path) -> LabResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| LabError::io(path, e))?))
}

fn write_text(path: &Path, text: &str) -> LabResult<()> {
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> LabResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| LabError::format(path.display().to_string(), e))?;
    write_text(path, &(text + "\n"))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> LabResult<()> {
    let ctx = Ctx { seed: cli.seed, quiet: cli.quiet, exec: Threads::new(cli.threads) };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Geometry(a) => geometry(&ctx, a),
        Command::Theory(a) => theory(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
    }
}

#[derive(Serialize)]
struct ProcessEcho {
    alpha: f64,
    x: f64,
}

impl From<&ProcessArgs> for ProcessEcho {
    fn from(p: &ProcessArgs) -> Self {
        Self { alpha: p.alpha, x: p.x }
    }
}

#[derive(Serialize)]
struct HmmFile<'a> {
    spec: &'a HmmSpec,
    stationary: [f64; 3],
    zeta: f64,
}

fn generate(ctx: &Ctx, a: GenerateArgs) -> LabResult<()> {
    let spec = a.process.spec()?;
    if a.len == 0 {
        return Err(LabError::Usage("--len must be at least 1".into()));
    }
    create_dir(&a.out)?;
    #[derive(Serialize)]
    struct Echo {
        #[serde(flatten)]
        process: ProcessEcho,
        count: usize,
        len: usize,
        enumerate: Option<usize>,
    }
    let mut manifest = Manifest::new(
        "generate",
        ctx.seed,
        &Echo { process: (&a.process).into(), count: a.count, len: a.len, enumerate: a.enumerate },
    )?;

    let hmm = HmmFile { spec: &spec, stationary: stationary_distribution(&spec)?, zeta: decompose(&spec)?.zeta()? };
    write_json(&a.out.join("hmm.json"), &hmm)?;
    manifest.record(&a.out, "hmm.json")?;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let seqs: Vec<_> = (0..a.count).map(|_| sample_sequence(&spec, &mut rng, a.len)).collect();
    formats::write_sequences(create(&a.out.join("sequences.csv"))?, &seqs)?;
    manifest.record(&a.out, "sequences.csv")?;

    if let Some(max_len) = a.enumerate {
        let contexts = enumerate_contexts(&spec, max_len)?;
        formats::write_contexts(create(&a.out.join("contexts.csv"))?, &contexts)?;
        manifest.record(&a.out, "contexts.csv")?;
        ctx.log(format!("enumerated {} contexts", contexts.len()));
    }
    manifest.write(&a.out)?;
    ctx.log(format!("wrote {} sequences to {}", seqs.len(), a.out.display()));
    Ok(())
}

fn cloud_points(cloud: &GeometryCloud) -> Vec<Point> {
    cloud
        .entries
        .iter()
        .map(|e| {
            let (x, y) = simplex_coords(&e.point.coords);
            Point { x, y, rgb: e.rgb }
        })
        .collect()
}

fn geometry(ctx: &Ctx, a: GeometryArgs) -> LabResult<()> {
    let spec = a.process.spec()?;
    let variant = a.variant.geometry();
    let cloud = build_geometry_cloud(&spec, a.max_len, variant)?;
    create_dir(&a.out)?;
    #[derive(Serialize)]
    struct Echo {
        #[serde(flatten)]
        process: ProcessEcho,
        max_len: usize,
        variant: VariantArg,
        geometry: &'static str,
    }
    let mut manifest = Manifest::new(
        "geometry",
        ctx.seed,
        &Echo { process: (&a.process).into(), max_len: a.max_len, variant: a.variant, geometry: variant.name() },
    )?;
    formats::write_cloud(create(&a.out.join("cloud.csv"))?, &cloud)?;
    manifest.record(&a.out, "cloud.csv")?;
    let svg = render_svg(&cloud_points(&cloud), &format!("{} (alpha={}, x={})", variant.name(), a.process.alpha, a.process.x))?;
    write_text(&a.out.join("cloud.svg"), &svg)?;
    manifest.record(&a.out, "cloud.svg")?;
    manifest.write(&a.out)?;
    ctx.log(format!("wrote {} points to {}", cloud.len(), a.out.display()));
    Ok(())
}

#[derive(Serialize)]
struct OvEmbeddingFile {
    head_count: usize,
    zeta: f64,
    prediction: Option<OvEmbedPrediction>,
    note: Option<String>,
}

fn theory(ctx: &Ctx, a: TheoryArgs) -> LabResult<()> {
    let spec = a.process.spec()?;
    let decomp = decompose(&spec)?;
    let pred = predict_auto(&spec, a.max_len)?;
    let regime = if requires_two_heads(a.process.x) {
        "zeta < 0: alternating lag signs, two heads split even and odd lags"
    } else {
        "zeta >= 0: one head with geometric decay"
    };
    create_dir(&a.out)?;
    #[derive(Serialize)]
    struct Echo {
        #[serde(flatten)]
        process: ProcessEcho,
        max_len: usize,
        zeta: f64,
        head_count: usize,
        regime: &'static str,
    }
    let mut manifest = Manifest::new(
        "theory",
        ctx.seed,
        &Echo { process: (&a.process).into(), max_len: a.max_len, zeta: pred.zeta, head_count: pred.head_count, regime },
    )?;
    manifest.note(regime);

    write_json(&a.out.join("spectral.json"), &decomp)?;
    manifest.record(&a.out, "spectral.json")?;
    formats::write_pattern(create(&a.out.join("attention.csv"))?, &pred.patterns)?;
    manifest.record(&a.out, "attention.csv")?;
    let ov = match predict_ov_and_embeddings(&spec, &pred) {
        Ok(p) => OvEmbeddingFile { head_count: pred.head_count, zeta: pred.zeta, prediction: Some(p), note: None },
        Err(e) => {
            manifest.note(format!("no OV/embedding prediction: {e}"));
            OvEmbeddingFile { head_count: pred.head_count, zeta: pred.zeta, prediction: None, note: Some(e.to_string()) }
        }
    };
    write_json(&a.out.join("ov_embedding.json"), &ov)?;
    manifest.record(&a.out, "ov_embedding.json")?;
    manifest.write(&a.out)?;
    ctx.log(format!("zeta = {}, {} head(s); wrote {}", pred.zeta, pred.head_count, a.out.display()));
    Ok(())
}

/// What `train` records in its manifest and `analyze` reads back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub x: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn train(ctx: &Ctx, a: TrainArgs) -> LabResult<()> {
    let spec = a.process.spec()?;
    let model = ModelConfig {
        d_model: a.d_model,
        d_ff: a.d_ff,
        n_heads: a.heads,
        n_layers: a.layers,
        max_ctx: a.seq_len.max(a.eval_max_len),
        layer_norm: a.layer_norm,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        batch_size: a.batch_size,
        adam: AdamConfig { lr: a.lr, ..AdamConfig::default() },
        total_tokens: a.tokens,
        seq_len: a.seq_len,
        checkpoint_every: a.checkpoint_every,
        eval_max_len: a.eval_max_len,
        seed: ctx.seed,
    };
    model.validate()?;
    config.validate(&model)?;
    let ck_dir = a.out.join("checkpoints");
    create_dir(&ck_dir)?;
    let run_config = RunConfig { alpha: a.process.alpha, x: a.process.x, model, train: config.clone() };
    let mut manifest = Manifest::new("train", ctx.seed, &run_config)?;
    manifest.note(if model.layer_norm {
        "pre-norm layer normalization enabled"
    } else {
        "norm-free model (no layer normalization)"
    });
    manifest.note(format!("{} optimizer steps of {} sequences of length {}", config.steps(), a.batch_size, a.seq_len));

    let mut metrics = formats::MetricsWriter::new(create(&a.out.join("metrics.csv"))?)?;
    let mut saved = Vec::new();
    let mut io_error = None;
    let result = train_with(&spec, model, config, &ctx.exec, |ck| {
        let name = checkpoint::file_name(ck.step);
        let step = checkpoint::save(&ck_dir.join(&name), ck, ctx.seed).and_then(|()| metrics.push(ck));
        if let Err(e) = step {
            io_error = Some(e);
            return Err(mess3_core::Error::Config("could not write checkpoint".into()));
        }
        saved.push(name);
        ctx.log(format!("step {:>6}  loss {:.5}  kl {:.5}", ck.step, ck.train_loss, ck.kl));
        Ok(())
    });
    drop(metrics);
    if let Some(e) = io_error {
        return Err(e);
    }
    if let Err(e) = &result {
        manifest.note(format!("aborted: {e}"));
    }
    manifest.record(&a.out, "metrics.csv")?;
    for name in &saved {
        manifest.record(&a.out, &format!("checkpoints/{name}"))?;
    }
    manifest.write(&a.out)?;
    let run = result?;
    let last = run.last();
    ctx.log(format!("final step {}: loss {:.5}, kl {:.5}", last.step, last.train_loss, last.kl));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub stage: Stage,
    pub target: GeometryVariant,
    pub mse: f64,
    pub baseline_mse: f64,
    pub normalized_mse: f64,
    pub ridge: bool,
}

impl From<&RegressionFit> for RegressionSummary {
    fn from(f: &RegressionFit) -> Self {
        Self {
            stage: f.stage,
            target: f.target,
            mse: f.mse,
            baseline_mse: f.baseline_mse,
            normalized_mse: f.normalized_mse,
            ridge: f.ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadAttention {
    pub head: usize,
    pub rows: Vec<Vec<f64>>,
    pub decay: Option<DecayFit>,
    pub parity: Option<ParityMass>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaSummary {
    pub stage: Stage,
    pub explained_ratio: Vec<f64>,
    pub cumulative_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub step: u64,
    pub max_len: usize,
    pub weighting: Weighting,
    pub alpha: f64,
    pub x: f64,
    pub eval: EvalReport,
    pub regressions: Vec<RegressionSummary>,
    pub attention: Vec<HeadAttention>,
    pub ov: OvReport,
    pub embedding: EmbeddingReport,
    pub pca: Vec<PcaSummary>,
    pub notes: Vec<String>,
}

const PCA_COMPONENTS: usize = 7;

fn projection(acts: &ActivationSet, stage: Stage, fit: &RegressionFit) -> Vec<[f64; 3]> {
    (0..acts.len())
        .map(|i| {
            let y = fit.fit.apply(acts.row(stage, i));
            [y[0], y[1], y[2]]
        })
        .collect()
}

fn points(coords: &[[f64; 3]], rgb: &[[f64; 3]]) -> Vec<Point> {
    coords
        .iter()
        .zip(rgb)
        .map(|(c, col)| {
            let (x, y) = simplex_coords(c);
            Point { x, y, rgb: *col }
        })
        .collect()
}

fn resolve_step(run: &Path, which: &str) -> LabResult<u64> {
    if which == "latest" {
        let steps = checkpoint::list_steps(&run.join("checkpoints"))?;
        return steps.last().copied().ok_or_else(|| LabError::Missing(run.join("checkpoints")));
    }
    which.parse().map_err(|_| LabError::Usage(format!("--checkpoint must be a step number or `latest`, got {which:?}")))
}

fn analyze(ctx: &Ctx, a: AnalyzeArgs) -> LabResult<()> {
    let manifest = Manifest::read(&a.run)?;
    let run: RunConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| LabError::format("run manifest", e))?;
    let step = resolve_step(&a.run, &a.checkpoint)?;
    let (file, params) = checkpoint::load(&a.run.join("checkpoints").join(checkpoint::file_name(step)))?;
    let spec = build_mess3(run.alpha, run.x)?;
    let weighting: Weighting = a.weighting.into();
    let analysis = analysis_report(ctx, &spec, &run, &params, file.step, a.max_len, weighting)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("analysis").join(format!("step-{step}")));
    create_dir(&out)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        run: String,
        checkpoint: u64,
        max_len: usize,
        weighting: Weighting,
        run_config: &'a RunConfig,
    }
    let mut out_manifest = Manifest::new(
        "analyze",
        file.seed,
        &Echo { run: a.run.display().to_string(), checkpoint: step, max_len: a.max_len, weighting, run_config: &run },
    )?;
    out_manifest.record_input(&a.run.join(crate::manifest::FILE_NAME))?;
    out_manifest.record_input(&a.run.join("checkpoints").join(checkpoint::file_name(step)))?;
    write_json(&out.join("report.json"), &analysis.report)?;
    out_manifest.record(&out, "report.json")?;
    for (name, coords) in [("mid_projection.csv", &analysis.mid), ("post_projection.csv", &analysis.post)] {
        formats::write_projection(create(&out.join(name))?, &analysis.seqs, coords, &analysis.rgb)?;
        out_manifest.record(&out, name)?;
    }
    write_text(&out.join("figure.svg"), &analysis.svg)?;
    out_manifest.record(&out, "figure.svg")?;
    out_manifest.write(&out)?;
    for reg in &analysis.report.regressions {
        ctx.log(format!(
            "{:<4} -> {:<20} normalized MSE {:.4}",
            reg.stage.name(),
            reg.target.name(),
            reg.normalized_mse
        ));
    }
    ctx.log(format!("wrote {}", out.display()));
    Ok(())
}

struct Analysis {
    report: AnalysisReport,
    seqs: Vec<TokenSeq>,
    rgb: Vec<[f64; 3]>,
    mid: Vec<[f64; 3]>,
    post: Vec<[f64; 3]>,
    svg: String,
}

fn analysis_report(
    ctx: &Ctx,
    spec: &HmmSpec,
    run: &RunConfig,
    params: &ModelParams,
    step: u64,
    max_len: usize,
    weighting: Weighting,
) -> LabResult<Analysis> {
    let exec = &ctx.exec;
    let mut notes = Vec::new();
    ctx.log("collecting activations");
    let acts = collect_activations(params, spec, max_len, 0, exec)?;
    let baseline = collect_activations(&initial_params(params.config, run.train.seed)?, spec, max_len, 0, exec)?;
    let rownorm = build_geometry_cloud(spec, max_len, GeometryVariant::ConstrainedRownorm)?;
    let bayes = build_geometry_cloud(spec, max_len, GeometryVariant::ConstrainedBayes)?;
    let full = build_geometry_cloud(spec, max_len, GeometryVariant::Full)?;

    let mut fits = Vec::new();
    for stage in [Stage::Mid, Stage::Post] {
        for cloud in [&rownorm, &bayes, &full] {
            fits.push(regress_to_geometry(&acts, stage, cloud, weighting, &baseline)?);
        }
    }
    let mid_fit = &fits[0];
    let post_fit = &fits[5];

    ctx.log("attention");
    let mut attention = Vec::new();
    for h in 0..params.config.n_heads {
        let pattern = mean_attention(params, spec, max_len, 0, h, weighting, exec)?;
        let decay = match attention_decay_fit(&pattern) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("head {h}: no decay fit: {e}"));
                None
            }
        };
        let parity = parity_masses(&pattern).ok();
        attention.push(HeadAttention { head: h, rows: pattern.rows, decay, parity });
    }
    let ov = ov_geometry_check(params, spec, &mid_fit.fit)?;
    let embedding = embedding_geometry_check(params, &mid_fit.fit)?;

    let k = PCA_COMPONENTS.min(params.config.d_model);
    let mut pcas = Vec::new();
    for stage in Stage::ALL {
        let p = pca(&acts, stage, k, weighting)?;
        pcas.push(PcaSummary { stage, explained_ratio: p.explained_ratio, cumulative_ratio: p.cumulative_ratio });
    }
    let eval = evaluate(params, spec, max_len, exec)?;

    let seqs: Vec<_> = full.entries.iter().map(|e| e.seq.clone()).collect();
    let rgb: Vec<[f64; 3]> = full.entries.iter().map(|e| e.rgb).collect();
    let mid = projection(&acts, Stage::Mid, mid_fit);
    let post = projection(&acts, Stage::Post, post_fit);
    let svg = render_panels(&[
        Panel { title: "theory: constrained".into(), points: cloud_points(&rownorm) },
        Panel { title: format!("model: mid (nMSE {:.3})", mid_fit.normalized_mse), points: points(&mid, &rgb) },
        Panel { title: "theory: full".into(), points: cloud_points(&full) },
        Panel { title: format!("model: post (nMSE {:.3})", post_fit.normalized_mse), points: points(&post, &rgb) },
    ])?;
    let report = AnalysisReport {
        step,
        max_len,
        weighting,
        alpha: run.alpha,
        x: run.x,
        eval,
        regressions: fits.iter().map(RegressionSummary::from).collect(),
        attention,
        ov,
        embedding,
        pca: pcas,
        notes,
    };
    Ok(Analysis { report, seqs, rgb, mid, post, svg })
}
