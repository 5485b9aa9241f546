mod scenario;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use advrelight::ap::{self, AdvLNetParams, TrainConfig, Variant, DEFAULT_HIDDEN};
use advrelight::aq::{self, AttackConfig, GradientMode};
use advrelight::embedder::{from_spec_pooled, similarity, Embedder};
use advrelight::harness::{
    build_split, clustered_pairs, evaluate, sensitivity_analysis, training_faces, AttackMethod, Dataset,
};
use advrelight::io::{self, Manifest, ManifestIdentity, DEFAULT_K};
use advrelight::phy::{recurrence_loop, trace_csv};
use advrelight::relight::{estimate_light, quotient_relight};
use advrelight::report::sig6;
use advrelight::sh::{lighting_map, SHLight};
use advrelight::synth::CorpusConfig;

const DEFAULT_EPSILONS: [f64; 4] = [0.1, 0.2, 0.4, 0.8];

#[derive(Debug, Parser)]
#[command(name = "advrelight", version, about = "Adversarial face relighting toolkit")]
struct Cli {
    /// Seed for splits, random baselines, network init and training order.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Attack embedder: `builtin`, `builtin:<seed>` or `external:<command>`.
    #[arg(long, global = true, default_value = "builtin")]
    embedder: String,

    /// Processes started per external embedder.
    #[arg(long, global = true, default_value_t = 1)]
    pool: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relight a face to a new light by the shading quotient.
    Relight(RelightArgs),
    /// Least-squares fit of the light of a face.
    EstimateLight(EstimateArgs),
    /// Iterative adversarial light search on one face.
    AttackAq(AttackAqArgs),
    /// Train the one-step adversarial light network.
    ApTrain(ApTrainArgs),
    /// Apply a trained light network to one face.
    ApRun(ApRunArgs),
    /// Simulate closed-loop reproduction of a light with a point source.
    PhySim(PhySimArgs),
    /// Split, attack, score and plot ROC curves.
    Eval(EvalArgs),
    /// Histogram of lighting-map sensitive points on a hexagonal grid.
    AnalyzeLight(AnalyzeArgs),
    /// Write the procedural face corpus to disk with a manifest.
    SynthCorpus(SynthArgs),
}

#[derive(Debug, Args)]
struct FaceArgs {
    #[arg(long)]
    image: PathBuf,
    /// 16-bit RGBA normal map of the same size.
    #[arg(long)]
    normals: PathBuf,
}

#[derive(Debug, Args)]
struct RelightArgs {
    #[command(flatten)]
    face: FaceArgs,
    /// Target light file.
    #[arg(long)]
    light: PathBuf,
    /// Light the image was taken under; estimated when absent.
    #[arg(long)]
    source_light: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    face: FaceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the lighting map as a gray PNG.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GradientArg {
    /// Analytic when the embedder is differentiable, otherwise finite differences.
    Auto,
    Analytic,
    Fd,
}

impl GradientArg {
    fn resolve(self, embedder: &dyn Embedder) -> GradientMode {
        match self {
            GradientArg::Analytic => GradientMode::AnalyticChain,
            GradientArg::Fd => GradientMode::FiniteDifference,
            GradientArg::Auto if embedder.descriptor().differentiable => GradientMode::AnalyticChain,
            GradientArg::Auto => GradientMode::FiniteDifference,
        }
    }
}

#[derive(Debug, Args)]
struct AttackAqArgs {
    #[command(flatten)]
    face: FaceArgs,
    #[arg(long, default_value_t = 0.4)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = GradientArg::Auto)]
    gradient: GradientArg,
    #[arg(long, default_value_t = 1e-3)]
    fd_step: f64,
    #[arg(long)]
    out: PathBuf,
    /// Write the adversarial light here.
    #[arg(long)]
    light_out: Option<PathBuf>,
    /// Per-iteration CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Dataset manifest; the procedural corpus is used when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    identities: usize,
    /// Images per identity (2k).
    #[arg(long, default_value_t = 2 * DEFAULT_K)]
    images: usize,
    #[arg(long, default_value_t = advrelight::synth::DEFAULT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 2024)]
    corpus_seed: u64,
}

impl CorpusArgs {
    fn synthetic_config(&self) -> Result<CorpusConfig> {
        if self.images < 2 || self.images % 2 != 0 {
            bail!("--images must be even and >= 2, got {}", self.images);
        }
        if self.identities < 2 {
            bail!("--identities must be >= 2");
        }
        Ok(CorpusConfig {
            identities: self.identities,
            images_per_identity: self.images,
            side: self.side,
            seed: self.corpus_seed,
        })
    }

    fn load(&self) -> Result<Dataset> {
        match &self.manifest {
            Some(path) => {
                let m = Manifest::load(path)?;
                Ok(Dataset::from_manifest(&m)?)
            }
            None => {
                let cfg = self.synthetic_config()?;
                Ok(Dataset::synthetic(&cfg, cfg.images_per_identity / 2))
            }
        }
    }
}

#[derive(Debug, Args)]
struct NetworkArgs {
    #[arg(long, default_value = "static")]
    variant: Variant,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
}

impl NetworkArgs {
    fn train(&self, data: &[(advrelight::FaceImage, advrelight::NormalMap)], embedder: &dyn Embedder, gradient: GradientArg, seed: u64) -> Result<ap::TrainOutcome> {
        let init = AdvLNetParams::init(self.variant, self.hidden, embedder.descriptor().dimension, seed)?;
        let cfg = TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch,
            epochs: self.epochs,
            seed,
            gradient_mode: gradient.resolve(embedder),
            ..TrainConfig::default()
        };
        Ok(ap::train(data, embedder, init, &cfg)?)
    }
}

#[derive(Debug, Args)]
struct ApTrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, value_enum, default_value_t = GradientArg::Auto)]
    gradient: GradientArg,
    /// Parameter file to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ApRunArgs {
    #[command(flatten)]
    face: FaceArgs,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    light_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PhySimArgs {
    /// TOML scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Trace CSV, written also when the loop does not converge.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    None,
    Random,
    Aq,
    Ap,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::None, MethodArg::Random, MethodArg::Aq])]
    method: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPSILONS)]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = GradientArg::Auto)]
    gradient: GradientArg,
    /// Embedder that scores the attacked faces; defaults to the attack embedder.
    #[arg(long)]
    eval_embedder: Option<String>,
    /// Trained light network for the `ap` method; trained on the reference
    /// split when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, default_value = "eval-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// `lights.csv` written by `eval`; a clustered synthetic set is used when absent.
    #[arg(long)]
    lights: Option<PathBuf>,
    /// Only rows of this method.
    #[arg(long)]
    method: Option<String>,
    /// Only rows with this epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    cluster_azimuth: f64,
    #[arg(long, default_value_t = 0.6)]
    cluster_polar: f64,
    #[arg(long, default_value_t = 0.1)]
    cluster_spread: f64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    /// Hexagon circumradius in map pixels.
    #[arg(long, default_value_t = 4.0)]
    hex_size: f64,
    #[arg(long, default_value = "analysis-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    identities: usize,
    #[arg(long, default_value_t = 2 * DEFAULT_K)]
    images: usize,
    #[arg(long, default_value_t = advrelight::synth::DEFAULT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 2024)]
    corpus_seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

struct Globals {
    seed: u64,
    embedder: Arc<dyn Embedder>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let embedder = from_spec_pooled(&cli.embedder, cli.pool).with_context(|| format!("embedder `{}`", cli.embedder))?;
    let ctx = Globals {
        seed: cli.seed,
        embedder,
    };
    match cli.command {
        Command::Relight(a) => relight(a),
        Command::EstimateLight(a) => estimate(a),
        Command::AttackAq(a) => attack_aq(&ctx, a),
        Command::ApTrain(a) => ap_train(&ctx, a),
        Command::ApRun(a) => ap_run(&ctx, a),
        Command::PhySim(a) => phy_sim(&ctx, a),
        Command::Eval(a) => eval(&ctx, a, cli.pool),
        Command::AnalyzeLight(a) => analyze(&ctx, a),
        Command::SynthCorpus(a) => synth(a),
    }
}

fn load_face(a: &FaceArgs) -> Result<(advrelight::FaceImage, advrelight::NormalMap)> {
    let image = io::read_image(&a.image)?;
    let normals = io::read_normals(&a.normals)?;
    if (image.width(), image.height()) != (normals.width(), normals.height()) {
        bail!(
            "image is {}x{} but normal map is {}x{}",
            image.width(),
            image.height(),
            normals.width(),
            normals.height()
        );
    }
    Ok((image, normals))
}

fn print_light(label: &str, l: &SHLight) {
    let parts: Vec<String> = l.0.iter().map(|&c| sig6(c)).collect();
    println!("{label} [{}]", parts.join(", "));
}

fn relight(a: RelightArgs) -> Result<()> {
    let (image, normals) = load_face(&a.face)?;
    let target = io::read_light(&a.light)?;
    let source = match &a.source_light {
        Some(p) => io::read_light(p)?,
        None => estimate_light(&image, &normals)?,
    };
    let r = quotient_relight(&image, &normals, &source, &target)?;
    io::write_image(&a.out, &r.image)?;
    print_light("source_light", &source);
    println!("clamp_fraction {}", sig6(r.clamp_fraction));
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let (image, normals) = load_face(&a.face)?;
    let l = estimate_light(&image, &normals)?;
    print!("{}", io::format_light(&l));
    if let Some(p) = &a.out {
        io::write_light(p, &l)?;
    }
    if let Some(p) = &a.map {
        io::write_lighting_map(p, &lighting_map(&l, a.resolution)?)?;
    }
    Ok(())
}

fn attack_aq(ctx: &Globals, a: AttackAqArgs) -> Result<()> {
    let (image, normals) = load_face(&a.face)?;
    let mut cfg = AttackConfig::new(a.epsilon, a.iters)?.with_mode(a.gradient.resolve(&*ctx.embedder));
    cfg.fd_step = a.fd_step;
    let t = aq::attack(&image, &normals, None, &*ctx.embedder, &cfg)?;
    io::write_image(&a.out, &t.image)?;
    if let Some(p) = &a.light_out {
        io::write_light(p, &t.adversarial_light)?;
    }
    if let Some(p) = &a.trace {
        io::write_text(p, &t.to_csv())?;
    }
    print_light("source_light", &t.source_light);
    print_light("adversarial_light", &t.adversarial_light);
    println!("initial_similarity {}", sig6(t.initial_similarity));
    println!("final_similarity {}", sig6(t.final_similarity));
    println!("similarity_delta {}", sig6(t.final_similarity - t.initial_similarity));
    Ok(())
}

fn ap_train(ctx: &Globals, a: ApTrainArgs) -> Result<()> {
    let dataset = a.corpus.load()?;
    let split = build_split(&dataset, ctx.seed)?;
    let data = training_faces(&dataset, &split);
    let out = a.net.train(&data, &*ctx.embedder, a.gradient, ctx.seed)?;
    io::write_text(&a.out, &out.params.to_json()?)?;
    if let Some(p) = &a.history {
        io::write_text(p, &out.history_csv())?;
    }
    print!("{}", out.history_csv());
    Ok(())
}

fn load_params(path: &Path, embedder: &dyn Embedder) -> Result<AdvLNetParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let params = AdvLNetParams::from_json(&text).with_context(|| format!("parameter file {}", path.display()))?;
    let dim = embedder.descriptor().dimension;
    if params.variant == Variant::Dynamic && params.embed_dim != dim {
        bail!(
            "parameters expect {}-dimensional embeddings, embedder gives {dim}",
            params.embed_dim
        );
    }
    Ok(params)
}

fn ap_run(ctx: &Globals, a: ApRunArgs) -> Result<()> {
    let (image, normals) = load_face(&a.face)?;
    let params = load_params(&a.params, &*ctx.embedder)?;
    let source = estimate_light(&image, &normals)?;
    let (relit, adv) = ap::predict(&image, &normals, &params, &*ctx.embedder)?;
    io::write_image(&a.out, &relit)?;
    if let Some(p) = &a.light_out {
        io::write_light(p, &adv)?;
    }
    let sim = similarity(&ctx.embedder.embed(&relit)?, &ctx.embedder.embed(&image)?)?;
    print_light("source_light", &source);
    print_light("adversarial_light", &adv);
    println!("similarity {}", sig6(sim));
    println!("loss {}", sig6(ap::loss(&image, &relit, &*ctx.embedder)?));
    Ok(())
}

fn phy_sim(ctx: &Globals, a: PhySimArgs) -> Result<()> {
    let sc = scenario::Scenario::load(&a.scenario)?;
    let (scene, target, start, mut cfg) = sc.build()?;
    if sc.control.seed.is_none() {
        cfg.seed = ctx.seed;
    }
    match recurrence_loop(&target, start, &scene, &cfg) {
        Ok(r) => {
            if let Some(p) = &a.trace {
                io::write_text(p, &r.to_csv())?;
            }
            let p = r.final_pose;
            println!("converged after {} adjustments", r.adjustments());
            println!(
                "final_pose azimuth {} polar {} distance {} intensity {}",
                sig6(p.azimuth),
                sig6(p.polar),
                sig6(p.distance),
                sig6(p.intensity)
            );
            Ok(())
        }
        Err(advrelight::Error::NonConvergence { iterations, poses, trace }) => {
            if let Some(p) = &a.trace {
                io::write_text(p, &trace_csv(&poses, &trace))?;
            }
            bail!("no convergence after {iterations} iterations")
        }
        Err(e) => Err(e.into()),
    }
}

fn eval(ctx: &Globals, a: EvalArgs, pool: usize) -> Result<()> {
    let dataset = a.corpus.load()?;
    let eval_embedder = match &a.eval_embedder {
        Some(spec) => from_spec_pooled(spec, pool).with_context(|| format!("eval embedder `{spec}`"))?,
        None => ctx.embedder.clone(),
    };
    let mode = a.gradient.resolve(&*ctx.embedder);
    let mut methods = Vec::new();
    for m in &a.method {
        match m {
            MethodArg::None => methods.push(AttackMethod::None),
            MethodArg::Random => {
                for &epsilon in &a.epsilon {
                    methods.push(AttackMethod::Random { epsilon });
                }
            }
            MethodArg::Aq => {
                for &e in &a.epsilon {
                    let config = AttackConfig::new(e, a.iters)?.with_mode(mode);
                    methods.push(AttackMethod::Aq { config });
                }
            }
            MethodArg::Ap => {
                let params = match &a.params {
                    Some(p) => load_params(p, &*ctx.embedder)?,
                    None => {
                        let split = build_split(&dataset, ctx.seed)?;
                        let data = training_faces(&dataset, &split);
                        let out = a.net.train(&data, &*ctx.embedder, a.gradient, ctx.seed)?;
                        eprintln!("trained light network, epoch losses:");
                        for (i, l) in out.history.iter().enumerate() {
                            eprintln!("  {} {}", i + 1, sig6(*l));
                        }
                        out.params
                    }
                };
                methods.push(AttackMethod::Ap { params: Box::new(params) });
            }
        }
    }
    let report = evaluate(&dataset, &methods, &*ctx.embedder, &*eval_embedder, ctx.seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let summary = report.summary_csv();
    io::write_text(&a.out_dir.join("summary.csv"), &summary)?;
    io::write_text(&a.out_dir.join("roc.csv"), &report.roc_csv())?;
    io::write_text(&a.out_dir.join("lights.csv"), &report.lights_csv())?;
    io::write_text(&a.out_dir.join("roc.svg"), &report.roc_svg())?;
    print!("{summary}");
    for row in &report.rows {
        for f in &row.outcome.failures {
            eprintln!("warning: {} target {}: {}", row.method, f.position, f.message);
        }
    }
    Ok(())
}

/// Reads `(light, adversarial light)` pairs from an `eval` lights file.
fn read_light_pairs(path: &Path, method: Option<&str>, epsilon: Option<f64>) -> Result<Vec<(SHLight, SHLight)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty lights file")?;
    if !header.starts_with("method,epsilon,position,l0") {
        bail!("{} is not a lights file", path.display());
    }
    let mut pairs = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 21 {
            bail!("{}:{}: expected 21 fields, got {}", path.display(), n + 2, fields.len());
        }
        if method.is_some_and(|m| m != fields[0]) {
            continue;
        }
        if let Some(e) = epsilon {
            match fields[1].parse::<f64>() {
                Ok(v) if (v - e).abs() <= 1e-9 * e.abs().max(1.0) => {}
                _ => continue,
            }
        }
        let nums = fields[3..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .with_context(|| format!("{}:{}", path.display(), n + 2))?;
        let l = SHLight::new(nums[..9].try_into().expect("nine"))?;
        let adv = SHLight::new(nums[9..].try_into().expect("nine"))?;
        pairs.push((l, adv));
    }
    Ok(pairs)
}

fn analyze(ctx: &Globals, a: AnalyzeArgs) -> Result<()> {
    let (pairs, title) = match &a.lights {
        Some(p) => (
            read_light_pairs(p, a.method.as_deref(), a.epsilon)?,
            format!("sensitive points from {}", p.display()),
        ),
        None => (
            clustered_pairs(a.count, a.cluster_azimuth, a.cluster_polar, a.cluster_spread, ctx.seed)?,
            format!(
                "sensitive points, sources around azimuth {} polar {}",
                sig6(a.cluster_azimuth),
                sig6(a.cluster_polar)
            ),
        ),
    };
    if pairs.is_empty() {
        bail!("no light pairs selected");
    }
    let h = sensitivity_analysis(&pairs, a.resolution, a.hex_size)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    io::write_text(&a.out_dir.join("hexhist.csv"), &h.to_csv())?;
    io::write_text(&a.out_dir.join("hexhist.svg"), &h.to_svg(&title))?;
    println!("pairs {} skipped {} cells {}", h.total, h.skipped, h.cells.len());
    if let Some(m) = h.modal_cell() {
        println!("modal_cell x {} y {} count {}", sig6(m.center.0), sig6(m.center.1), m.count);
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.images < 2 || a.images % 2 != 0 {
        bail!("--images must be even and >= 2, got {}", a.images);
    }
    let cfg = CorpusConfig {
        identities: a.identities,
        images_per_identity: a.images,
        side: a.side,
        seed: a.corpus_seed,
    };
    let dataset = Dataset::synthetic(&cfg, a.images / 2);
    let mut identities = Vec::new();
    for id in &dataset.identities {
        let dir = a.out_dir.join(&id.id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut images = Vec::new();
        let mut normals = Vec::new();
        for (i, face) in id.faces.iter().enumerate() {
            let img = PathBuf::from(&id.id).join(format!("{i:02}.png"));
            let nrm = PathBuf::from(&id.id).join(format!("{i:02}_normals.png"));
            io::write_image(&a.out_dir.join(&img), &face.image)?;
            io::write_normals(&a.out_dir.join(&nrm), &face.normals)?;
            images.push(img);
            normals.push(nrm);
        }
        identities.push(ManifestIdentity {
            id: id.id.clone(),
            images,
            normals,
        });
    }
    let manifest = Manifest {
        k: dataset.k,
        identities,
        base: a.out_dir.clone(),
    };
    let path = a.out_dir.join("manifest.json");
    io::write_text(&path, &manifest.to_json()?)?;
    println!("{}", path.display());
    Ok(())
}
