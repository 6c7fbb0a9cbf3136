use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use traitalloc::gibbs::{run_chains, ChainOutput, Init, McmcConfig};
use traitalloc::io::{self, RunConfig, SimulateSpec};
use traitalloc::posterior::{sample_predictive, ModelHyper};
use traitalloc::rng::chain_rng;
use traitalloc::simulate::{simulate_fixed_n, simulate_from_model, ScenarioSpec};
use traitalloc::summaries::{
    adjusted_rand_index, histogram_summaries, min_vi_partition, pmf_mode, posterior_adjacency, waic,
    SimilarityMatrix,
};
use traitalloc::{ChainDraw, Error, GroupedCounts, KernelFamily, KernelHyper, ModelVariant};

/// Stream index for post-processing randomness, far from any chain index.
const SUMMARY_STREAM: u64 = 1 << 40;

#[derive(Parser)]
#[command(name = "traitalloc", version, about = "Trait-allocation models with unseen traits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a scenario preset or from the model.
    Simulate(Flags),
    /// Fit with the chosen model (`--model`).
    Fit(Flags),
    /// Fit with the partition fixed to the groups file (one group if absent).
    FitKnown(Flags),
    /// Fit the Pitman–Yor mixture over unknown groups.
    FitMixture(Flags),
    /// Fit the mixture that assumes every trait was observed.
    FitNaive(Flags),
    /// Recompute summaries of an existing run.
    Summarize(RunFlags),
    /// Recompute the WAIC report of an existing run.
    Waic(RunFlags),
    /// Sample new subjects from the posterior predictive of an existing run.
    Predict(RunFlags),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Known,
    Mixture,
    Naive,
}

impl Model {
    fn variant(self) -> ModelVariant {
        match self {
            Model::Known => ModelVariant::KnownGroups,
            Model::Mixture => ModelVariant::UnknownGroups,
            Model::Naive => ModelVariant::NaiveFixedN,
        }
    }
}

#[derive(Args, Clone, Default)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, value_parser = parse_family)]
    kernel: Option<KernelFamily>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    threads: Option<usize>,
    /// Scenario preset for `simulate` (scenario1, scenario2, scenario1-scaled, scenario2-scaled).
    #[arg(long)]
    preset: Option<String>,
    /// Initial partition: one-cluster, singletons or random:<clusters>.
    #[arg(long)]
    init: Option<String>,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Directory written by a fit command.
    #[arg(long)]
    run: PathBuf,
    /// Output directory (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_family(s: &str) -> Result<KernelFamily, String> {
    s.parse::<KernelFamily>().map_err(|e| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    fn kind_and_code(&self) -> (&'static str, u8) {
        match self {
            CliError::Usage(_) => ("usage", 1),
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Domain(_) | Error::Json(_) => ("config", 1),
                Error::InvalidData(_) | Error::Parse { .. } | Error::Io(_) | Error::Csv(_) => ("data", 2),
                Error::Numeric(_) => ("numeric", 3),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return report(&CliError::Usage(e.to_string().trim_end().to_owned()));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    let (kind, code) = e.kind_and_code();
    let body = json!({ "error": kind, "message": e.message(), "exit_code": code });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(f) => simulate(&f),
        Command::Fit(f) => {
            let model = f.model.ok_or_else(|| CliError::Usage("fit requires --model".into()))?;
            fit(&f, model)
        }
        Command::FitKnown(f) => fit_fixed_model(&f, Model::Known),
        Command::FitMixture(f) => fit_fixed_model(&f, Model::Mixture),
        Command::FitNaive(f) => fit_fixed_model(&f, Model::Naive),
        Command::Summarize(r) => {
            let run = LoadedRun::open(&r)?;
            write_summaries(&run, r.out.as_ref().unwrap_or(&r.run), r.seed)
        }
        Command::Waic(r) => {
            let run = LoadedRun::open(&r)?;
            write_waic(&run, r.out.as_ref().unwrap_or(&r.run))
        }
        Command::Predict(r) => {
            let run = LoadedRun::open(&r)?;
            predict(&run, r.out.as_ref().unwrap_or(&r.run), r.seed)
        }
    }
}

fn fit_fixed_model(f: &Flags, model: Model) -> CliResult<()> {
    if f.model.is_some_and(|m| m.variant() != model.variant()) {
        return Err(CliError::Usage("--model conflicts with the command".into()));
    }
    fit(f, model)
}

fn parse_init(s: &str) -> CliResult<Init> {
    match s {
        "one-cluster" => Ok(Init::OneCluster),
        "singletons" => Ok(Init::Singletons),
        _ => s
            .strip_prefix("random:")
            .and_then(|c| c.parse().ok())
            .filter(|&c: &usize| c > 0)
            .map(Init::Random)
            .ok_or_else(|| CliError::Usage(format!("unknown --init '{s}'"))),
    }
}

/// Config file (if any) with command-line overrides applied.
fn merged_config(f: &Flags) -> CliResult<RunConfig> {
    let mut cfg = match &f.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if f.data.is_some() {
        cfg.data.clone_from(&f.data);
    }
    if f.groups.is_some() {
        cfg.groups.clone_from(&f.groups);
    }
    if f.out.is_some() {
        cfg.out.clone_from(&f.out);
    }
    if let Some(k) = f.kernel {
        if cfg.psi.is_some_and(|p| p.family() != k) {
            cfg.psi = None;
            cfg.psi_prior = match cfg.psi_prior {
                io::PsiPriorSpec::Gamma(_) => io::PsiPriorSpec::Default,
                other => other,
            };
        }
        cfg.kernel = k;
    }
    let m: &mut McmcConfig = &mut cfg.mcmc;
    if let Some(s) = f.seed {
        m.seed = s;
    }
    if let Some(c) = f.chains {
        m.chains = c;
    }
    if let Some(i) = f.iterations {
        m.iterations = i;
    }
    if let Some(b) = f.burn_in {
        m.burn_in = b;
    }
    if let Some(t) = f.thin {
        m.thin = t;
    }
    if let Some(init) = &f.init {
        m.init = parse_init(init)?;
    }
    if f.threads.is_some() {
        cfg.threads = f.threads;
    }
    if let Some(p) = &f.preset {
        cfg.simulate = Some(SimulateSpec::Preset(p.clone()));
    }
    if let Some(m) = f.model {
        cfg.mcmc.variant = m.variant();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_data(cfg: &RunConfig, use_groups: bool) -> CliResult<GroupedCounts> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let data = io::load_counts_csv(path)?;
    match (&cfg.groups, use_groups) {
        (Some(g), true) => Ok(io::apply_groups(&data, &io::load_groups_csv(g)?)?),
        _ => Ok(data),
    }
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: Value, started: Instant) -> CliResult<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.mcmc.seed,
        "config": cfg,
        "details": extra,
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    io::write_json(&manifest, dir.join("manifest.json"))?;
    Ok(())
}

fn simulate(f: &Flags) -> CliResult<()> {
    let started = Instant::now();
    let cfg = merged_config(f)?;
    let dir = out_dir(&cfg)?;
    let spec = cfg
        .simulate
        .clone()
        .ok_or_else(|| CliError::Usage("simulate needs --preset or a \"simulate\" config entry".into()))?;
    let mut rng = chain_rng(cfg.mcmc.seed, 0);
    let (data, truth) = match &spec {
        SimulateSpec::Preset(name) => scenario(&ScenarioSpec::preset(name)?, &mut rng)?,
        SimulateSpec::Scenario(s) => scenario(s, &mut rng)?,
        SimulateSpec::Model { group_sizes, n_total, lambda } => {
            let kernel = cfg.kernel_start();
            let (data, truth) = match (n_total, lambda) {
                (Some(n), _) => simulate_fixed_n(group_sizes, *n, &kernel, &mut rng)?,
                (None, Some(l)) => simulate_from_model(group_sizes, *l, &kernel, &mut rng)?,
                (None, None) => return Err(CliError::Usage("model simulation needs n_total or lambda".into())),
            };
            let truth = json!({
                "n_total": truth.n_total,
                "n_observed": truth.observed.len(),
                "n_unseen": truth.n_unseen(),
                "kernel": kernel,
                "partition": data.group_of().iter().map(|q| q + 1).collect::<Vec<_>>(),
            });
            (data, truth)
        }
    };
    io::write_counts_csv(&data, io::create_in(&dir, "counts.csv")?)?;
    io::write_groups_csv(&data, io::create_in(&dir, "groups.csv")?)?;
    io::write_json(&truth, dir.join("truth.json"))?;
    let extra = json!({
        "n_subjects": data.n_subjects(),
        "n_traits": data.n_traits(),
        "n_groups": data.n_groups(),
        "outputs": ["counts.csv", "groups.csv", "truth.json"],
    });
    write_manifest(&dir, "simulate", &cfg, extra, started)
}

fn scenario(spec: &ScenarioSpec, rng: &mut traitalloc::rng::ChainRng) -> CliResult<(GroupedCounts, Value)> {
    let (data, truth) = spec.simulate(rng)?;
    let truth = json!({
        "scenario": spec.name,
        "n_total": truth.n_total,
        "n_observed": truth.observed.len(),
        "n_unseen": truth.n_unseen(),
        "partition": truth.partition.iter().map(|q| q + 1).collect::<Vec<_>>(),
    });
    Ok((data, truth))
}

fn fit(f: &Flags, model: Model) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg = merged_config(f)?;
    cfg.mcmc.variant = model.variant();
    let dir = out_dir(&cfg)?;
    let known = matches!(model, Model::Known);
    let data = load_data(&cfg, known)?;
    let data = if known { data } else { data.homogeneous() };
    let (kernel, hyper) = cfg.resolve(data.n_traits())?;
    data.check_kernel_support(&kernel)?;
    let outputs = run_chains(&data, &hyper, &kernel, &cfg.mcmc, cfg.threads)?;
    io::write_draws_csv(&outputs, data.subject_ids(), io::create_in(&dir, "draws.csv")?)?;
    let extra = json!({
        "model": model.variant(),
        "n_subjects": data.n_subjects(),
        "n_traits": data.n_traits(),
        "n_groups": data.n_groups(),
        "resolved": {
            "kernel": kernel,
            "lambda": hyper.lambda,
            "lambda_prior": hyper.lambda_prior,
            "psi_prior": hyper.psi_prior,
            "py": hyper.py,
        },
        "chains": outputs.iter().map(|o| json!({
            "chain": o.chain,
            "draws": o.draws.len(),
            "acceptance": o.acceptance,
            "proposal_scales": o.proposal_scales,
        })).collect::<Vec<_>>(),
    });
    write_manifest(&dir, "fit", &cfg, extra, started)?;
    let run = LoadedRun { cfg, data, kernel, draws: flatten(outputs) };
    write_summaries(&run, &dir, None)?;
    write_waic(&run, &dir)
}

fn flatten(outputs: Vec<ChainOutput>) -> Vec<ChainDraw> {
    outputs.into_iter().flat_map(|o| o.draws).collect()
}

/// A finished fit, reloaded from its output directory.
struct LoadedRun {
    cfg: RunConfig,
    data: GroupedCounts,
    kernel: KernelHyper,
    draws: Vec<ChainDraw>,
}

impl LoadedRun {
    fn open(r: &RunFlags) -> CliResult<Self> {
        let text = std::fs::read_to_string(r.run.join("manifest.json"))?;
        let manifest: Value = serde_json::from_str(&text)?;
        if manifest["command"] != "fit" {
            return Err(CliError::Usage(format!("{} is not a fit run", r.run.display())));
        }
        let cfg: RunConfig = serde_json::from_value(manifest["config"].clone())?;
        let known = cfg.mcmc.variant == ModelVariant::KnownGroups;
        let data = load_data(&cfg, known)?;
        let data = if known { data } else { data.homogeneous() };
        let kernel: KernelHyper = serde_json::from_value(manifest["details"]["resolved"]["kernel"].clone())?;
        let file = std::fs::File::open(r.run.join("draws.csv"))?;
        let draws: Vec<ChainDraw> = io::read_draws_csv(file, &kernel)?.into_iter().map(|(_, d)| d).collect();
        if let Some(d) = draws.first() {
            if d.labels.len() != data.n_subjects() {
                return Err(Error::InvalidData("draws do not match the data's subjects".into()).into());
            }
        }
        Ok(LoadedRun { cfg, data, kernel, draws })
    }

    fn require_draws(&self) -> CliResult<()> {
        if self.draws.is_empty() {
            return Err(Error::Config("the run has no retained draws".into()).into());
        }
        Ok(())
    }
}

fn quantile(sorted: &[u64], p: f64) -> u64 {
    let idx = ((sorted.len() as f64 * p).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn write_summaries(run: &LoadedRun, dir: &Path, seed: Option<u64>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    if run.draws.is_empty() {
        io::write_json(&json!({ "draws": 0 }), dir.join("summary.json"))?;
        return Ok(());
    }
    let ids = run.data.subject_ids();
    let h = histogram_summaries(&run.draws)?;
    io::write_pmf_csv("clusters", &h.cluster_count_pmf, io::create_in(dir, "cluster_count_pmf.csv")?)?;
    io::write_pmf_csv("n_prime", &h.unseen_count_pmf, io::create_in(dir, "unseen_count_pmf.csv")?)?;
    let partitions: Vec<Vec<usize>> = run.draws.iter().map(|d| d.labels.clone()).collect();
    let sim = SimilarityMatrix::from_partitions(&partitions)?;
    let sim_rows: Vec<Vec<f64>> = (0..sim.n()).map(|i| sim.row(i).to_vec()).collect();
    io::write_matrix_csv(ids, &sim_rows, io::create_in(dir, "similarity.csv")?)?;
    let mv = min_vi_partition(&partitions, &sim)?;
    io::write_partition_csv(ids, &mv.labels, io::create_in(dir, "minvi.csv")?)?;
    let mut outputs = vec!["cluster_count_pmf.csv", "unseen_count_pmf.csv", "similarity.csv", "minvi.csv"];
    if run.kernel.family() == KernelFamily::Bernoulli {
        let mut rng = chain_rng(seed.unwrap_or(run.cfg.mcmc.seed), SUMMARY_STREAM);
        let adj = posterior_adjacency(&run.data, &run.draws, run.cfg.adjacency_draws, &mut rng)?;
        io::write_matrix_csv(ids, &adj, io::create_in(dir, "adjacency.csv")?)?;
        outputs.push("adjacency.csv");
    }
    let mut np: Vec<u64> = run.draws.iter().map(|d| d.n_prime).collect();
    np.sort_unstable();
    let n_draws = run.draws.len() as f64;
    let mut summary = json!({
        "draws": run.draws.len(),
        "modal_clusters": pmf_mode(&h.cluster_count_pmf),
        "n_prime_mean": np.iter().sum::<u64>() as f64 / n_draws,
        "n_prime_interval_95": [quantile(&np, 0.025), quantile(&np, 0.975)],
        "lambda_mean": h.lambda_trace.iter().sum::<f64>() / n_draws,
        "minvi": {
            "clusters": mv.labels.iter().max().map_or(0, |m| m + 1),
            "draw_index": mv.draw_index,
            "expected_vi": mv.expected_vi,
            "similarity_criterion": mv.lower_bound,
        },
        "outputs": outputs,
    });
    if let Some(g) = &run.cfg.groups {
        if run.cfg.mcmc.variant != ModelVariant::KnownGroups {
            let grouped = io::apply_groups(&run.data, &io::load_groups_csv(g)?)?;
            summary["minvi"]["ari_vs_groups"] = json!(adjusted_rand_index(&mv.labels, grouped.group_of())?);
        }
    }
    io::write_json(&summary, dir.join("summary.json"))?;
    Ok(())
}

fn write_waic(run: &LoadedRun, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    if run.draws.len() < 2 {
        return Ok(());
    }
    let w = waic(&run.data, &run.draws, run.cfg.mcmc.variant)?;
    let report = json!({
        "model": run.cfg.mcmc.variant,
        "waic": w.waic,
        "lppd": w.lppd,
        "p_waic": w.p_waic,
        "draws": run.draws.len(),
        "pointwise_lppd": w.pointwise_lppd,
        "pointwise_var": w.pointwise_var,
    });
    io::write_json(&report, dir.join("waic.json"))?;
    Ok(())
}

fn predict(run: &LoadedRun, dir: &Path, seed: Option<u64>) -> CliResult<()> {
    run.require_draws()?;
    std::fs::create_dir_all(dir)?;
    let mut rng = chain_rng(seed.unwrap_or(run.cfg.mcmc.seed), SUMMARY_STREAM + 1);
    let m = run.cfg.predict_draws.clamp(1, run.draws.len());
    let mut w = csv_writer(dir, "predictive.csv")?;
    w.write_record(["draw", "cluster", "n_prime", "observed_traits_displayed", "new_traits_displayed"])
        .map_err(Error::from)?;
    for s in 0..m {
        let idx = s * run.draws.len() / m;
        let draw = &run.draws[idx];
        let d = draw.n_clusters();
        let grouped = run.data.with_groups(&draw.labels, d)?;
        let pred = sample_predictive(&grouped, &ModelHyper::fixed(draw.lambda), &draw.psi, &mut rng)?;
        let n_prime = pred.labels.len() - pred.n_observed;
        for q in 0..d {
            let observed = pred.rows[q][..pred.n_observed].iter().filter(|&&a| a > 0).count();
            w.write_record([
                idx.to_string(),
                (q + 1).to_string(),
                n_prime.to_string(),
                observed.to_string(),
                pred.new_traits_displayed(q).to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(dir: &Path, name: &str) -> CliResult<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    Ok(csv::Writer::from_writer(io::create_in(dir, name)?))
}
