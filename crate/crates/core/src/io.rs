//! File formats and run configuration.
//!
//! Count matrices are CSV with a header of trait labels after a leading
//! subject-id column. Group files are two-column CSV (`subject,group`).
//! Chain draws are one CSV row per retained state.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GroupedCounts;
use crate::error::{Error, Result};
use crate::gibbs::{ChainDraw, ChainOutput, McmcConfig};
use crate::kernel::{KernelFamily, KernelHyper};
use crate::partition::PitmanYor;
use crate::posterior::{GammaPrior, ModelHyper};
use crate::simulate::ScenarioSpec;

fn csv_line(err: &csv::Error) -> usize {
    err.position().map_or(0, |p| p.line() as usize)
}

fn parse_err(err: csv::Error) -> Error {
    let line = csv_line(&err);
    Error::Parse { line, msg: err.to_string() }
}

/// Reads a count matrix into a single-group dataset.
pub fn read_counts_csv<R: Read>(reader: R) -> Result<GroupedCounts> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(parse_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse { line: 1, msg: "header needs a subject column and at least one trait".into() });
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        ids.push(rec[0].to_owned());
        let row = rec
            .iter()
            .skip(1)
            .zip(&labels)
            .map(|(field, label)| {
                field.parse::<u32>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("entry '{field}' for trait {label} is not a non-negative integer"),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        rows.push(row);
    }
    let n = ids.len();
    GroupedCounts::new(ids, labels, rows, vec![0; n], vec!["all".into()])
}

pub fn load_counts_csv(path: impl AsRef<Path>) -> Result<GroupedCounts> {
    read_counts_csv(File::open(path)?)
}

/// `(subject id, group label)` pairs in file order.
pub fn read_groups_csv<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::Parse { line, msg: format!("expected 2 fields, found {}", rec.len()) });
        }
        out.push((rec[0].to_owned(), rec[1].to_owned()));
    }
    Ok(out)
}

pub fn load_groups_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    read_groups_csv(File::open(path)?)
}

/// Assigns groups to `data`'s subjects. Group order is first appearance in
/// `groups`; every subject must be listed exactly once.
pub fn apply_groups(data: &GroupedCounts, groups: &[(String, String)]) -> Result<GroupedCounts> {
    let mut by_subject = HashMap::new();
    let mut group_labels: Vec<String> = Vec::new();
    for (id, g) in groups {
        let q = match group_labels.iter().position(|x| x == g) {
            Some(q) => q,
            None => {
                group_labels.push(g.clone());
                group_labels.len() - 1
            }
        };
        if by_subject.insert(id.as_str(), q).is_some() {
            return Err(Error::InvalidData(format!("subject '{id}' listed twice in groups file")));
        }
    }
    let mut group_of = Vec::with_capacity(data.n_subjects());
    for id in data.subject_ids() {
        match by_subject.remove(id.as_str()) {
            Some(q) => group_of.push(q),
            None => return Err(Error::InvalidData(format!("subject '{id}' missing from groups file"))),
        }
    }
    if let Some(extra) = by_subject.keys().next() {
        return Err(Error::InvalidData(format!("groups file lists unknown subject '{extra}'")));
    }
    GroupedCounts::new(
        data.subject_ids().to_vec(),
        data.trait_labels().to_vec(),
        data.rows().map(<[u32]>::to_vec).collect(),
        group_of,
        group_labels,
    )
}

pub fn write_counts_csv<W: Write>(data: &GroupedCounts, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("subject").chain(data.trait_labels().iter().map(String::as_str)))?;
    for (id, row) in data.subject_ids().iter().zip(data.rows()) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(u32::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_groups_csv<W: Write>(data: &GroupedCounts, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject", "group"])?;
    for (id, &q) in data.subject_ids().iter().zip(data.group_of()) {
        w.write_record([id.as_str(), data.group_labels()[q].as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// How `λ` is treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaPriorSpec {
    /// Hold `λ` at the configured value.
    Fixed,
    /// Gamma prior with mean `1.5k` and variance ten times the mean.
    #[default]
    Elicit,
    Gamma(GammaPrior),
}

/// How the free kernel components are treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiPriorSpec {
    Fixed,
    /// Weakly informative gamma priors per component, see [`default_psi_priors`].
    #[default]
    Default,
    Gamma(Vec<GammaPrior>),
}

/// What `simulate` generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulateSpec {
    /// A named scenario preset.
    Preset(String),
    Scenario(ScenarioSpec),
    /// Draws from the model with the configured kernel: exactly `n_total`
    /// traits when given, otherwise `N ~ Poisson(lambda)`.
    Model { group_sizes: Vec<usize>, n_total: Option<usize>, lambda: Option<f64> },
}

/// Everything a command needs besides its name. Command-line flags are
/// merged in before the config is echoed to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub kernel: KernelFamily,
    /// Fixed kernel hyperparameters, or the sampler's starting point.
    pub psi: Option<KernelHyper>,
    pub psi_prior: PsiPriorSpec,
    /// Fixed `λ`, or the sampler's starting point (defaults to the prior mean).
    pub lambda: Option<f64>,
    pub lambda_prior: LambdaPriorSpec,
    pub py: PitmanYor,
    pub mcmc: McmcConfig,
    /// Worker threads for multi-chain runs; `None` uses all cores.
    pub threads: Option<usize>,
    pub simulate: Option<SimulateSpec>,
    /// Monte Carlo replicates for the posterior adjacency matrix.
    pub adjacency_draws: usize,
    /// Posterior draws used by `predict`.
    pub predict_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            groups: None,
            out: None,
            kernel: KernelFamily::Bernoulli,
            psi: None,
            psi_prior: PsiPriorSpec::Default,
            lambda: None,
            lambda_prior: LambdaPriorSpec::Elicit,
            py: PitmanYor::default(),
            mcmc: McmcConfig::default(),
            threads: None,
            simulate: None,
            adjacency_draws: 200,
            predict_draws: 1000,
        }
    }
}

/// Starting kernel hyperparameters per family when none are configured.
pub fn default_psi(family: KernelFamily) -> KernelHyper {
    match family {
        KernelFamily::Bernoulli => KernelHyper::BetaBernoulli { a: 0.2, b: 10.0 },
        KernelFamily::Poisson => KernelHyper::GammaPoisson { shape: 1.0, rate: 1.0 },
        KernelFamily::Zisnb => KernelHyper::Zisnb { c: 1.0, a_w: 1.0, b_w: 1.0, a_p: 2.0, b_p: 2.0 },
    }
}

/// Gamma priors centred on [`default_psi`] with variance ten times the mean
/// (the same dispersion rule as the `λ` elicitation).
pub fn default_psi_priors(family: KernelFamily) -> Vec<GammaPrior> {
    default_psi(family)
        .free_params()
        .into_iter()
        .map(|m| GammaPrior::from_mean_var(m, 10.0 * m).expect("positive defaults"))
        .collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        self.py.validate()?;
        if let Some(psi) = &self.psi {
            if psi.family() != self.kernel {
                return Err(Error::Config(format!(
                    "psi is for the {} kernel but kernel is {}",
                    psi.family(),
                    self.kernel
                )));
            }
            psi.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let PsiPriorSpec::Gamma(ps) = &self.psi_prior {
            let names = self.kernel_start().free_param_names();
            if ps.len() != names.len() {
                return Err(Error::Config(format!(
                    "{} kernel needs {} psi priors ({}), got {}",
                    self.kernel,
                    names.len(),
                    names.join(", "),
                    ps.len()
                )));
            }
            for p in ps {
                p.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if let LambdaPriorSpec::Gamma(p) = &self.lambda_prior {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be positive, got {l}")));
            }
        }
        if self.lambda_prior == LambdaPriorSpec::Fixed && self.lambda.is_none() {
            return Err(Error::Config("lambda_prior \"fixed\" requires a lambda value".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kernel_start(&self) -> KernelHyper {
        self.psi.unwrap_or_else(|| default_psi(self.kernel))
    }

    /// Kernel and model hyperparameters for a dataset with `k` observed traits.
    pub fn resolve(&self, k: usize) -> Result<(KernelHyper, ModelHyper)> {
        self.validate()?;
        let kernel = self.kernel_start();
        let lambda_prior = match self.lambda_prior {
            LambdaPriorSpec::Fixed => None,
            LambdaPriorSpec::Elicit => Some(GammaPrior::elicit_lambda(k.max(1))?),
            LambdaPriorSpec::Gamma(p) => Some(p),
        };
        let lambda = match (self.lambda, lambda_prior) {
            (Some(l), _) => l,
            (None, Some(p)) => p.mean(),
            (None, None) => unreachable!("validated"),
        };
        let psi_prior = match &self.psi_prior {
            PsiPriorSpec::Fixed => None,
            PsiPriorSpec::Default => Some(default_psi_priors(self.kernel)),
            PsiPriorSpec::Gamma(ps) => Some(ps.clone()),
        };
        let hyper = ModelHyper { lambda, lambda_prior, psi_prior, py: self.py };
        hyper.validate(&kernel)?;
        Ok((kernel, hyper))
    }
}

fn fmt_f64(x: f64) -> String {
    // Shortest representation that round-trips; stable across platforms.
    format!("{x:?}")
}

/// Header of the draws table for a kernel and subject list.
pub fn draws_header(kernel: &KernelHyper, subject_ids: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["chain", "iteration", "lambda"].iter().map(|s| s.to_string()).collect();
    h.extend(kernel.free_param_names().iter().map(|s| s.to_string()));
    h.extend(["n_prime", "log_petpf", "n_clusters"].iter().map(|s| s.to_string()));
    h.extend(subject_ids.iter().map(|id| format!("z_{id}")));
    h
}

/// Writes all chains' draws, chain by chain.
pub fn write_draws_csv<W: Write>(outputs: &[ChainOutput], subject_ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = outputs.iter().flat_map(|o| o.draws.first()).next() else {
        w.write_record(["chain", "iteration", "lambda", "n_prime", "log_petpf", "n_clusters"])?;
        w.flush()?;
        return Ok(());
    };
    w.write_record(draws_header(&first.psi, subject_ids))?;
    for out in outputs {
        for d in &out.draws {
            let mut rec = vec![out.chain.to_string(), d.iteration.to_string(), fmt_f64(d.lambda)];
            rec.extend(d.psi.free_params().into_iter().map(fmt_f64));
            rec.push(d.n_prime.to_string());
            rec.push(fmt_f64(d.log_petpf));
            rec.push(d.n_clusters().to_string());
            rec.extend(d.labels.iter().map(|z| (z + 1).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads draws written by [`write_draws_csv`]. `kernel` supplies the family
/// and any fixed components (such as the ZI-SNB `c`). Returns `(chain, draw)`
/// pairs; acceptance flags are not stored and come back empty.
pub fn read_draws_csv<R: Read>(reader: R, kernel: &KernelHyper) -> Result<Vec<(usize, ChainDraw)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(parse_err)?.clone();
    let n_psi = kernel.free_param_names().len();
    let fixed = 3 + n_psi + 3;
    if header.len() <= 6 {
        return Ok(Vec::new());
    }
    let expected_psi: Vec<&str> = header.iter().skip(3).take(n_psi).collect();
    if expected_psi != kernel.free_param_names() {
        return Err(Error::Parse {
            line: 1,
            msg: format!("draws columns {expected_psi:?} do not match the {} kernel", kernel.family()),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse { line, msg: format!("bad {what}") };
        let f = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let chain = rec[0].parse::<usize>().map_err(|_| bad("chain"))?;
        let iteration = rec[1].parse::<usize>().map_err(|_| bad("iteration"))?;
        let lambda = f(2, "lambda")?;
        let psi_vals = (0..n_psi).map(|j| f(3 + j, "psi")).collect::<Result<Vec<_>>>()?;
        let psi = kernel.with_free_params(&psi_vals)?;
        let n_prime = rec[3 + n_psi].parse::<u64>().map_err(|_| bad("n_prime"))?;
        let log_petpf = f(4 + n_psi, "log_petpf")?;
        let labels = rec
            .iter()
            .skip(fixed)
            .map(|z| z.parse::<usize>().ok().filter(|&z| z >= 1).map(|z| z - 1).ok_or_else(|| bad("label")))
            .collect::<Result<Vec<_>>>()?;
        out.push((chain, ChainDraw { iteration, labels, lambda, psi, n_prime, log_petpf, accepted: Vec::new() }));
    }
    Ok(out)
}

/// `(value, probability)` pairs as a two-column CSV.
pub fn write_pmf_csv<W: Write, T: ToString>(name: &str, pmf: &[(T, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([name, "probability"])?;
    for (v, p) in pmf {
        w.write_record([v.to_string(), fmt_f64(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// Square matrix with subject ids as row and column labels.
pub fn write_matrix_csv<W: Write>(ids: &[String], rows: &[Vec<f64>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("subject").chain(ids.iter().map(String::as_str)))?;
    for (id, row) in ids.iter().zip(rows) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|&x| fmt_f64(x))))?;
    }
    w.flush()?;
    Ok(())
}

/// One `subject,cluster` row per subject, clusters numbered from 1.
pub fn write_partition_csv<W: Write>(ids: &[String], labels: &[usize], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject", "cluster"])?;
    for (id, z) in ids.iter().zip(labels) {
        w.write_record([id.clone(), (z + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Opens `dir/name` for buffered writing.
pub fn create_in(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}
