//! Experiment runner behind the `synergy` command line.
//!
//! An experiment spec is a TOML file:
//!
//! ```toml
//! out_dir = "runs/bar-lift"        # relative paths resolve against the spec file
//! methods = ["r2", "extrinsic_only", "random"]
//! seeds = [0, 1, 2, 3, 4]
//! lambdas = [10.0]
//! joint_pretrain_samples = 0
//! # models_dir = "models"          # use `synergy pretrain` outputs instead of pretraining in-process
//!
//! [env]
//! name = "bar-lift"
//! n_agents = 2
//!
//! [train]                          # any TrainConfig field
//! total_env_steps = 50000
//! ```
//!
//! Every (method, λ, seed) gets its own run directory holding `config.toml`
//! (the resolved configuration), `metrics.csv`, checkpoints and `record.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{pretrain_single, FitConfig, ForwardModel, Pretrained};
use crate::envs::{Env, EnvConfig, EnvKind, EnvSchema};
use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::policy::{HeadLayout, Policy};
use crate::trainer::{single_model_seed, Method, MetricsRecord, TrainConfig, Trainer};

/// First line of every metrics file.
pub const METRICS_SCHEMA: &str = "# synergy-metrics v1";
pub const METRICS_COLUMNS: [&str; 9] = [
    "update",
    "env_steps",
    "success_rate",
    "mean_intrinsic",
    "mean_extrinsic",
    "policy_loss",
    "value_loss",
    "joint_model_loss",
    "episodes",
];

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_lambdas() -> Vec<f64> {
    vec![10.0]
}

fn default_checkpoint_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub env: EnvConfig,
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Random transitions for fitting `f^joint` before training (surprise_joint only).
    #[serde(default)]
    pub joint_pretrain_samples: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub models_dir: Option<PathBuf>,
    /// Base training configuration; method, λ and seed are set per run.
    #[serde(default)]
    pub train: TrainConfig,
    /// Updates between checkpoints (0 keeps only the final one).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec, resolving relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut spec = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.out_dir = base.join(&spec.out_dir);
        spec.models_dir = spec.models_dir.map(|d| base.join(d));
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("methods, seeds and lambdas must be nonempty".into()));
        }
        Env::new(self.env.clone()).map_err(|e| Error::Config(e.to_string()))?;
        for m in &self.methods {
            for &l in &self.lambdas {
                self.run_config(*m, l, 0).validate()?;
            }
        }
        Ok(())
    }

    pub fn run_config(&self, method: Method, lambda: f64, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.method = method;
        cfg.lambda = lambda;
        cfg.seed = seed;
        if method == Method::SurpriseJoint {
            cfg.joint_fit.pretrain_samples = self.joint_pretrain_samples;
        }
        cfg
    }

    pub fn run_dir(&self, method: Method, lambda: f64, seed: u64) -> PathBuf {
        self.out_dir
            .join(method.name())
            .join(format!("lambda-{lambda}"))
            .join(format!("seed-{seed}"))
    }

    /// Every (method, λ, seed) in spec order.
    pub fn runs(&self) -> Vec<(Method, f64, u64)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            for &l in &self.lambdas {
                for &s in &self.seeds {
                    out.push((m, l, s));
                }
            }
        }
        out
    }
}

/// Where `synergy pretrain` puts agent `agent`'s model for run seed `seed`.
pub fn single_model_path(models_dir: &Path, env: &EnvConfig, agent: usize, seed: u64) -> PathBuf {
    models_dir.join(format!("{}-n{}-agent{agent}-seed{seed}.json", env.name, env.n_agents))
}

/// Summary written next to a pretrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub env: String,
    pub agent: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub n_train: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub target_variance: f64,
    pub dataset: PathBuf,
}

/// Pretrains agent `agent`'s single model exactly as a run with seed `seed`
/// would, and writes the model, its dataset (`*.dataset.csv`) and a summary
/// (`*.summary.json`).
pub fn pretrain_to(
    env: &EnvConfig,
    agent: usize,
    n: usize,
    seed: u64,
    fit: &FitConfig,
    out: &Path,
) -> Result<(Pretrained, PretrainSummary)> {
    if agent >= env.n_agents {
        return Err(Error::Config(format!(
            "agent {agent} out of range for {} agents",
            env.n_agents
        )));
    }
    let p = pretrain_single(env, agent, n, single_model_seed(seed, agent), fit)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    p.model.save(out)?;
    let dataset = out.with_extension("dataset.csv");
    p.dataset.write_csv(&dataset)?;
    let summary = PretrainSummary {
        env: env.name.clone(),
        agent,
        seed,
        n_samples: n,
        n_train: p.dataset.n_train,
        train_mse: p.train_mse,
        validation_mse: p.validation_mse,
        target_variance: p.target_variance,
        dataset,
    };
    write_json(&out.with_extension("summary.json"), &summary)?;
    Ok((p, summary))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// What a run directory contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub n_agents: usize,
    pub method: Method,
    pub lambda: f64,
    pub seed: u64,
    /// Paths below are relative to the run directory.
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub updates: usize,
    pub env_steps: usize,
    /// Environment steps spent collecting single-agent and joint pretraining data.
    pub pretrain_env_steps: usize,
    pub wall_clock_secs: f64,
}

/// Resolved configuration of one run; enough to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub models: Vec<PathBuf>,
}

/// Fails if a spec names a models directory that lacks a model some run needs.
pub fn check_models(spec: &ExperimentSpec) -> Result<()> {
    let Some(dir) = &spec.models_dir else {
        return Ok(());
    };
    for (m, _, s) in spec.runs() {
        if !m.needs_singles() {
            continue;
        }
        for agent in 0..spec.env.n_agents {
            let p = single_model_path(dir, &spec.env, agent, s);
            if !p.exists() {
                return Err(Error::Config(format!("missing pretrained model {}", p.display())));
            }
        }
    }
    Ok(())
}

fn load_singles(paths: &[PathBuf], schema: &EnvSchema) -> Result<Vec<ForwardModel>> {
    paths
        .iter()
        .map(|p| {
            let m = ForwardModel::load(p)?;
            if m.schema().skills != schema.skills || m.schema().obs_dim() != schema.obs_dim() {
                return Err(Error::Config(format!(
                    "{} was trained for a different environment",
                    p.display()
                )));
            }
            Ok(m)
        })
        .collect()
}

/// Runs one configuration into `dir`.
pub fn run_in_dir(cfg: &RunConfig, dir: &Path, checkpoint_every: usize) -> Result<RunRecord> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let snapshot = toml::to_string(cfg).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("config.toml"), snapshot)?;
    let method = cfg.train.method;
    let env = Env::new(cfg.env.clone())?;
    let singles = if !method.needs_singles() {
        Vec::new()
    } else if cfg.models.is_empty() {
        crate::trainer::pretrain_singles(&cfg.train, &cfg.env)?
    } else {
        load_singles(&cfg.models, env.schema())?
    };
    let mut trainer = Trainer::with_singles(cfg.train.clone(), cfg.env.clone(), singles)?;

    let metrics_path = dir.join("metrics.csv");
    let mut file = fs::File::create(&metrics_path)?;
    writeln!(file, "{METRICS_SCHEMA} success_window={}", cfg.train.success_window)?;
    let mut csv = csv::Writer::from_writer(file);
    csv.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    csv.flush()?;
    let mut checkpoints = Vec::new();
    let save = |t: &Trainer, list: &mut Vec<PathBuf>| -> Result<()> {
        if method == Method::Random {
            return Ok(());
        }
        t.policy().save(dir.join("policy.json"))?;
        push_unique(list, "policy.json");
        if let Some(j) = t.joint_model() {
            j.save(dir.join("joint_model.json"))?;
            push_unique(list, "joint_model.json");
        }
        Ok(())
    };
    let history = trainer.run(|t, r| {
        csv.write_record(metrics_row(r)).map_err(csv_err)?;
        csv.flush()?;
        if checkpoint_every > 0 && r.update % checkpoint_every == 0 {
            save(t, &mut checkpoints)?;
        }
        Ok(())
    })?;
    save(&trainer, &mut checkpoints)?;
    let pretrain_env_steps = if method.needs_singles() {
        cfg.train.pretrain_samples * cfg.env.n_agents
    } else {
        0
    } + cfg.train.joint_fit.pretrain_samples * method.needs_joint() as usize;
    let record = RunRecord {
        env: cfg.env.name.clone(),
        n_agents: cfg.env.n_agents,
        method,
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
        config: "config.toml".into(),
        metrics: "metrics.csv".into(),
        checkpoints,
        updates: history.records.len(),
        env_steps: trainer.env_steps(),
        pretrain_env_steps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("record.json"), &record)?;
    Ok(record)
}

fn push_unique(list: &mut Vec<PathBuf>, name: &str) {
    if !list.iter().any(|p| p == Path::new(name)) {
        list.push(name.into());
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn metrics_row(r: &MetricsRecord) -> Vec<String> {
    vec![
        r.update.to_string(),
        r.env_steps.to_string(),
        r.success_rate.to_string(),
        r.mean_intrinsic.to_string(),
        r.mean_extrinsic.to_string(),
        r.policy_loss.to_string(),
        r.value_loss.to_string(),
        r.joint_model_loss.to_string(),
        r.episodes.to_string(),
    ]
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or_default();
    if !first.starts_with(METRICS_SCHEMA) {
        return Err(Error::Format(format!(
            "{} is not a {METRICS_SCHEMA} file",
            path.as_ref().display()
        )));
    }
    let mut rdr = csv::Reader::from_reader(lines.next().unwrap_or_default().as_bytes());
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Format(format!("unexpected metrics columns {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| row[i].parse::<f64>().map_err(|e| Error::Format(e.to_string()));
        let u = |i: usize| row[i].parse::<usize>().map_err(|e| Error::Format(e.to_string()));
        out.push(MetricsRecord {
            update: u(0)?,
            env_steps: u(1)?,
            success_rate: f(2)?,
            mean_intrinsic: f(3)?,
            mean_extrinsic: f(4)?,
            policy_loss: f(5)?,
            value_loss: f(6)?,
            joint_model_loss: f(7)?,
            episodes: u(8)?,
        });
    }
    Ok(out)
}

/// Runs every (method, λ, seed) of a spec. Missing pretrained models are
/// reported before anything is trained.
pub fn train_all(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    check_models(spec)?;
    spec.runs()
        .into_iter()
        .map(|(m, l, s)| {
            let models = match &spec.models_dir {
                Some(dir) if m.needs_singles() => (0..spec.env.n_agents)
                    .map(|a| single_model_path(dir, &spec.env, a, s))
                    .collect(),
                _ => Vec::new(),
            };
            let cfg = RunConfig {
                env: spec.env.clone(),
                train: spec.run_config(m, l, s),
                models,
            };
            run_in_dir(&cfg, &spec.run_dir(m, l, s), spec.checkpoint_every)
        })
        .collect()
}

/// Re-runs a run directory from its `config.toml` into `out`.
pub fn rerun(run_dir: &Path, out: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(run_dir.join("config.toml"))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    run_in_dir(&cfg, out, 0)
}

/// Population mean and standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub method: Method,
    pub lambda: f64,
    pub mean_final_success: f64,
    pub std_final_success: f64,
    pub seeds: usize,
}

/// Final success per (method, λ) over seeds, read back from the runs' CSVs.
pub fn lambda_table(spec: &ExperimentSpec) -> Result<Vec<LambdaRow>> {
    let mut rows = Vec::new();
    for &m in &spec.methods {
        for &l in &spec.lambdas {
            let mut finals = Vec::new();
            for &s in &spec.seeds {
                let recs = read_metrics(spec.run_dir(m, l, s).join("metrics.csv"))?;
                finals.push(recs.last().map_or(0.0, |r| r.success_rate));
            }
            let (mean, std) = mean_std(&finals);
            rows.push(LambdaRow {
                method: m,
                lambda: l,
                mean_final_success: mean,
                std_final_success: std,
                seeds: finals.len(),
            });
        }
    }
    Ok(rows)
}

/// Trains every run of the spec and writes `lambda_sweep.csv` into its output directory.
pub fn sweep_lambda(spec: &ExperimentSpec) -> Result<Vec<LambdaRow>> {
    train_all(spec)?;
    let rows = lambda_table(spec)?;
    let mut w = csv::Writer::from_path(spec.out_dir.join("lambda_sweep.csv")).map_err(csv_err)?;
    w.write_record(["method", "lambda", "mean_final_success", "std_final_success", "seeds"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.method.name().to_string(),
            r.lambda.to_string(),
            r.mean_final_success.to_string(),
            r.std_final_success.to_string(),
            r.seeds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Finds every `record.json` below `root`, returned with its directory.
pub fn find_records(root: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "record.json") {
                out.push((dir.clone(), read_json(&p)?));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Mean learning curve of one method with its ±1 std band.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub env_steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seeds: usize,
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, held constant outside.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    for k in 1..xs.len() {
        if x <= xs[k] {
            let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
            return ys[k - 1] + t * (ys[k] - ys[k - 1]);
        }
    }
    ys[ys.len() - 1]
}

/// Aggregates seeds of one method. When the seeds' x-grids differ, every
/// curve is resampled onto the grid with the fewest points.
pub fn aggregate(label: &str, runs: &[Vec<MetricsRecord>]) -> Result<Curve> {
    let runs: Vec<&Vec<MetricsRecord>> = runs.iter().filter(|r| !r.is_empty()).collect();
    if runs.is_empty() {
        return Err(Error::Format(format!("no metrics for {label}")));
    }
    let grids: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.iter().map(|m| m.env_steps as f64).collect())
        .collect();
    let grid = grids.iter().min_by_key(|g| g.len()).expect("nonempty").clone();
    let mut mean = Vec::with_capacity(grid.len());
    let mut std = Vec::with_capacity(grid.len());
    for &x in &grid {
        let ys: Vec<f64> = runs
            .iter()
            .zip(&grids)
            .map(|(r, g)| interpolate(g, &r.iter().map(|m| m.success_rate).collect::<Vec<_>>(), x))
            .collect();
        let (m, s) = mean_std(&ys);
        mean.push(m);
        std.push(s);
    }
    Ok(Curve {
        label: label.to_string(),
        env_steps: grid,
        mean,
        std,
        seeds: runs.len(),
    })
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Success-rate curves with shaded ±1 std bands as a standalone SVG.
pub fn render_svg(title: &str, curves: &[Curve]) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 60.0, 170.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_max = curves
        .iter()
        .flat_map(|c| c.env_steps.iter().copied())
        .fold(1.0, f64::max);
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (1.0 - y.clamp(0.0, 1.0));
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        left + pw / 2.0
    );
    for k in 0..=5 {
        let y = k as f64 / 5.0;
        s += &format!(
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{y0:.2}\" y2=\"{y0:.2}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{y:.1}</text>\n",
            left + pw,
            left - 6.0,
            sy(y) + 4.0,
            y0 = sy(y)
        );
        let x = x_max * k as f64 / 5.0;
        s += &format!(
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            sx(x),
            top + ph + 18.0,
            x.round()
        );
    }
    s += &format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">environment steps</text>\n\
         <text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">success rate</text>\n",
        left + pw / 2.0,
        h - 10.0,
        top + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = c
            .env_steps
            .iter()
            .zip(c.mean.iter().zip(&c.std))
            .map(|(x, (m, d))| format!("{:.2},{:.2}", sx(*x), sy(m + d)))
            .collect();
        let lower: Vec<String> = c
            .env_steps
            .iter()
            .zip(c.mean.iter().zip(&c.std))
            .rev()
            .map(|(x, (m, d))| format!("{:.2},{:.2}", sx(*x), sy(m - d)))
            .collect();
        s += &format!(
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = c
            .env_steps
            .iter()
            .zip(&c.mean)
            .map(|(x, m)| format!("{:.2},{:.2}", sx(*x), sy(*m)))
            .collect();
        s += &format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            line.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        s += &format!(
            "<line x1=\"{}\" x2=\"{}\" y1=\"{ly}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/><text x=\"{}\" y=\"{}\">{} (n={})</text>\n",
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            c.label,
            c.seeds
        );
    }
    s + "</svg>\n"
}

/// Writes `<env>.svg` and `<env>.csv` into `out` for every environment with
/// runs below `root`. Curves are labelled by method, plus λ when an
/// environment has runs at several λ.
pub fn plot(root: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let records = find_records(root)?;
    if records.is_empty() {
        return Err(Error::Config(format!("no runs found below {}", root.display())));
    }
    fs::create_dir_all(out)?;
    let mut by_env: BTreeMap<String, Vec<(PathBuf, RunRecord)>> = BTreeMap::new();
    for (dir, r) in records {
        by_env
            .entry(format!("{}-n{}", r.env, r.n_agents))
            .or_default()
            .push((dir, r));
    }
    let mut written = Vec::new();
    for (env, runs) in by_env {
        let several_lambdas = runs.iter().any(|(_, r)| r.lambda != runs[0].1.lambda);
        let mut groups: BTreeMap<(usize, String), Vec<Vec<MetricsRecord>>> = BTreeMap::new();
        for (dir, r) in &runs {
            let label = if several_lambdas {
                format!("{} λ={}", r.method.name(), r.lambda)
            } else {
                r.method.name().to_string()
            };
            let order = Method::ALL.iter().position(|m| *m == r.method).unwrap_or(0);
            groups
                .entry((order, label))
                .or_default()
                .push(read_metrics(dir.join(&r.metrics))?);
        }
        let curves: Vec<Curve> = groups
            .iter()
            .map(|((_, label), rs)| aggregate(label, rs))
            .collect::<Result<_>>()?;
        let csv_path = out.join(format!("{env}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
        w.write_record(["method", "env_steps", "mean", "std", "lower", "upper", "seeds"])
            .map_err(csv_err)?;
        for c in &curves {
            for k in 0..c.env_steps.len() {
                w.write_record([
                    c.label.clone(),
                    c.env_steps[k].to_string(),
                    c.mean[k].to_string(),
                    c.std[k].to_string(),
                    (c.mean[k] - c.std[k]).to_string(),
                    (c.mean[k] + c.std[k]).to_string(),
                    c.seeds.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        let svg_path = out.join(format!("{env}.svg"));
        fs::write(&svg_path, render_svg(&env, &curves))?;
        written.push(svg_path);
        written.push(csv_path);
    }
    Ok(written)
}

/// Success rate of `policy` over `episodes` episodes. Deterministic
/// evaluation uses the most likely skill and `ε = 0`.
pub fn evaluate(policy: &Policy, env_cfg: &EnvConfig, episodes: usize, seed: u64, stochastic: bool) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let env = Env::new(env_cfg.clone())?;
    if HeadLayout::of(env.schema()) != *policy.layout() || env.schema().skills != policy.schema().skills {
        return Err(Error::Config(format!(
            "checkpoint was trained for {}, not {}",
            policy.schema().name,
            env.schema().name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0usize;
    for ep in 0..episodes {
        let mut s = env.reset(seed.wrapping_mul(1 << 32).wrapping_add(ep as u64));
        loop {
            let out = policy.output(&s)?;
            let a = if stochastic {
                policy.sample(&out, &mut rng).0
            } else {
                policy.act_deterministic(&out)
            };
            let step = env.step(&s, &a)?;
            if step.done {
                successes += step.extrinsic as usize;
                break;
            }
            s = step.next;
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// A hand-wired bar-lift policy: each agent grasps its own half of the bar
/// while not grasping, then both lift together by 0.44.
pub fn scripted_bar_lift(env_cfg: &EnvConfig) -> Result<Policy> {
    let env = Env::new(env_cfg.clone())?;
    if env_cfg.kind()? != EnvKind::BarLift {
        return Err(Error::Config("the scripted policy exists only for bar-lift".into()));
    }
    let schema = env.schema();
    let l = HeadLayout::of(schema);
    let sizes = [l.obs_dim, 64, 64, l.output_dim()];
    let mut w: Vec<Vec<f64>> = sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
    let mut b: Vec<Vec<f64>> = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
    let state_dim = schema.agent_state_dim;
    for agent in 0..2 {
        let grasped = agent * state_dim;
        // Hidden units 2i and 2i+1: "not grasped" and "grasped".
        w[0][(2 * agent) * l.obs_dim + grasped] = -1.0;
        b[0][2 * agent] = 1.0;
        w[0][(2 * agent + 1) * l.obs_dim + grasped] = 1.0;
        for u in [2 * agent, 2 * agent + 1] {
            w[1][u * 64 + u] = 1.0;
        }
        w[2][l.logit(agent, 0) * 64 + 2 * agent] = 20.0;
        w[2][l.logit(agent, 1) * 64 + 2 * agent + 1] = 20.0;
        // grasp(offset ∓0.5, z = π, approach 0.088), lift(0.44)
        let offset_logit = if agent == 0 { (1.0f64 / 3.0).ln() } else { 3.0f64.ln() };
        for (j, mu) in [offset_logit, 0.0, 2.0, 2.0].into_iter().enumerate() {
            b[2][l.mean(agent, j)] = mu;
            b[2][l.log_std(agent, j)] = -5.0;
        }
    }
    Policy::from_network(schema, NetworkParams::from_parts(&sizes, w, b)?)
}
