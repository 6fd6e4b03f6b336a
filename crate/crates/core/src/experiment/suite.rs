use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::manifest::{read_json, write_json};
use super::{
    aggregate_runs, config_diff, config_hash, export_heatmap_data, io_error, ExperimentConfig, ExperimentError, Result,
    RunManifest, SeedRecord, SeedStatus, CODE_VERSION, DEFAULT_SEEDS,
};
use crate::env::{EnvSpec, MatrixGameConfig};
use crate::oracle::{run_oracle_checks, OracleReport};
use crate::train::{RunSummary, Runner, TrainConfig};
use crate::weighting::{SchemeConfig, SchemeRegistry, Term};

pub const PP_SWEEP_PUNISHMENTS: [f64; 4] = [0.0, -0.5, -1.5, -2.0];
pub const SENSITIVITY_W_MIN: [f64; 3] = [0.1, 0.5, 0.8];
pub const SENSITIVITY_PUNISHMENT: f64 = -1.5;
pub const MATRIX_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const MATRIX_SCHEMES: [&str; 3] = ["uniform", "ow(0.1)", "remix"];

/// Training settings of the matrix-game suite: 5000 one-step episodes, a
/// greedy evaluation every 500.
pub fn matrix_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        buffer_episodes: 5000,
        total_steps: 5000,
        eval_interval: 500,
        eval_episodes: 1,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    PpSweep,
    Sensitivity,
    Ablation,
    MatrixGame,
    OracleChecks,
    Heatmap,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::PpSweep,
        Suite::Sensitivity,
        Suite::Ablation,
        Suite::MatrixGame,
        Suite::OracleChecks,
        Suite::Heatmap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::PpSweep => "pp-sweep",
            Suite::Sensitivity => "sensitivity",
            Suite::Ablation => "ablation",
            Suite::MatrixGame => "matrix-game",
            Suite::OracleChecks => "oracle-checks",
            Suite::Heatmap => "heatmap",
        }
    }

    pub fn parse(s: &str) -> Result<Suite> {
        Suite::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.as_str()).collect();
            ExperimentError::Config(format!("unknown suite `{s}`; expected one of {}", names.join(", ")))
        })
    }

    /// The run groups of this suite derived from `base`, with their labels.
    pub fn groups(self, base: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
        let with = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            c.suite = Some(self.as_str().into());
            f(&mut c);
            c
        };
        let set_punishment = |c: &mut ExperimentConfig, p: f64| {
            if let EnvSpec::PredatorPrey(pp) = &mut c.env {
                pp.punishment = p;
            }
        };
        if matches!(self, Suite::PpSweep | Suite::Sensitivity | Suite::Ablation)
            && !matches!(base.env, EnvSpec::PredatorPrey(_))
        {
            return Err(ExperimentError::Config(format!(
                "suite {} needs env predator_prey",
                self.as_str()
            )));
        }
        Ok(match self {
            Suite::PpSweep => PP_SWEEP_PUNISHMENTS
                .iter()
                .map(|&p| (format!("{}-p{p}", base.scheme.label()), with(&|c| set_punishment(c, p))))
                .collect(),
            Suite::Sensitivity => SENSITIVITY_W_MIN
                .iter()
                .map(|&w| {
                    let c = with(&|c| {
                        c.scheme = SchemeConfig {
                            name: "remix".into(),
                            w_min: w,
                            w_max: 1.0,
                            ..c.scheme.clone()
                        };
                        set_punishment(c, SENSITIVITY_PUNISHMENT);
                    });
                    (format!("remix-wmin{w}"), c)
                })
                .collect(),
            Suite::Ablation => Term::ALL
                .iter()
                .map(|&t| {
                    let c = with(&|c| {
                        c.scheme.name = "remix".into();
                        c.scheme.disabled_terms = vec![t];
                    });
                    (format!("remix-no-{}", t.as_str()), c)
                })
                .collect(),
            Suite::MatrixGame => {
                let on_matrix = matches!(base.env, EnvSpec::Matrix(_));
                MATRIX_SCHEMES
                    .iter()
                    .map(|&s| {
                        let c = with(&|c| {
                            if !on_matrix {
                                c.env = EnvSpec::Matrix(MatrixGameConfig::default());
                                c.train = matrix_train_config();
                            }
                            c.scheme.apply_cli(s).expect("built-in scheme strings parse");
                        });
                        (c.scheme.label(), c)
                    })
                    .collect()
            }
            Suite::Heatmap => vec![(base.scheme.label(), with(&|_| {}))],
            Suite::OracleChecks => Vec::new(),
        })
    }

    fn default_seeds(self) -> &'static [u64] {
        match self {
            Suite::MatrixGame => &MATRIX_SEEDS,
            _ => &DEFAULT_SEEDS,
        }
    }
}

/// Directory name of a single run: environment, punishment and scheme.
pub fn run_label(config: &ExperimentConfig) -> String {
    match &config.env {
        EnvSpec::PredatorPrey(pp) => format!("pp-p{}-{}", pp.punishment, config.scheme.label()),
        EnvSpec::Matrix(_) => format!("matrix-{}", config.scheme.label()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub label: String,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Mean over completed seeds of their final-evaluation returns.
    pub final_return: Option<f64>,
}

impl GroupResult {
    fn new(label: String, dir: PathBuf, manifest: RunManifest) -> Self {
        let finals: Vec<f64> = manifest
            .seeds
            .iter()
            .filter_map(|s| match s.status {
                SeedStatus::Completed { final_return_mean } => final_return_mean,
                _ => None,
            })
            .collect();
        let final_return = (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64);
        Self {
            label,
            dir,
            manifest,
            final_return,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub dir: PathBuf,
    pub groups: Vec<GroupResult>,
    pub oracle: Option<OracleReport>,
    /// Failed seeds plus failed oracle checks.
    pub failed: usize,
    pub total: usize,
}

impl SuiteReport {
    pub fn group(&self, label: &str) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.label == label)
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Fresh,
    Resume,
}

struct Job<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    dir: PathBuf,
    mode: Mode,
}

fn seed_dir(group: &Path, seed: u64) -> PathBuf {
    group.join(format!("seed-{seed}"))
}

fn execute(job: &Job) -> SeedStatus {
    let go = || -> Result<RunSummary> {
        let c = job.config;
        let scheme = SchemeRegistry::with_builtins().build(&c.scheme)?;
        let mut runner = match job.mode {
            Mode::Fresh => {
                std::fs::create_dir_all(&job.dir).map_err(io_error(&job.dir))?;
                Runner::new(
                    &c.env,
                    c.factor.clone(),
                    scheme,
                    c.train.clone(),
                    job.seed,
                    Some(&job.dir),
                )?
            }
            Mode::Resume => Runner::resume(&c.env, c.factor.clone(), scheme, c.train.clone(), job.seed, &job.dir)?,
        };
        Ok(runner.run()?.summary)
    };
    match go() {
        Ok(s) => SeedStatus::Completed {
            final_return_mean: s.final_return_mean,
        },
        Err(e) => SeedStatus::Failed { error: e.to_string() },
    }
}

/// Runs the jobs on up to `workers` threads; results come back in job order.
fn execute_all(jobs: &[Job], workers: usize) -> Vec<SeedStatus> {
    let next = AtomicUsize::new(0);
    let results = Mutex::new(vec![SeedStatus::Pending; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let status = execute(job);
                results.lock().expect("no worker panics while holding the lock")[i] = status;
            });
        }
    });
    results.into_inner().expect("workers finished")
}

struct Planned {
    label: String,
    dir: PathBuf,
    config: ExperimentConfig,
    manifest: RunManifest,
}

fn plan_group(label: &str, mut config: ExperimentConfig, seeds: &[u64], parent: &Path) -> Result<Planned> {
    config.seeds = seeds.to_vec();
    config.validate()?;
    let dir = parent.join(label);
    std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let hash = config_hash(&config.run_spec(), seeds);
    let previous = if config.skip_completed && dir.join("manifest.json").exists() {
        RunManifest::load(&dir).ok().filter(|m| m.config_hash == hash)
    } else {
        None
    };
    let seeds = seeds
        .iter()
        .map(|&seed| {
            let dir = seed_dir(&dir, seed);
            let status = previous
                .as_ref()
                .and_then(|m| m.seeds.iter().find(|r| r.seed == seed))
                .map(|r| r.status.clone())
                .filter(|s| matches!(s, SeedStatus::Completed { .. }) && dir.join("summary.json").exists())
                .unwrap_or(SeedStatus::Pending);
            SeedRecord { seed, dir, status }
        })
        .collect();
    let manifest = RunManifest {
        config_hash: hash,
        code_version: CODE_VERSION.into(),
        label: label.into(),
        suite: config.suite.clone(),
        seeds,
        artifacts: Vec::new(),
    };
    write_json(&dir.join("config.json"), &config)?;
    manifest.save(&dir)?;
    Ok(Planned {
        label: label.into(),
        dir,
        config,
        manifest,
    })
}

fn finish_group(mut p: Planned) -> Result<GroupResult> {
    let done: Vec<PathBuf> = p
        .manifest
        .seeds
        .iter()
        .filter(|s| matches!(s.status, SeedStatus::Completed { .. }))
        .map(|s| s.dir.clone())
        .collect();
    let mut artifacts = vec!["config.json".to_string()];
    for s in &p.manifest.seeds {
        let rel = s.dir.strip_prefix(&p.dir).unwrap_or(&s.dir).display().to_string();
        for f in ["metrics.csv", "weights.jsonl", "events.jsonl", "summary.json", "ckpt"] {
            if s.dir.join(f).exists() {
                artifacts.push(format!("{rel}/{f}"));
            }
        }
    }
    p.manifest.save(&p.dir)?;
    if !done.is_empty() {
        let agg = aggregate_runs(&done)?;
        let path = p.dir.join("aggregate.csv");
        std::fs::write(&path, agg.to_csv()).map_err(io_error(&path))?;
        artifacts.push("aggregate.csv".into());
    }
    p.manifest.artifacts = artifacts;
    p.manifest.save(&p.dir)?;
    Ok(GroupResult::new(p.label, p.dir, p.manifest))
}

fn run_planned(mut planned: Vec<Planned>, workers: usize) -> Result<Vec<GroupResult>> {
    let index: Vec<(usize, usize)> = planned
        .iter()
        .enumerate()
        .flat_map(|(g, p)| {
            p.manifest
                .seeds
                .iter()
                .enumerate()
                .filter(|(_, s)| s.status == SeedStatus::Pending)
                .map(move |(k, _)| (g, k))
        })
        .collect();
    let statuses = {
        let jobs: Vec<Job> = index
            .iter()
            .map(|&(g, k)| {
                let r = &planned[g].manifest.seeds[k];
                Job {
                    config: &planned[g].config,
                    seed: r.seed,
                    dir: r.dir.clone(),
                    mode: Mode::Fresh,
                }
            })
            .collect();
        execute_all(&jobs, workers)
    };
    for ((g, k), status) in index.into_iter().zip(statuses) {
        planned[g].manifest.seeds[k].status = status;
    }
    planned.into_iter().map(finish_group).collect()
}

/// Trains every seed of one configuration under `parent/label`.
pub fn run_group(label: &str, config: &ExperimentConfig, seeds: &[u64], parent: &Path) -> Result<GroupResult> {
    let planned = plan_group(label, config.clone(), seeds, parent)?;
    let mut results = run_planned(vec![planned], config.jobs)?;
    Ok(results.pop().expect("one group in, one out"))
}

/// Runs `config` as a single group under `config.out_dir`, labelled by
/// environment, punishment and scheme.
pub fn run_single(config: &ExperimentConfig) -> Result<GroupResult> {
    run_group(
        &run_label(config),
        config,
        &config.seeds_or(&DEFAULT_SEEDS),
        &config.out_dir,
    )
}

/// Runs a whole suite under `config.out_dir/<suite>`. Failed seeds are
/// recorded in their group's manifest and counted; the other runs go on.
pub fn run_suite(suite: Suite, config: &ExperimentConfig) -> Result<SuiteReport> {
    let dir = config.out_dir.join(suite.as_str());
    std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let mut report = SuiteReport {
        suite,
        dir: dir.clone(),
        groups: Vec::new(),
        oracle: None,
        failed: 0,
        total: 0,
    };
    if suite == Suite::OracleChecks {
        let oracle = run_oracle_checks(&config.oracle)?;
        write_json(&dir.join("oracle.json"), &oracle)?;
        report.total = oracle.checks.len();
        report.failed = oracle.checks.iter().filter(|c| !c.passed).count();
        report.oracle = Some(oracle);
    } else {
        let seeds = config.seeds_or(suite.default_seeds());
        let planned = suite
            .groups(config)?
            .into_iter()
            .map(|(label, c)| plan_group(&label, c, &seeds, &dir))
            .collect::<Result<Vec<_>>>()?;
        report.groups = run_planned(planned, config.jobs)?;
        for g in &report.groups {
            report.total += g.manifest.seeds.len();
            report.failed += g.manifest.failed();
        }
        if suite == Suite::Heatmap {
            for g in &report.groups {
                for s in g
                    .manifest
                    .seeds
                    .iter()
                    .filter(|s| matches!(s.status, SeedStatus::Completed { .. }))
                {
                    write_json(&s.dir.join("heatmap.json"), &export_heatmap_data(&s.dir)?)?;
                }
            }
        }
    }
    write_json(&dir.join("suite.json"), &report)?;
    Ok(report)
}

/// Continues every seed of the group in `group_dir` up to `total_steps`
/// environment steps. The stored config must still match the manifest
/// hash; a supplied `config` must match the stored one apart from
/// `train.total_steps`. The runs must have been saved with `save_replay`.
pub fn resume(group_dir: &Path, total_steps: Option<u64>, config: Option<&ExperimentConfig>) -> Result<GroupResult> {
    let mut stored: ExperimentConfig = read_json(&group_dir.join("config.json"))?;
    let mut manifest = RunManifest::load(group_dir)?;
    let computed = config_hash(&stored.run_spec(), &stored.seeds);
    if computed != manifest.config_hash {
        return Err(ExperimentError::HashMismatch {
            dir: group_dir.to_path_buf(),
            diff: vec![format!(
                "config_hash: {} (manifest) -> {computed} (config.json)",
                manifest.config_hash
            )],
        });
    }
    if let Some(c) = config {
        let mut supplied = c.clone();
        supplied.train.total_steps = stored.train.total_steps;
        let supplied_seeds = if supplied.seeds.is_empty() {
            stored.seeds.clone()
        } else {
            supplied.seeds.clone()
        };
        if config_hash(&supplied.run_spec(), &supplied_seeds) != computed {
            let old = serde_json::json!({ "spec": stored.run_spec(), "seeds": stored.seeds });
            let new = serde_json::json!({ "spec": supplied.run_spec(), "seeds": supplied_seeds });
            return Err(ExperimentError::HashMismatch {
                dir: group_dir.to_path_buf(),
                diff: config_diff(&old, &new),
            });
        }
    }
    if let Some(steps) = total_steps {
        stored.train.total_steps = steps;
    }
    stored.validate()?;
    for s in manifest.seeds.iter_mut() {
        s.dir = seed_dir(group_dir, s.seed);
        if !s.dir.join("ckpt/final.json").exists() {
            return Err(ExperimentError::Config(format!(
                "cannot resume seed {}: no checkpoint at {}",
                s.seed,
                s.dir.join("ckpt/final.json").display()
            )));
        }
    }
    let jobs: Vec<Job> = manifest
        .seeds
        .iter()
        .map(|s| Job {
            config: &stored,
            seed: s.seed,
            dir: s.dir.clone(),
            mode: Mode::Resume,
        })
        .collect();
    let statuses = execute_all(&jobs, stored.jobs);
    for (s, status) in manifest.seeds.iter_mut().zip(statuses) {
        s.status = status;
    }
    manifest.config_hash = config_hash(&stored.run_spec(), &stored.seeds);
    write_json(&group_dir.join("config.json"), &stored)?;
    let label = manifest.label.clone();
    let planned = Planned {
        label,
        dir: group_dir.to_path_buf(),
        config: stored,
        manifest,
    };
    finish_group(planned)
}
