use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_episode, evaluate, io_err, Learner, ReplayBuffer, Result, StepStats, TrainConfig, TrainError};
use crate::env::{EnvSpec, MultiAgentEnv};
use crate::factor::{Dims, FactorConfig, Networks};
use crate::tensor::Checkpoint;
use crate::weighting::{histogram_from_counts, WeightScheme, HIST_BINS};

pub const METRICS_HEADER: &str =
    "step,episode,eval_return_mean,eval_return_std,loss_qtot,loss_qstar,w_raw_mean,w_raw_zero_frac,epsilon";

/// Number of trailing evaluations averaged into the final return.
pub const FINAL_EVALS: usize = 100;

/// One metrics CSV line, written at every evaluation. Loss and weight
/// columns average the training steps since the previous line and are NaN
/// when there were none.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub loss_qtot: f64,
    pub loss_qstar: f64,
    pub w_raw_mean: f64,
    pub w_raw_zero_frac: f64,
    pub epsilon: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            self.eval_return_mean,
            self.eval_return_std,
            self.loss_qtot,
            self.loss_qstar,
            self.w_raw_mean,
            self.w_raw_zero_frac,
            self.epsilon
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return None;
        }
        let x = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            episode: f[1].parse().ok()?,
            eval_return_mean: x(2)?,
            eval_return_std: x(3)?,
            loss_qtot: x(4)?,
            loss_qstar: x(5)?,
            w_raw_mean: x(6)?,
            w_raw_zero_frac: x(7)?,
            epsilon: x(8)?,
        })
    }

    /// Reads a metrics CSV, checking the header.
    pub fn read_csv(path: &Path) -> Result<Vec<Self>> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(TrainError::Config(format!(
                "{}: unexpected metrics header",
                path.display()
            )));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| Self::parse(l).ok_or_else(|| TrainError::Config(format!("{}: bad row `{l}`", path.display()))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Mean of `eval_return_mean` over the last [`FINAL_EVALS`] evaluations.
    pub final_return_mean: Option<f64>,
    pub best_return: Option<f64>,
    pub wall_clock_seconds: f64,
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub evaluations: u64,
    pub target_syncs: u64,
    /// Share of trained transitions whose gradient bracket was clamped.
    pub bracket_clamped_frac: f64,
    pub non_finite_weights: u64,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    /// Rows produced by this invocation.
    pub rows: Vec<MetricsRow>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Accum {
    steps: u64,
    loss_qtot: f64,
    loss_qstar: f64,
    w_raw_mean: f64,
    w_raw_zero_frac: f64,
    hist: Vec<u64>,
}

impl Accum {
    fn add(&mut self, s: &StepStats) {
        self.steps += 1;
        self.loss_qtot += s.loss_qtot;
        self.loss_qstar += s.loss_qstar;
        self.w_raw_mean += s.weights.raw_mean();
        self.w_raw_zero_frac += s.weights.raw_zero_frac();
        self.hist.resize(HIST_BINS, 0);
        for &w in &s.weights.normalized {
            self.hist[crate::weighting::bin_index(w)] += 1;
        }
    }

    fn mean(&self, total: f64) -> f64 {
        if self.steps == 0 {
            f64::NAN
        } else {
            total / self.steps as f64
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos = self
            .word_pos
            .parse()
            .map_err(|_| TrainError::Resume(format!("bad rng position `{}`", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Loop counters and everything else needed to continue a run exactly.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Progress {
    env_steps: u64,
    episodes: u64,
    train_steps: u64,
    next_eval: u64,
    evaluations: u64,
    target_syncs: u64,
    eval_means: Vec<f64>,
    transitions: u64,
    bracket_clamped: u64,
    non_finite: u64,
    accum: Accum,
}

struct RunFiles {
    dir: PathBuf,
    metrics: File,
    weights: File,
    events: File,
}

impl RunFiles {
    fn open(dir: &Path, append: bool) -> Result<Self> {
        fs::create_dir_all(dir.join("ckpt")).map_err(io_err(dir))?;
        let open = |name: &str| -> Result<File> {
            let p = dir.join(name);
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(&p)
                .map_err(io_err(&p))
        };
        let mut files = Self {
            dir: dir.to_path_buf(),
            metrics: open("metrics.csv")?,
            weights: open("weights.jsonl")?,
            events: open("events.jsonl")?,
        };
        if !append {
            files.write_metrics(METRICS_HEADER)?;
        }
        Ok(files)
    }

    fn write_line(file: &mut File, path: &Path, line: &str) -> Result<()> {
        file.write_all(format!("{line}\n").as_bytes()).map_err(io_err(path))
    }

    fn write_metrics(&mut self, line: &str) -> Result<()> {
        Self::write_line(&mut self.metrics, &self.dir.join("metrics.csv"), line)
    }

    fn write_weights(&mut self, line: &str) -> Result<()> {
        Self::write_line(&mut self.weights, &self.dir.join("weights.jsonl"), line)
    }

    fn event(&mut self, value: serde_json::Value) -> Result<()> {
        Self::write_line(&mut self.events, &self.dir.join("events.jsonl"), &value.to_string())
    }
}

/// One training run: environment, learner, replay and bookkeeping.
pub struct Runner {
    env: Box<dyn MultiAgentEnv>,
    eval_env: Box<dyn MultiAgentEnv>,
    pub learner: Learner,
    buffer: ReplayBuffer,
    config: TrainConfig,
    seed: u64,
    progress: Progress,
    collect_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    files: Option<RunFiles>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Runner {
    /// Builds a fresh run. With `out_dir`, metrics and checkpoints are
    /// written there (existing files are overwritten).
    pub fn new(
        env: &EnvSpec,
        factor: FactorConfig,
        scheme: Box<dyn WeightScheme>,
        config: TrainConfig,
        seed: u64,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        let train_env = env.build()?;
        let info = train_env.info();
        let dims = Dims {
            n_agents: info.n_agents,
            n_actions: info.n_actions,
            obs_dim: info.obs_dim,
            state_dim: info.state_dim,
        };
        let learner = Learner::new(
            Networks::new(dims, factor),
            config.clone(),
            scheme,
            &mut stream(seed, 0),
        );
        let files = out_dir.map(|d| RunFiles::open(d, false)).transpose()?;
        Ok(Self {
            env: train_env,
            eval_env: env.build()?,
            learner,
            buffer: ReplayBuffer::new(config.buffer_episodes),
            progress: Progress {
                next_eval: config.eval_interval,
                ..Progress::default()
            },
            config,
            seed,
            collect_rng: stream(seed, 1),
            train_rng: stream(seed, 2),
            files,
        })
    }

    /// Continues the run saved in `out_dir` (its `ckpt/final` snapshot and
    /// replay). `config` may differ from the original only in `total_steps`;
    /// checking that is the caller's business.
    pub fn resume(
        env: &EnvSpec,
        factor: FactorConfig,
        scheme: Box<dyn WeightScheme>,
        config: TrainConfig,
        seed: u64,
        out_dir: &Path,
    ) -> Result<Self> {
        let mut runner = Self::new(env, factor, scheme, config, seed, None)?;
        let base = out_dir.join("ckpt/final");
        if !base.with_extension("json").exists() {
            return Err(TrainError::Resume(format!(
                "no checkpoint at {}",
                base.with_extension("json").display()
            )));
        }
        let ck = Checkpoint::load(&base)?;
        runner.learner.restore(&ck)?;
        let meta = &ck.meta;
        let get = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| TrainError::Resume(format!("snapshot lacks `{k}`")))
        };
        let parse_err = |e: serde_json::Error| TrainError::Resume(e.to_string());
        runner.progress = serde_json::from_value(get("progress")?).map_err(parse_err)?;
        let collect: RngState = serde_json::from_value(get("collect_rng")?).map_err(parse_err)?;
        let train: RngState = serde_json::from_value(get("train_rng")?).map_err(parse_err)?;
        runner.collect_rng = collect.restore()?;
        runner.train_rng = train.restore()?;

        let replay = out_dir.join("ckpt/replay.json");
        if !replay.exists() {
            return Err(TrainError::Resume(
                "the run was saved without its replay buffer (set save_replay to keep it)".into(),
            ));
        }
        let text = fs::read_to_string(&replay).map_err(io_err(&replay))?;
        runner.buffer = serde_json::from_str(&text).map_err(parse_err)?;

        let rows = MetricsRow::read_csv(&out_dir.join("metrics.csv"))?;
        if rows.len() as u64 != runner.progress.evaluations {
            return Err(TrainError::Resume(format!(
                "metrics.csv has {} rows but the snapshot recorded {} evaluations",
                rows.len(),
                runner.progress.evaluations
            )));
        }
        runner.files = Some(RunFiles::open(out_dir, true)?);
        Ok(runner)
    }

    pub fn env_steps(&self) -> u64 {
        self.progress.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.progress.episodes
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn eval_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (self.progress.evaluations + 1)
    }

    fn evaluate_and_log(&mut self) -> Result<MetricsRow> {
        let seed = self.eval_seed();
        let returns = evaluate(self.eval_env.as_mut(), &self.learner, self.config.eval_episodes, seed)?;
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let p = &mut self.progress;
        let a = &p.accum;
        let row = MetricsRow {
            step: p.env_steps,
            episode: p.episodes,
            eval_return_mean: mean,
            eval_return_std: var.sqrt(),
            loss_qtot: a.mean(a.loss_qtot),
            loss_qstar: a.mean(a.loss_qstar),
            w_raw_mean: a.mean(a.w_raw_mean),
            w_raw_zero_frac: a.mean(a.w_raw_zero_frac),
            epsilon: self.config.epsilon(p.env_steps),
        };
        p.eval_means.push(mean);
        p.evaluations += 1;
        p.next_eval = (p.env_steps / self.config.eval_interval + 1) * self.config.eval_interval;
        let hist = (a.steps > 0).then(|| histogram_from_counts(p.env_steps, &a.hist));
        p.accum = Accum::default();
        if let Some(files) = &mut self.files {
            files.write_metrics(&row.to_csv())?;
            if let Some(h) = hist {
                files.write_weights(&serde_json::to_string(&h).expect("histogram serializes"))?;
            }
        }
        self.save_snapshot("latest", false)?;
        Ok(row)
    }

    fn save_snapshot(&self, name: &str, with_replay: bool) -> Result<()> {
        let Some(files) = &self.files else { return Ok(()) };
        let mut ck = self.learner.checkpoint();
        ck.meta["progress"] = serde_json::to_value(&self.progress).expect("progress serializes");
        ck.meta["collect_rng"] = serde_json::to_value(RngState::of(&self.collect_rng)).expect("rng serializes");
        ck.meta["train_rng"] = serde_json::to_value(RngState::of(&self.train_rng)).expect("rng serializes");
        ck.save(&files.dir.join("ckpt").join(name))?;
        if with_replay {
            let p = files.dir.join("ckpt/replay.json");
            let text = serde_json::to_string(&self.buffer).expect("replay serializes");
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        Ok(())
    }

    fn summary(&self, started: Instant, status: String) -> RunSummary {
        let p = &self.progress;
        let tail = &p.eval_means[p.eval_means.len().saturating_sub(FINAL_EVALS)..];
        RunSummary {
            final_return_mean: (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
            best_return: p.eval_means.iter().copied().reduce(f64::max),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            env_steps: p.env_steps,
            episodes: p.episodes,
            train_steps: p.train_steps,
            evaluations: p.evaluations,
            target_syncs: p.target_syncs,
            bracket_clamped_frac: if p.transitions == 0 {
                0.0
            } else {
                p.bracket_clamped as f64 / p.transitions as f64
            },
            non_finite_weights: p.non_finite,
            status,
        }
    }

    fn write_summary(&self, summary: &RunSummary) -> Result<()> {
        if let Some(files) = &self.files {
            let p = files.dir.join("summary.json");
            let text = serde_json::to_string_pretty(summary).expect("summary serializes");
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        Ok(())
    }

    /// Trains until `total_steps` environment steps have been collected,
    /// evaluating greedily every `eval_interval` steps.
    pub fn run(&mut self) -> Result<RunOutcome> {
        let started = Instant::now();
        let mut rows = Vec::new();
        loop {
            if self.progress.env_steps >= self.progress.next_eval {
                rows.push(self.evaluate_and_log()?);
            }
            if self.progress.env_steps >= self.config.total_steps {
                break;
            }
            if let Err(e) = self.iteration() {
                let summary = self.summary(started, format!("aborted: {e}"));
                if let Some(files) = &mut self.files {
                    files.event(serde_json::json!({"event": "abort", "episode": self.progress.episodes, "error": e.to_string()}))?;
                }
                self.save_snapshot("abort", false)?;
                self.write_summary(&summary)?;
                return Err(e);
            }
        }
        self.save_snapshot("final", self.config.save_replay)?;
        let summary = self.summary(started, "completed".into());
        self.write_summary(&summary)?;
        Ok(RunOutcome { summary, rows })
    }

    /// Collects one episode, trains once if the buffer allows, and syncs the
    /// targets on schedule.
    fn iteration(&mut self) -> Result<()> {
        let eps = self.config.epsilon(self.progress.env_steps);
        let env_seed = self.collect_rng.gen::<u64>();
        let ep = collect_episode(
            self.env.as_mut(),
            &self.learner,
            eps,
            env_seed,
            &mut self.collect_rng,
            None,
        )?;
        self.progress.env_steps += ep.len as u64;
        self.progress.episodes += 1;
        self.buffer.push(ep);

        if let Some(batch) = self.buffer.sample(self.config.batch_size, &mut self.train_rng) {
            let stats = self.learner.train_step(&batch)?;
            let p = &mut self.progress;
            p.train_steps += 1;
            p.transitions += stats.transitions as u64;
            p.bracket_clamped += stats.weights.bracket_clamped as u64;
            p.non_finite += stats.weights.non_finite.len() as u64;
            p.accum.add(&stats);
        }

        if self
            .progress
            .episodes
            .is_multiple_of(self.config.target_interval as u64)
        {
            self.learner.sync_targets();
            self.progress.target_syncs += 1;
            let episode = self.progress.episodes;
            if let Some(files) = &mut self.files {
                files.event(serde_json::json!({"event": "target_sync", "episode": episode}))?;
            }
        }
        Ok(())
    }
}
