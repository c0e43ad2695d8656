//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`env.`, `train.`, `run.`). Blank lines and
//! lines starting with `#` are ignored; `manifest.` keys are bookkeeping
//! written by the runner and skipped on load. Unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::task_env::DifficultyConfig;
use crate::trainer::{Method, StepSchedule, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenCorpus,
    TrainDpa,
    TrainBaseline,
    Eval,
    AuditTheory,
    TrackOde,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::GenCorpus,
        Command::TrainDpa,
        Command::TrainBaseline,
        Command::Eval,
        Command::AuditTheory,
        Command::TrackOde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::TrainDpa => "train-dpa",
            Command::TrainBaseline => "train-baseline",
            Command::Eval => "eval",
            Command::AuditTheory => "audit-theory",
            Command::TrackOde => "track-ode",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Runner settings that are not part of the environment or the trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub out_dir: PathBuf,
    pub corpus_size: usize,
    pub train_fraction: f64,
    pub corpus_seed: u64,
    pub split_seed: u64,
    /// Read the split from JSONL files instead of generating it.
    pub train_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Method whose rollout protocol `eval` and `audit-theory` use.
    pub method: Method,
    /// Steps pooled per bar of the case-proportion chart.
    pub window: usize,
    pub audit_samples: usize,
    pub seeds: Vec<u64>,
    pub track_beta: f64,
    pub track_batch: usize,
    pub track_c: f64,
    pub track_t0: f64,
    pub track_steps: usize,
    pub track_window: f64,
    pub track_dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            out_dir: PathBuf::from("artifacts"),
            corpus_size: 100,
            train_fraction: 0.8,
            corpus_seed: 1000,
            split_seed: 77,
            train_corpus: None,
            test_corpus: None,
            checkpoint: None,
            method: Method::DpaGrpo,
            window: 5,
            audit_samples: 20,
            seeds: (0..10).collect(),
            track_beta: 1.0,
            track_batch: 64,
            track_c: 5.0,
            track_t0: 20.0,
            track_steps: 200_000,
            track_window: 20.0,
            track_dt: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub env: DifficultyConfig,
    pub train: TrainConfig,
    pub run: RunConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn method_from(key: &str, v: &str) -> Result<Method> {
    match v {
        "dpa_grpo" => Ok(Method::DpaGrpo),
        "grpo_generator_only" => Ok(Method::Baseline),
        _ => Err(Error::Config(format!("bad value `{v}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let (e, t, r) = (&mut self.env, &mut self.train, &mut self.run);
        match key {
            "env.min_lines" => e.min_lines = parse(key, v)?,
            "env.max_lines" => e.max_lines = parse(key, v)?,
            "env.min_inputs" => e.min_inputs = parse(key, v)?,
            "env.max_inputs" => e.max_inputs = parse(key, v)?,
            "env.max_evaluated" => e.max_evaluated = parse(key, v)?,
            "env.distractors" => e.distractors = parse(key, v)?,
            "env.feature_noise" => e.feature_noise = parse(key, v)?,
            "env.generator_noise" => e.generator_noise = parse(key, v)?,

            "train.beta_v" => t.beta_v = parse(key, v)?,
            "train.beta_fx" => t.beta_fx = parse(key, v)?,
            "train.beta_fz" => t.beta_fz = parse(key, v)?,
            "train.beta_fa" => t.beta_fa = parse(key, v)?,
            "train.beta" => {
                let b: f64 = parse(key, v)?;
                (t.beta_v, t.beta_fx, t.beta_fz, t.beta_fa) = (b, b, b, b);
            }
            "train.epsilon_a" => t.epsilon_a = parse(key, v)?,
            "train.schedule" => {
                t.schedule = match (v, t.schedule) {
                    ("constant", StepSchedule::Constant { .. })
                    | ("robbins_monro", StepSchedule::RobbinsMonro { .. }) => t.schedule,
                    ("constant", _) => StepSchedule::Constant { eta: 0.5 },
                    ("robbins_monro", _) => StepSchedule::RobbinsMonro { c: 0.5, t0: 10.0 },
                    _ => return Err(Error::Config(format!("bad value `{v}` for `{key}`"))),
                }
            }
            "train.eta" => match &mut t.schedule {
                StepSchedule::Constant { eta } => *eta = parse(key, v)?,
                _ => {
                    return Err(Error::Config(
                        "train.eta needs train.schedule = constant".into(),
                    ))
                }
            },
            "train.rm_c" | "train.rm_t0" => match &mut t.schedule {
                StepSchedule::RobbinsMonro { c, t0 } => {
                    *(if key == "train.rm_c" { c } else { t0 }) = parse(key, v)?;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "{key} needs train.schedule = robbins_monro"
                    )))
                }
            },
            "train.batch_tasks" => t.batch_tasks = parse(key, v)?,
            "train.k" => t.k = parse(key, v)?,
            "train.max_steps" => t.max_steps = parse(key, v)?,
            "train.eval_interval" => t.eval_interval = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.expected_groups" => t.expected_groups = parse(key, v)?,
            "train.visitation_floor" => t.visitation_floor = parse(key, v)?,
            "train.temperature" => t.temperature = parse(key, v)?,
            "train.stochastic_eval" => t.stochastic_eval = parse(key, v)?,

            "run.command" => r.command = if v.is_empty() { None } else { Some(v.parse()?) },
            "run.out_dir" => r.out_dir = PathBuf::from(v),
            "run.corpus_size" => r.corpus_size = parse(key, v)?,
            "run.train_fraction" => r.train_fraction = parse(key, v)?,
            "run.corpus_seed" => r.corpus_seed = parse(key, v)?,
            "run.split_seed" => r.split_seed = parse(key, v)?,
            "run.train_corpus" => r.train_corpus = opt_path(v),
            "run.test_corpus" => r.test_corpus = opt_path(v),
            "run.checkpoint" => r.checkpoint = opt_path(v),
            "run.method" => r.method = method_from(key, v)?,
            "run.window" => r.window = parse(key, v)?,
            "run.audit_samples" => r.audit_samples = parse(key, v)?,
            "run.seeds" => {
                r.seeds = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "run.track_beta" => r.track_beta = parse(key, v)?,
            "run.track_batch" => r.track_batch = parse(key, v)?,
            "run.track_c" => r.track_c = parse(key, v)?,
            "run.track_t0" => r.track_t0 = parse(key, v)?,
            "run.track_steps" => r.track_steps = parse(key, v)?,
            "run.track_window" => r.track_window = parse(key, v)?,
            "run.track_dt" => r.track_dt = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key in canonical order, values formatted so that they parse
    /// back to the same bits.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (e, t, r) = (&self.env, &self.train, &self.run);
        let mut out = vec![
            ("env.min_lines", e.min_lines.to_string()),
            ("env.max_lines", e.max_lines.to_string()),
            ("env.min_inputs", e.min_inputs.to_string()),
            ("env.max_inputs", e.max_inputs.to_string()),
            ("env.max_evaluated", e.max_evaluated.to_string()),
            ("env.distractors", e.distractors.to_string()),
            ("env.feature_noise", e.feature_noise.to_string()),
            ("env.generator_noise", e.generator_noise.to_string()),
            ("train.beta_v", t.beta_v.to_string()),
            ("train.beta_fx", t.beta_fx.to_string()),
            ("train.beta_fz", t.beta_fz.to_string()),
            ("train.beta_fa", t.beta_fa.to_string()),
            ("train.epsilon_a", t.epsilon_a.to_string()),
        ];
        match t.schedule {
            StepSchedule::Constant { eta } => {
                out.push(("train.schedule", "constant".into()));
                out.push(("train.eta", eta.to_string()));
            }
            StepSchedule::RobbinsMonro { c, t0 } => {
                out.push(("train.schedule", "robbins_monro".into()));
                out.push(("train.rm_c", c.to_string()));
                out.push(("train.rm_t0", t0.to_string()));
            }
        }
        out.extend([
            ("train.batch_tasks", t.batch_tasks.to_string()),
            ("train.k", t.k.to_string()),
            ("train.max_steps", t.max_steps.to_string()),
            ("train.eval_interval", t.eval_interval.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.expected_groups", t.expected_groups.to_string()),
            ("train.visitation_floor", t.visitation_floor.to_string()),
            ("train.temperature", t.temperature.to_string()),
            ("train.stochastic_eval", t.stochastic_eval.to_string()),
            (
                "run.command",
                r.command.map(|c| c.name().to_string()).unwrap_or_default(),
            ),
            ("run.out_dir", r.out_dir.display().to_string()),
            ("run.corpus_size", r.corpus_size.to_string()),
            ("run.train_fraction", r.train_fraction.to_string()),
            ("run.corpus_seed", r.corpus_seed.to_string()),
            ("run.split_seed", r.split_seed.to_string()),
            ("run.train_corpus", path_text(&r.train_corpus)),
            ("run.test_corpus", path_text(&r.test_corpus)),
            ("run.checkpoint", path_text(&r.checkpoint)),
            ("run.method", r.method.name().to_string()),
            ("run.window", r.window.to_string()),
            ("run.audit_samples", r.audit_samples.to_string()),
            (
                "run.seeds",
                r.seeds
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("run.track_beta", r.track_beta.to_string()),
            ("run.track_batch", r.track_batch.to_string()),
            ("run.track_c", r.track_c.to_string()),
            ("run.track_t0", r.track_t0.to_string()),
            ("run.track_steps", r.track_steps.to_string()),
            ("run.track_window", r.track_window.to_string()),
            ("run.track_dt", r.track_dt.to_string()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.starts_with("manifest.") {
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Parses `[command] [--config=F | --manifest=F] [--key=value ...]`.
    /// Files are applied first, then flags in order; a positional command
    /// wins over `run.command`.
    pub fn from_args(args: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        let mut command = None;
        let mut flags = Vec::new();
        for a in args {
            if let Some(rest) = a.strip_prefix("--") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("flag `{a}` must be `--key=value`")))?;
                match k {
                    "config" | "manifest" => {
                        let text = std::fs::read_to_string(v)
                            .map_err(|e| Error::Config(format!("cannot read {k} file {v}: {e}")))?;
                        cfg.apply_text(&text)?;
                    }
                    _ => flags.push((k.to_string(), v.to_string())),
                }
            } else if command.is_none() {
                command = Some(a.parse::<Command>()?);
            } else {
                return Err(Error::Config(format!("unexpected argument `{a}`")));
            }
        }
        for (k, v) in flags {
            cfg.set(&k, &v)?;
        }
        if command.is_some() {
            cfg.run.command = command;
        }
        match cfg.run.command {
            Some(Command::TrainDpa) => cfg.run.method = Method::DpaGrpo,
            Some(Command::TrainBaseline) => cfg.run.method = Method::Baseline,
            _ => {}
        }
        Ok(cfg)
    }

    pub fn command(&self) -> Result<Command> {
        self.run
            .command
            .ok_or_else(|| Error::Config("no command given".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        let r = &self.run;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(r.train_fraction > 0.0 && r.train_fraction < 1.0) {
            return bad("run.train_fraction must lie in (0, 1)");
        }
        if r.window == 0 || r.audit_samples == 0 {
            return bad("run.window and run.audit_samples must be positive");
        }
        if r.seeds.is_empty() {
            return bad("run.seeds is empty");
        }
        if !(r.track_beta > 0.0 && r.track_dt > 0.0 && r.track_window > 0.0) || r.track_batch == 0 {
            return bad("tracking beta, batch, dt and window must be positive");
        }
        StepSchedule::RobbinsMonro {
            c: r.track_c,
            t0: r.track_t0,
        }
        .validate()?;
        for p in [&r.train_corpus, &r.test_corpus, &r.checkpoint]
            .into_iter()
            .flatten()
        {
            if !Path::new(p).is_file() {
                return Err(Error::Config(format!("no such file: {}", p.display())));
            }
        }
        if r.train_corpus.is_some() != r.test_corpus.is_some() && self.command()? != Command::Eval {
            return bad("run.train_corpus and run.test_corpus must be given together");
        }
        Ok(())
    }
}
