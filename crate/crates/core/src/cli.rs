//! Command runner: corpus generation, training, evaluation, audits and
//! the tracking experiment. Every artifact is written temp-then-rename.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::config::{Command, ExperimentConfig};
use crate::game::{CaseHistogram, RolloutConfig, Transition};
use crate::policies::checkpoint::{read_checkpoint, text_dump, write_checkpoint};
use crate::policies::{GeneratorParams, VerifierParams};
use crate::report;
use crate::task_env::{generate_corpus, read_corpus, split_corpus, write_corpus, TaskInstance};
use crate::theory::{
    self, bandit_game, context_policies, enumerate_contexts, generator_dominance_audit,
    kl_best_response_target, ode_trajectory, perturbation_probe, total_variation,
    tracking_comparison, tracking_game, train_tabular, verifier_best_response_audit, Estimator,
    GradientMode, LinearVerifier, OdeMethod, RewardMode,
};
use crate::trainer::{
    evaluate, train_loop, EvalRecord, Method, StepSchedule, TrainingRun, TRAIN_DIAGNOSTIC_TASKS,
};
use crate::{Error, Result};

pub const USAGE: &str = "\
usage: gvlab <command> [--config=FILE | --manifest=FILE] [--section.key=value ...]

commands: gen-corpus, train-dpa, train-baseline, eval, audit-theory, track-ode
ARTIFACT_DIR, when set, replaces run.out_dir.
exit status: 0 success, 2 configuration error, 3 numeric failure";

/// Files written by one command, relative to `dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest last so that its file list is complete.
    fn finish(mut self, cfg: &ExperimentConfig) -> Result<RunArtifacts> {
        let text = cfg.to_text();
        let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        let r = &cfg.run;
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let mut m = format!("# gvlab {} run manifest\n", env!("CARGO_PKG_VERSION"));
        m += &text;
        m += &format!("manifest.config_sha256 = {hash}\n");
        m += &format!(
            "manifest.seeds = train:{} corpus:{} split:{} set:{}\n",
            cfg.train.seed,
            r.corpus_seed,
            r.split_seed,
            seeds.join(",")
        );
        m += &format!("manifest.files = {}\n", self.files.join(","));
        self.put("manifest.txt", m.as_bytes())?;
        Ok(RunArtifacts {
            dir: self.dir,
            files: self.files,
        })
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_tasks(path: &Path) -> Result<Vec<Arc<TaskInstance>>> {
    let f = fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(read_corpus(BufReader::new(f))?
        .into_iter()
        .map(Arc::new)
        .collect())
}

fn load_split(cfg: &ExperimentConfig) -> Result<(Vec<Arc<TaskInstance>>, Vec<Arc<TaskInstance>>)> {
    let r = &cfg.run;
    if let (Some(tr), Some(te)) = (&r.train_corpus, &r.test_corpus) {
        return Ok((read_tasks(tr)?, read_tasks(te)?));
    }
    let corpus = generate_corpus(r.corpus_size, r.corpus_seed, &cfg.env)?;
    let (tr, te) = split_corpus(corpus, r.train_fraction, r.split_seed);
    Ok((
        tr.into_iter().map(Arc::new).collect(),
        te.into_iter().map(Arc::new).collect(),
    ))
}

fn load_test(cfg: &ExperimentConfig) -> Result<Vec<Arc<TaskInstance>>> {
    match &cfg.run.test_corpus {
        Some(p) => read_tasks(p),
        None => Ok(load_split(cfg)?.1),
    }
}

fn load_params(
    cfg: &ExperimentConfig,
    required: bool,
) -> Result<(GeneratorParams, VerifierParams)> {
    let fc = cfg.env.feature_config();
    let path = match &cfg.run.checkpoint {
        Some(p) => p.clone(),
        None if required => cfg.run.out_dir.join("checkpoint.bin"),
        None => return Ok((GeneratorParams::zeros(&fc), VerifierParams::zeros(&fc))),
    };
    let mut f = fs::File::open(&path)
        .map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
    read_checkpoint(&mut f)
}

fn jsonl<T: serde::Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Per-task accuracy of the diagnostic training tasks.
fn diag_accuracies(
    cfg: &ExperimentConfig,
    train: &[Arc<TaskInstance>],
    g: &GeneratorParams,
    v: &VerifierParams,
    method: Method,
) -> Result<Vec<f64>> {
    train
        .iter()
        .take(TRAIN_DIAGNOSTIC_TASKS)
        .map(|t| {
            Ok(evaluate(
                std::slice::from_ref(t),
                g,
                v,
                cfg.env.feature_config(),
                &cfg.train,
                method,
            )?
            .0
            .accuracy)
        })
        .collect()
}

fn gen_corpus(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let (train, test) = load_split(cfg)?;
    let mut w = Writer::new(&cfg.run.out_dir)?;
    let mut table = String::from("split,id,lines,units\n");
    for (name, tasks) in [("train", &train), ("test", &test)] {
        let mut buf = Vec::new();
        let plain: Vec<TaskInstance> = tasks.iter().map(|t| (**t).clone()).collect();
        write_corpus(&mut buf, &plain)?;
        w.put(&format!("{name}.jsonl"), &buf)?;
        for t in tasks.iter() {
            table += &format!("{name},{},{},{}\n", t.id, t.lines.len(), t.horizon);
        }
    }
    w.put("corpus.csv", table.as_bytes())?;
    log::info!("corpus: {} train, {} test", train.len(), test.len());
    w.finish(cfg)
}

fn write_training(
    cfg: &ExperimentConfig,
    run: &TrainingRun,
    train: &[Arc<TaskInstance>],
) -> Result<RunArtifacts> {
    let mut w = Writer::new(&cfg.run.out_dir)?;
    w.put("metrics.csv", report::metrics_csv(&run.metrics)?.as_bytes())?;
    w.put(
        "eval.csv",
        report::eval_csv(run.method, &run.evals)?.as_bytes(),
    )?;
    w.put("transitions.jsonl", &jsonl(&run.final_transitions)?)?;
    let mut ck = Vec::new();
    write_checkpoint(&mut ck, &run.generator, &run.verifier)?;
    w.put("checkpoint.bin", &ck)?;
    w.put(
        "checkpoint.txt",
        text_dump(&run.generator, &run.verifier).as_bytes(),
    )?;

    if !run.metrics.is_empty() {
        let windows = report::case_windows(&run.metrics, cfg.run.window)?;
        w.put(
            "case_windows.csv",
            report::case_windows_csv(&windows).as_bytes(),
        )?;
        w.put("cases.svg", report::case_bars_svg(&windows).as_bytes())?;
    }
    let points = report::accuracy_points(run)?;
    w.put("accuracy.csv", report::accuracy_csv(&points).as_bytes())?;
    w.put("accuracy.svg", report::accuracy_svg(&points).as_bytes())?;

    let fc = cfg.env.feature_config();
    let (g0, v0) = (GeneratorParams::zeros(&fc), VerifierParams::zeros(&fc));
    let init = run.initial_test().ok_or(Error::EmptyBatch)?;
    let last = run.final_test().ok_or(Error::EmptyBatch)?;
    let mut summary = format!("{}\n", report::SUMMARY_HEADER);
    summary += &report::summary_row(
        "initial",
        cfg.train.seed,
        0,
        0,
        &init.histogram,
        &diag_accuracies(cfg, train, &g0, &v0, run.method)?,
    )?;
    summary.push('\n');
    summary += &report::summary_row(
        run.method.name(),
        cfg.train.seed,
        last.step,
        last.samples_seen,
        &last.histogram,
        &diag_accuracies(cfg, train, &run.generator, &run.verifier, run.method)?,
    )?;
    summary.push('\n');
    w.put("summary.csv", summary.as_bytes())?;
    w.finish(cfg)
}

fn train(cfg: &ExperimentConfig, method: Method) -> Result<RunArtifacts> {
    let (tr, te) = load_split(cfg)?;
    let run = train_loop(&cfg.train, cfg.env.feature_config(), &tr, &te, method)?;
    if let Some(e) = run.final_test() {
        log::info!(
            "{} final test accuracy {:.4}",
            method.name(),
            e.histogram.accuracy
        );
    }
    write_training(cfg, &run, &tr)
}

fn eval_table(method: Method, rows: &[(&str, &CaseHistogram)]) -> Result<String> {
    let evals: Vec<EvalRecord> = rows
        .iter()
        .map(|(split, h)| EvalRecord {
            step: 0,
            samples_seen: 0,
            split: split.to_string(),
            histogram: (*h).clone(),
        })
        .collect();
    report::eval_csv(method, &evals)
}

fn eval(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let test = load_test(cfg)?;
    if test.is_empty() {
        return Err(Error::Config("evaluation corpus is empty".into()));
    }
    let (g, v) = load_params(cfg, true)?;
    let (h, trs) = evaluate(
        &test,
        &g,
        &v,
        cfg.env.feature_config(),
        &cfg.train,
        cfg.run.method,
    )?;
    let mut w = Writer::new(&cfg.run.out_dir.join("eval"))?;
    w.put(
        "eval.csv",
        eval_table(cfg.run.method, &[("test", &h)])?.as_bytes(),
    )?;
    w.put(
        "transitions.jsonl",
        &jsonl(trs.iter().map(Transition::to_record))?,
    )?;
    let mut summary = format!("{}\n", report::SUMMARY_HEADER);
    summary += &report::summary_row(cfg.run.method.name(), cfg.train.seed, 0, 0, &h, &[])?;
    summary.push('\n');
    w.put("summary.csv", summary.as_bytes())?;
    log::info!("eval accuracy {:.4}", h.accuracy);
    w.finish(cfg)
}

fn audit_theory(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let test = load_test(cfg)?;
    let (g, v) = load_params(cfg, false)?;
    let fc = cfg.env.feature_config();
    let contexts = enumerate_contexts(&test)?;
    let mut w = Writer::new(&cfg.run.out_dir.join("audit"))?;

    let lv = LinearVerifier {
        params: &v,
        features: fc,
    };
    let vr = verifier_best_response_audit(&lv, &contexts)?;
    w.put("verifier_best_response.txt", vr.render().as_bytes())?;
    let mut rc = RolloutConfig::eval(fc, cfg.train.k);
    rc.stochastic_eval = true;
    rc.temperature = cfg.train.temperature;
    let gr = generator_dominance_audit(&g, &contexts, &rc, cfg.run.audit_samples, cfg.train.seed)?;
    w.put("generator_dominance.txt", gr.render().as_bytes())?;

    // closed-form KL best responses against exact-gradient bandits
    let mut kl = String::from(
        "beta,mode,s_x,sbar_z,target_p_sac,trained_p_sac,tv_verifier,target_p_revise,trained_p_revise,tv_generator,residual_phi,residual_theta\n",
    );
    for beta in [0.04, 0.5] {
        for (mode, mname) in [
            (RewardMode::Normalized, "normalized"),
            (RewardMode::Raw, "raw"),
        ] {
            for (s_x, sbar) in [(1u8, 0.3), (0u8, 0.9)] {
                let game = bandit_game(s_x, sbar, true, beta, mode);
                let c = &game.contexts[0];
                let tv = kl_best_response_target(&[0.5, 0.5], &game.verifier_utilities(c), beta)?;
                let tf = kl_best_response_target(&[0.5, 0.5], &game.generator_utilities(c), beta)?;
                let run = train_tabular(
                    &game,
                    &game.reference,
                    StepSchedule::Constant { eta: 0.5 },
                    4000,
                    GradientMode::Exact,
                    cfg.train.seed,
                    0.0,
                )?;
                let (pv, pa) = context_policies(&game, &run.last, 0)?;
                let (rf, rt) = game.stationarity_residual(&run.last)?;
                kl += &format!(
                    "{beta},{mname},{s_x},{sbar},{:.10},{:.10},{:.3e},{:.10},{:.10},{:.3e},{rf:.3e},{rt:.3e}\n",
                    tv[1],
                    pv[1],
                    total_variation(&tv, &pv),
                    tf[1],
                    pa[1],
                    total_variation(&tf, &pa),
                );
            }
        }
    }
    w.put("kl_best_response.csv", kl.as_bytes())?;

    let summary = format!(
        "verifier_contexts={}\nverifier_argmax_match_rate={:.10}\nverifier_mean_suboptimal_mass={:.10}\n\
         generator_contexts={}\ngenerator_excluded_ties={}\ngenerator_argmax_match_rate={:.10}\ngenerator_mean_suboptimal_mass={:.10}\n",
        vr.contexts,
        vr.argmax_match_rate,
        vr.mean_suboptimal_mass,
        gr.contexts,
        gr.excluded,
        gr.argmax_match_rate,
        gr.mean_suboptimal_mass
    );
    w.put("audit_summary.txt", summary.as_bytes())?;
    w.finish(cfg)
}

fn params_row(p: &theory::GameParams) -> String {
    p.flatten()
        .iter()
        .map(|x| format!("{x:.10}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn track_ode(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let r = &cfg.run;
    let game = tracking_game(r.track_beta);
    let init = game.reference.clone();
    let ode = ode_trajectory(&game, &init, r.track_window, r.track_dt, OdeMethod::Rk4)?;
    let schedule = StepSchedule::RobbinsMonro {
        c: r.track_c,
        t0: r.track_t0,
    };
    let mode = GradientMode::Sampled {
        batch: r.track_batch,
        estimator: Estimator::Counterfactual,
    };
    let mut w = Writer::new(&r.out_dir.join("tracking"))?;

    let mut table =
        String::from("seed,steps,final_time,sup_distance,residual_phi,residual_theta\n");
    let mut first = None;
    for &seed in &r.seeds {
        let run = train_tabular(
            &game,
            &init,
            schedule,
            r.track_steps,
            mode,
            seed,
            r.track_window,
        )?;
        let d = tracking_comparison(&run, &ode, r.track_window)?;
        let (rf, rt) = game.stationarity_residual(&run.last)?;
        let t_end: f64 = (0..run.steps).map(|t| schedule.eta(t)).sum();
        table += &format!(
            "{seed},{},{t_end:.6},{d:.10},{rf:.3e},{rt:.3e}\n",
            run.steps
        );
        log::info!("seed {seed}: sup distance {d:.4}, residual ({rf:.2e}, {rt:.2e})");
        first.get_or_insert(run);
    }
    w.put("tracking.csv", table.as_bytes())?;

    let head = "t,theta_0,theta_1,phi_0,phi_1\n";
    let every = ((0.1 / r.track_dt).round() as usize).max(1);
    let mut ode_csv = String::from(head);
    let mut ode_pts = Vec::new();
    for (i, s) in ode.states.iter().enumerate().step_by(every) {
        let t = i as f64 * ode.dt;
        ode_csv += &format!("{t:.6},{}\n", params_row(s));
        ode_pts.push((t, s.phi.weights[1] - s.phi.weights[0]));
    }
    w.put("ode.csv", ode_csv.as_bytes())?;

    let run = first.ok_or_else(|| Error::Config("run.seeds is empty".into()))?;
    let mut it_csv = String::from(head);
    let mut it_pts = Vec::new();
    for (t, p) in run.times.iter().zip(&run.iterates) {
        it_csv += &format!("{t:.6},{}\n", params_row(p));
        it_pts.push((*t, p.phi.weights[1] - p.phi.weights[0]));
    }
    w.put("iterates_first_seed.csv", it_csv.as_bytes())?;
    w.put(
        "tracking.svg",
        report::lines_svg(
            "generator logit gap: ode vs iterates",
            &[("ode", ode_pts), ("iterates", it_pts)],
        )
        .as_bytes(),
    )?;

    let ratios = perturbation_probe(&game, &run.last, 0.05, 5.0, cfg.train.seed)?;
    let mut pc = String::from("direction,distance_ratio\n");
    for (k, q) in ratios.iter().enumerate() {
        pc += &format!("{k},{q:.10}\n");
    }
    w.put("perturbation.csv", pc.as_bytes())?;
    w.finish(cfg)
}

/// Runs the configured command.
pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    match cfg.command()? {
        Command::GenCorpus => gen_corpus(cfg),
        Command::TrainDpa => train(cfg, Method::DpaGrpo),
        Command::TrainBaseline => train(cfg, Method::Baseline),
        Command::Eval => eval(cfg),
        Command::AuditTheory => audit_theory(cfg),
        Command::TrackOde => track_ode(cfg),
    }
}

/// Parses `args` (without the program name), applies `ARTIFACT_DIR`,
/// runs, and returns the process exit status.
pub fn main_with_args(args: &[String]) -> i32 {
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        println!("{USAGE}");
        return if args.is_empty() { 2 } else { 0 };
    }
    let result = ExperimentConfig::from_args(args).and_then(|mut cfg| {
        if let Some(dir) = std::env::var_os("ARTIFACT_DIR") {
            cfg.run.out_dir = PathBuf::from(dir);
        }
        run(&cfg)
    });
    match result {
        Ok(a) => {
            println!("{}", a.dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
