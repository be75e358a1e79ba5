use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use enas_core::data::Split;
use enas_core::layers::Mode;
use enas_core::rng::child_rng;
use enas_core::space::{count_space, enumerate, sample_uniform, Genome, SpaceKind, SpaceSpec};
use enas_core::trainer::{
    ablation_frozen_controller, random_search_baseline, retrain_fixed, Evaluation, RecordPhase, RunRecord, Search, SearchTask,
};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfigFile;
use crate::metrics::MetricsSink;

/// Largest space `enumerate` will list.
pub const ENUMERATE_LIMIT: u64 = 10_000_000;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RESOLVED_FILE: &str = "config.resolved.toml";
pub const DERIVED_FILE: &str = "derived.genome";

/// `1234567890` as `1.23e9`.
pub fn format_count(n: &num_bigint::BigUint) -> String {
    let digits = n.to_string();
    if digits.len() <= 7 {
        return digits;
    }
    format!("{:.2e}", digits.parse::<f64>().expect("decimal digits"))
}

fn prepare_out(cfg: &RunConfigFile) -> Result<PathBuf> {
    let out = cfg.run.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
    std::fs::write(out.join(RESOLVED_FILE), cfg.to_toml())?;
    Ok(out)
}

/// Runs `$body` with `$task` bound to the configured task type.
macro_rules! with_task {
    ($cfg:expr, |$task:ident| $body:expr) => {
        if $cfg.is_lm() {
            let $task = $cfg.lm_task()?;
            $body
        } else {
            let $task = $cfg.image_task()?;
            $body
        }
    };
}

pub fn cmd_search(cfg: &RunConfigFile, resume: Option<&Path>, max_epochs: Option<usize>) -> Result<()> {
    with_task!(cfg, |task| search(cfg, task, resume, max_epochs))
}

fn search<T: SearchTask>(cfg: &RunConfigFile, task: T, resume: Option<&Path>, max_epochs: Option<usize>) -> Result<()> {
    let out = prepare_out(cfg)?;
    let mut s = Search::new(cfg.train_config()?, task)?;
    let metrics_path = out.join(METRICS_FILE);
    let mut sink = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.restore(&mut s)?;
            MetricsSink::resume(&metrics_path, ck.metric_rows, cfg.run.timestamps)?
        }
        None => MetricsSink::create(&metrics_path, cfg.run.timestamps)?,
    };
    let stop = max_epochs.map(|m| (s.epoch + m).min(s.config.epochs)).unwrap_or(s.config.epochs);
    let mut failure = None;
    while s.epoch < stop {
        let (shared, controller) = s.run_epoch(&mut |r| {
            if failure.is_none() {
                failure = sink.write(&r).err();
            }
        })?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        sink.flush()?;
        Checkpoint::capture(&s, sink.rows()).save(&out.join(CHECKPOINT_FILE))?;
        eprintln!(
            "epoch {:>4}  shared loss {:.4} ({} faults)  controller steps {}  baseline {:.4}",
            s.epoch,
            shared.mean_loss,
            shared.faults,
            controller.steps,
            s.baseline.value.unwrap_or(f64::NAN)
        );
    }
    if s.finished() {
        eprintln!("search finished after {} epochs; checkpoint in {}", s.epoch, out.join(CHECKPOINT_FILE).display());
    }
    Ok(())
}

fn load_search<T: SearchTask>(cfg: &RunConfigFile, task: T, checkpoint: &Path) -> Result<Search<T>> {
    let mut s = Search::new(cfg.train_config()?, task)?;
    Checkpoint::load(checkpoint)?.restore(&mut s)?;
    Ok(s)
}

pub fn cmd_derive(cfg: &RunConfigFile, checkpoint: &Path) -> Result<Genome> {
    with_task!(cfg, |task| derive(cfg, task, checkpoint))
}

fn derive<T: SearchTask>(cfg: &RunConfigFile, task: T, checkpoint: &Path) -> Result<Genome> {
    let out = prepare_out(cfg)?;
    let mut s = load_search(cfg, task, checkpoint)?;
    let mut sink = MetricsSink::append(&out.join(METRICS_FILE), cfg.run.timestamps)?;
    let mut rows = Vec::new();
    let d = s.derive(&mut |r| rows.push(r))?;
    for r in &rows {
        sink.write(r)?;
    }
    sink.flush()?;
    let text = d.genome.to_text();
    std::fs::write(out.join(DERIVED_FILE), &text)?;
    let mut table = String::from("candidate  reward      genome\n");
    for (i, (g, r)) in d.candidates.iter().enumerate() {
        let mark = if *g == d.genome { "*" } else { " " };
        table.push_str(&format!("{i:>9}{mark} {r:<10.4}  {}\n", g.id()));
    }
    eprint!("{table}");
    print!("{text}");
    Ok(d.genome)
}

/// Reads a genome file and checks it against the configured space.
pub fn read_genome(path: &Path, spec: &SpaceSpec) -> Result<Genome> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading genome {}", path.display()))?;
    Genome::parse(&text, Some(spec)).with_context(|| format!("in genome {}", path.display()))
}

fn eval_line(label: &str, e: &Evaluation) -> String {
    format!("{label:<8} loss {:.4}  {} {:.4}", e.loss, e.metric_name(), e.metric)
}

pub fn cmd_retrain(cfg: &RunConfigFile, genome: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let genome = match (genome, checkpoint) {
        (Some(g), _) => read_genome(g, &cfg.spec()?)?,
        (None, Some(c)) => cmd_derive(cfg, c)?,
        (None, None) => bail!("retrain needs --genome or a search --checkpoint"),
    };
    with_task!(cfg, |task| retrain(cfg, task, &genome))
}

fn retrain<T: SearchTask>(cfg: &RunConfigFile, task: T, genome: &Genome) -> Result<()> {
    let out = prepare_out(cfg)?;
    let mut sink = MetricsSink::append(&out.join(METRICS_FILE), cfg.run.timestamps)?;
    let mut rows = Vec::new();
    let r = retrain_fixed(genome, &task, &cfg.train_config()?, cfg.run.seed, &mut |row| rows.push(row))?;
    for row in &rows {
        sink.write(row)?;
    }
    sink.flush()?;
    println!("genome   {}", genome.id());
    println!("{}", eval_line("valid", &r.valid));
    if let Some(t) = &r.test {
        println!("{}", eval_line("test", t));
    }
    if r.faults > 0 {
        println!("skipped  {} steps on numeric faults", r.faults);
    }
    Ok(())
}

pub fn cmd_random(cfg: &RunConfigFile, trials: Option<usize>) -> Result<()> {
    with_task!(cfg, |task| random(cfg, task, trials.unwrap_or(cfg.random.trials)))
}

fn random<T: SearchTask>(cfg: &RunConfigFile, task: T, trials: usize) -> Result<()> {
    let out = prepare_out(cfg)?;
    let results = random_search_baseline(&task, &cfg.train_config()?, trials, cfg.run.seed)?;
    let mut sink = MetricsSink::append(&out.join(METRICS_FILE), cfg.run.timestamps)?;
    for (i, r) in results.iter().enumerate() {
        sink.write(&RunRecord {
            phase: RecordPhase::Random,
            step: i as u64,
            epoch: cfg.retrain.epochs,
            values: vec![("valid_loss", r.valid.loss), (r.valid.metric_name(), r.valid.metric)],
            genome: Some(r.genome.id()),
            seed: cfg.run.seed,
        })?;
    }
    sink.flush()?;
    for (i, r) in results.iter().enumerate() {
        println!("trial {i:>3}  {}  {}", r.genome.id(), eval_line("valid", &r.valid));
    }
    let mut sorted: Vec<&Evaluation> = results.iter().map(|r| &r.valid).collect();
    sorted.sort_by(|a, b| b.score().total_cmp(&a.score()));
    let metric = sorted[0].metric_name();
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2].metric
    } else {
        (sorted[sorted.len() / 2 - 1].metric + sorted[sorted.len() / 2].metric) / 2.0
    };
    println!("summary  best {metric} {:.4}  median {:.4}  worst {:.4}", sorted[0].metric, median, sorted[sorted.len() - 1].metric);
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfigFile, ensemble: Option<usize>) -> Result<()> {
    if cfg.is_lm() || cfg.space.kind != "macro" {
        bail!("the frozen-controller ablation runs on the macro image space");
    }
    let out = prepare_out(cfg)?;
    let task = cfg.image_task()?;
    let mut rows = Vec::new();
    let r = ablation_frozen_controller(&task, &cfg.train_config()?, ensemble.unwrap_or(cfg.ablate.ensemble), &mut |row| rows.push(row))?;
    let mut sink = MetricsSink::append(&out.join(METRICS_FILE), cfg.run.timestamps)?;
    for row in &rows {
        sink.write(row)?;
    }
    sink.flush()?;
    println!("single-sample accuracy  mean {:.4}", r.single_mean());
    println!("ensemble of {:<4}        {:.4}", r.single.len(), r.ensemble);
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfigFile, checkpoint: &Path, genome: &Path) -> Result<()> {
    let g = read_genome(genome, &cfg.spec()?)?;
    with_task!(cfg, |task| {
        let s = load_search(cfg, task, checkpoint)?;
        for split in [Split::Valid, Split::Test] {
            match s.task.evaluate(&g, split, Mode::Batch) {
                Ok(e) => println!("{}", eval_line(split.name(), &e)),
                Err(enas_core::Error::Empty(_)) => println!("{:<8} (empty)", split.name()),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    })
}

pub fn parse_spec(kind: &str, nodes: usize) -> Result<SpaceSpec> {
    Ok(SpaceSpec::new(SpaceKind::parse(kind)?, nodes)?)
}

/// Streams every genome of `spec`, one per line, as decision vectors.
pub fn cmd_enumerate(spec: &SpaceSpec, out: &mut impl Write) -> Result<()> {
    let count = count_space(spec);
    if count > ENUMERATE_LIMIT.into() {
        bail!("space {} {} holds {} genomes ({}); refusing to enumerate more than {ENUMERATE_LIMIT}", spec.kind().name(), spec.nodes(), count, format_count(&count));
    }
    for g in enumerate(spec) {
        writeln!(out, "{}", decisions_line(&g))?;
    }
    Ok(())
}

pub fn decisions_line(g: &Genome) -> String {
    g.to_decisions().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn cmd_sample(spec: &SpaceSpec, n: usize, seed: u64, out: &mut impl Write) -> Result<()> {
    let mut rng = child_rng(seed, "sample");
    for _ in 0..n {
        let g = sample_uniform(spec, &mut rng);
        writeln!(out, "{}", decisions_line(&g))?;
    }
    Ok(())
}
