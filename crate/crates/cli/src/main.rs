//! `affordance`: generate data, train, evaluate and inspect affordance models.

mod run_args;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use affordance_core::dataset::synth::{generate, SynthConfig};
use affordance_core::dataset::{load_scene, Dataset, Manifest};
use affordance_core::harness::{
    check_gradients, evaluate, evaluate_kb, predict, sweep_steps, train, AffordanceModel, EvalReport, GradcheckConfig,
    LogEvent, SplitName, UnitStatus, DEFAULT_SWEEP,
};
use affordance_core::labels::Action;
use affordance_core::metrics::ReportTable;

use run_args::RunArgs;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "affordance",
    version,
    about = "Scene-dependent action-object affordance reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a stratified split.
    GenData(GenDataArgs),
    /// Replace the dataset's split.
    Split(SplitArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or the KB baseline, on a split.
    Eval(EvalArgs),
    /// Predict relationships and sentences for scenes.
    Predict(PredictArgs),
    /// Train once per propagation step count and tabulate the results.
    SweepT(SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Tabulate saved evaluation reports.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator config file; flags below override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write the effective generator config here.
    #[arg(long, value_name = "FILE")]
    dump_config: Option<PathBuf>,
    /// Start from the two-hop occupancy preset.
    #[arg(long)]
    radius_two: bool,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    fractions: Vec<f64>,
}

#[derive(clap::Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON training log; `-` for stderr.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "kb")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the knowledge-base baseline instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    kb: bool,
    /// Actions for the KB baseline.
    #[arg(long, value_delimiter = ',', default_value = "sit,run,grasp")]
    actions: Vec<Action>,
    #[arg(long, default_value = "test")]
    split: SplitName,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene ids; all scenes of the dataset when omitted.
    #[arg(long = "scene")]
    scenes: Vec<String>,
    /// Write predictions here (one JSON object per line) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "t", value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
    ts: Vec<usize>,
    /// Write the table as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line-delimited JSON training log; `-` for stderr.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    #[arg(long, default_value_t = 6)]
    hidden: usize,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Evaluation report files written by `eval --out`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Print the table as JSON instead of text.
    #[arg(long)]
    json: bool,
}

/// Bad invocation or config; exits with the usage code.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn fractions(v: &[f64]) -> Result<[f64; 3]> {
    match v {
        &[train, val, test] => Ok([train, val, test]),
        _ => bail!(Usage(format!(
            "--fractions takes train,val,test; got {} values",
            v.len()
        ))),
    }
}

/// Event sink for `--log`: a file, stderr, or nothing. The first write
/// error is kept and reported by [`Log::finish`].
struct Log {
    out: Option<Box<dyn Write>>,
    error: Option<std::io::Error>,
}

impl Log {
    fn open(path: Option<&Path>) -> Result<Self> {
        let out: Option<Box<dyn Write>> = match path {
            None => None,
            Some(p) if p == Path::new("-") => Some(Box::new(std::io::stderr())),
            Some(p) => Some(Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))),
        };
        Ok(Log { out, error: None })
    }

    fn event(&mut self, e: &LogEvent) {
        let (Some(w), None) = (&mut self.out, &self.error) else {
            return;
        };
        let written = serde_json::to_writer(&mut *w, e)
            .map_err(std::io::Error::from)
            .and_then(|_| w.write_all(b"\n"));
        self.error = written.err();
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e).context("writing log");
        }
        if let Some(w) = &mut self.out {
            w.flush().context("flushing log")?;
        }
        Ok(())
    }
}

fn gen_data(a: GenDataArgs) -> Result<u8> {
    let mut config = match (&a.config, a.radius_two) {
        (Some(path), false) => read_json(path).map_err(|e| Usage(format!("{e:#}")))?,
        (Some(_), true) => bail!(Usage("--config and --radius-two are exclusive".into())),
        (None, true) => SynthConfig::radius_two(),
        (None, false) => SynthConfig::default(),
    };
    if let Some(n) = a.scenes {
        config.scenes = n;
    }
    if let Some(d) = a.feature_dim {
        config.feature_dim = d;
    }
    if let Some(path) = &a.dump_config {
        write_json(path, &config)?;
    }
    let mut data = generate(&config, a.seed)?;
    data.assign_split(fractions(&a.fractions)?, a.seed)?;
    data.save(&a.out)?;
    let s = data.split()?;
    println!(
        "wrote {} scenes to {} (train {}, val {}, test {})",
        data.scenes.len(),
        a.out.display(),
        s.train.len(),
        s.val.len(),
        s.test.len()
    );
    Ok(0)
}

fn split(a: SplitArgs) -> Result<u8> {
    let mut data = Dataset::load(&a.data)?;
    let s = data.assign_split(fractions(&a.fractions)?, a.seed)?;
    write_json(&a.data.join("splits.json"), s)?;
    println!("train {}, val {}, test {}", s.train.len(), s.val.len(), s.test.len());
    Ok(0)
}

fn train_cmd(a: TrainArgs) -> Result<u8> {
    let config = a.run.resolve()?;
    let data = Dataset::load(&a.data)?;
    let mut log = Log::open(a.log.as_deref())?;
    let outcome = train(&config, &data, |e| log.event(e))?;
    log.finish()?;
    outcome.model.save(&a.out)?;
    for u in &outcome.units {
        println!("{}", serde_json::to_string(u)?);
        if let UnitStatus::Diverged { epoch, detail } = &u.status {
            eprintln!(
                "unit {} diverged in epoch {epoch} ({detail}); kept epoch {}",
                u.unit, u.selected_epoch
            );
        }
    }
    Ok(if outcome.diverged() { EXIT_NUMERIC } else { 0 })
}

/// A report table column: header and the value it reads from a report.
type Column = (String, Box<dyn Fn(&EvalReport) -> Option<f64>>);

fn relationship_table(reports: &[(String, EvalReport)]) -> ReportTable {
    let mut columns: Vec<Column> = Vec::new();
    let actions: std::collections::BTreeSet<Action> = reports
        .iter()
        .flat_map(|(_, r)| r.relationship.keys().copied())
        .collect();
    for a in actions {
        columns.push((
            format!("{a} mAcc"),
            Box::new(move |r| r.relationship.get(&a).map(|x| x.macc)),
        ));
        columns.push((
            format!("{a} mAcc-E"),
            Box::new(move |r| r.relationship.get(&a).map(|x| x.macc_e)),
        ));
    }
    let caption: std::collections::BTreeSet<Action> = reports
        .iter()
        .flat_map(|(_, r)| r.explanation.keys().chain(r.consequence.keys()).copied())
        .collect();
    for a in caption {
        for (task, explanation) in [("expl", true), ("cons", false)] {
            let pick = move |r: &EvalReport| {
                if explanation {
                    r.explanation.get(&a).cloned()
                } else {
                    r.consequence.get(&a).cloned()
                }
            };
            columns.push((
                format!("{a} {task} BLEU-4"),
                Box::new(move |r| pick(r).map(|c| c.bleu4)),
            ));
            columns.push((
                format!("{a} {task} ROUGE-L"),
                Box::new(move |r| pick(r).map(|c| c.rouge_l)),
            ));
            columns.push((
                format!("{a} {task} CIDEr-D"),
                Box::new(move |r| pick(r).map(|c| c.cider_d)),
            ));
        }
    }
    let split = reports.first().map_or("", |(_, r)| match r.metadata.split {
        SplitName::Train => "train split",
        SplitName::Val => "val split",
        SplitName::Test => "test split",
    });
    let mut table = ReportTable::new(split, columns.iter().map(|(n, _)| n.clone()).collect());
    for (label, r) in reports {
        table.push(label.clone(), columns.iter().map(|(_, f)| f(r)).collect());
    }
    table
}

fn eval(a: EvalArgs) -> Result<u8> {
    let data = Dataset::load(&a.data)?;
    let report = match &a.checkpoint {
        Some(path) => evaluate(&AffordanceModel::load(path)?, &data, a.split)?,
        None => evaluate_kb(&data, a.split, &a.actions)?,
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    let label = report.metadata.predictor.clone();
    print!("{}", relationship_table(&[(label, report)]).to_text());
    Ok(0)
}

fn predict_cmd(a: PredictArgs) -> Result<u8> {
    let model = AffordanceModel::load(&a.checkpoint)?;
    let manifest: Manifest = read_json(&a.data.join("dataset.json"))?;
    let ids = if a.scenes.is_empty() {
        manifest.scenes.clone()
    } else {
        a.scenes
    };
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    for id in &ids {
        let scene = load_scene(&a.data, id, &manifest)?;
        serde_json::to_writer(&mut out, &predict(&model, &scene)?)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(0)
}

fn sweep(a: SweepArgs) -> Result<u8> {
    let config = a.run.resolve()?;
    let data = Dataset::load(&a.data)?;
    let mut log = Log::open(a.log.as_deref())?;
    let result = sweep_steps(&config, &data, &a.ts, |label, e| {
        log.event(&LogEvent {
            metric: format!("{label}/{}", e.metric),
            ..e.clone()
        })
    })?;
    log.finish()?;
    if let Some(out) = &a.out {
        write_json(out, &result.table)?;
    }
    print!("{}", result.table.to_text());
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let config = GradcheckConfig {
        seed: a.seed,
        nodes: a.nodes,
        steps: a.steps,
        hidden: a.hidden,
        ..GradcheckConfig::default()
    };
    let summary = check_gradients(&config)?;
    for (part, report) in [("graph network", &summary.graph_network), ("decoder", &summary.decoder)] {
        let worst = report.worst().map_or("-", |p| p.name.as_str());
        println!("{part}: max rel err {:.3e} (worst {worst})", report.max_rel_err());
    }
    Ok(if summary.passed() {
        println!("PASS");
        0
    } else {
        println!("FAIL");
        EXIT_NUMERIC
    })
}

fn report(a: ReportArgs) -> Result<u8> {
    let mut reports = Vec::new();
    for path in &a.reports {
        let r: EvalReport = read_json(path)?;
        let stem = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        reports.push((format!("{stem} ({})", r.metadata.predictor), r));
    }
    let table = relationship_table(&reports);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.to_text());
    }
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<affordance_core::Error>() {
            return e.exit_code() as u8;
        }
    }
    2
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

/// The error chain joined by `: `, skipping causes already spelled out by
/// the message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict_cmd(a),
        Command::SweepT(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
