use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use echoweight::config::RunConfig;
use echoweight::corpus::{corpus_stats, load_corpus, Corpus, CorpusPaths, InteractionMatrix, StatsReport};
use echoweight::eval::{self, ExperimentGrid, Prepared, ResultTable, SeedArtifacts};
use echoweight::model;
use echoweight::participation::Profiles;
use echoweight::synth;
use echoweight::weighting::{self, WeightVector};

#[derive(Parser, Debug)]
#[command(name = "echoweight", version, about = "Participation-aware re-weighting for fake news detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and generator seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for every output file (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus directory; overrides `corpus` in the config.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus and print dataset statistics.
    Ingest(Common),
    /// Participation profiles and the ternary composition CSV.
    Profile(Common),
    /// Silence scores, factors and the edge re-weighted matrix.
    Weigh(Common),
    /// Generate a synthetic corpus.
    Synth(Common),
    /// Train and evaluate one condition on one split.
    Train(Common),
    /// Run the full experiment grid.
    Grid(Common),
    /// Render a result table CSV as text.
    Report {
        #[command(flatten)]
        common: Common,
        /// Result table CSV written by `grid`.
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Profile(_) => "profile",
            Command::Weigh(_) => "weigh",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Grid(_) => "grid",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Ingest(c)
            | Command::Profile(c)
            | Command::Weigh(c)
            | Command::Synth(c)
            | Command::Train(c)
            | Command::Grid(c) => c,
            Command::Report { common, .. } => common,
        }
    }
}

/// A command context: resolved config plus the run directory.
struct Run {
    config: RunConfig,
    out: PathBuf,
}

impl Run {
    fn new(cmd: &Command) -> Result<Self> {
        let common = cmd.common();
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            config = config.with_seed(s);
        }
        if let Some(c) = &common.corpus {
            config.corpus = Some(c.clone());
        }
        config.validate()?;
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(cmd.name()));
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        config.write_resolved(&out)?;
        Ok(Run { config, out })
    }

    fn corpus(&self) -> Result<Corpus> {
        let dir = self
            .config
            .corpus
            .as_ref()
            .ok_or_else(|| echoweight::Error::Config("no corpus given (use --corpus or `corpus` in the config)".into()))?;
        let (corpus, report) = load_corpus(&CorpusPaths::in_dir(dir))?;
        if report.dropped() > 0 || report.duplicate_events > 0 {
            eprintln!(
                "note: dropped {} events from unknown users, {} from unobservable users, {} duplicates",
                report.dropped_unknown_user, report.dropped_unobservable_user, report.duplicate_events
            );
        }
        Ok(corpus)
    }

    fn profiles(&self, corpus: &Corpus) -> Profiles {
        Profiles::compute(corpus, &self.config.thresholds, self.config.execution)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// `41738` -> `41,738`.
fn grouped(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn render_stats(s: &StatsReport) -> String {
    format!(
        "news          real {}  fake {}  total {}\n\
         interactions  lurkers {}  engagers {}  contributors {}  total {}\n\
         comments      {}\n",
        grouped(s.news.real),
        grouped(s.news.fake),
        grouped(s.news.total),
        grouped(s.interactions.lurkers),
        grouped(s.interactions.engagers),
        grouped(s.interactions.contributors),
        grouped(s.interactions.total),
        grouped(s.comments),
    )
}

fn ingest(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let stats = corpus_stats(&corpus, &run.profiles(&corpus));
    run.write_json("stats.json", &stats)?;
    print!("{}", render_stats(&stats));
    Ok(())
}

fn profile(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let profiles = run.profiles(&corpus);
    let mut w = run.create("profiles.jsonl")?;
    profiles.write_jsonl(&mut w)?;
    w.flush()?;
    let rows = eval::export_ternary(&corpus, &profiles, &run.out.join("ternary.csv"))?;
    let sizes = profiles.group_sizes();
    println!(
        "users: {} lurkers, {} engagers, {} contributors; ternary rows: {rows}",
        sizes.lurkers, sizes.engagers, sizes.contributors
    );
    Ok(())
}

fn weigh(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let profiles = run.profiles(&corpus);
    let w = &run.config.weighting;
    let matrix = InteractionMatrix::binary(&corpus);
    // no split exists here, so the norm always covers every news item
    let wv: WeightVector = weighting::weight_vector(&matrix, &profiles, &w.coefficients, w.alpha, w.norm_kind)?;
    let weighted = weighting::edge_reweight(&matrix, &wv)?;

    let mut table = String::from("news_id,omega,factor\n");
    for (i, id) in matrix.news_ids().iter().enumerate() {
        table.push_str(&format!("{id},{},{}\n", wv.omega[i], wv.factor(i)));
    }
    fs::write(run.out.join("weights.csv"), &table)?;
    run.write_json("weight_vector.json", &wv)?;
    let mut t = run.create("weighted_matrix.csv")?;
    weighted.write_triplets(&mut t)?;
    t.flush()?;
    print!("{table}");
    Ok(())
}

fn synth_cmd(run: &Run) -> Result<()> {
    let (corpus, truth) = synth::generate(&run.config.synth)?;
    synth::write_synthetic(&run.out, &corpus, &truth)?;
    println!(
        "generated {} news, {} users, {} interactions into {}",
        corpus.news.len(),
        corpus.users.len(),
        corpus.interactions.len(),
        run.out.display()
    );
    Ok(())
}

fn train_cmd(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let settings = run.config.settings();
    let condition = run.config.train_condition;
    let exec = run.config.execution;
    let prepared = Prepared::new(&corpus, &settings, exec)?;
    let seed_art = SeedArtifacts::new(
        &corpus,
        &prepared,
        &settings,
        run.config.grid.split_ratio,
        settings.train.seed,
        exec,
    )?;
    // the split uses the run seed; a zero base seed makes training use it too
    let cell_settings = eval::PipelineSettings {
        train: model::TrainConfig { seed: 0, ..settings.train },
        ..settings.clone()
    };
    let alpha = condition.uses_alpha().then_some(settings.weighting.alpha);
    let trained = eval::train_cell(&prepared, &seed_art, &cell_settings, condition, alpha)?;
    let (cell, params, train_cfg) = (&trained.result, &trained.params, &trained.config);
    let log = &cell.log;
    model::save_checkpoint(&run.out.join("model.ckpt"), params, train_cfg)?;
    let mut w = run.create("train_log.csv")?;
    log.write_csv(&mut w)?;
    w.flush()?;
    run.write_json(
        "metrics.json",
        &serde_json::json!({
            "condition": condition,
            "alpha": alpha,
            "seed": settings.train.seed,
            "train_size": seed_art.split.train.len(),
            "test_size": seed_art.split.test.len(),
            "test_accuracy": cell.test_accuracy,
            "best_epoch": log.best_epoch,
            "best_val_accuracy": log.best_val_accuracy,
            "epochs_run": log.epochs.len(),
        }),
    )?;
    println!(
        "{condition}: test accuracy {:.4} (best epoch {}, {} epochs run)",
        cell.test_accuracy,
        log.best_epoch,
        log.epochs.len()
    );
    Ok(())
}

fn grid_cmd(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let grid: &ExperimentGrid = &run.config.grid;
    let cells = eval::run_cells(&corpus, grid, &run.config.settings(), run.config.execution)?;
    let table = ResultTable::from_cells(grid, &cells);
    let mut w = run.create("results.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let mut w = run.create("cells.csv")?;
    eval::write_cells_csv(&cells, &mut w)?;
    w.flush()?;
    let text = table.render_text();
    fs::write(run.out.join("results.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn report(input: &Path) -> Result<()> {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let table = ResultTable::read_csv(BufReader::new(f))?;
    print!("{}", table.render_text());
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    if let Command::Report { input, .. } = cmd {
        return report(input);
    }
    let run = Run::new(cmd)?;
    match cmd {
        Command::Ingest(_) => ingest(&run),
        Command::Profile(_) => profile(&run),
        Command::Weigh(_) => weigh(&run),
        Command::Synth(_) => synth_cmd(&run),
        Command::Train(_) => train_cmd(&run),
        Command::Grid(_) => grid_cmd(&run),
        Command::Report { .. } => unreachable!(),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<echoweight::Error>())
        .is_some_and(|e| e.is_validation());
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
