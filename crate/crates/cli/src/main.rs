use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hinfed::config::RunConfig;
use hinfed::dataset::{gen_synth, Dataset, SynthSpec};
use hinfed::eval::{edge_retention, perturbation_stats, Metrics, PerturbationStats};
use hinfed::fed::{publish_dataset, Checkpoint, Federation, RoundReport};
use hinfed::hin::partition;
use hinfed::verify::{default_fixtures, load_fixtures, run_suite};
use hinfed::Error;

const PUBLISHED_FILE: &str = "published.tsv";
const PERTURB_STATS_FILE: &str = "perturb_stats.json";
const METRICS_FILE: &str = "metrics.csv";
const SUMMARY_FILE: &str = "summary.json";
const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Parser)]
#[command(
    name = "hinfed",
    version,
    about = "Federated HIN recommendation with perturbed interaction publishing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted block-model dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Publish every user's perturbed interactions.
    Perturb {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run federated training.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Check the privacy bounds on enumerable instances.
    VerifyPrivacy {
        /// Directory of JSON instance lists; the built-in suite otherwise.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Edge retention of a published file against the true interactions.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        published: PathBuf,
    },
}

enum Failure {
    Lib(Error),
    /// The command ran but a check it performs did not hold.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Failure {
    Failure::Lib(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn synth(spec: &Path, out: &Path) -> Result<(), Failure> {
    let spec = SynthSpec::load(spec)?;
    gen_synth(&spec)?.save(out)?;
    println!("wrote dataset to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct PerturbSummary {
    users_published: usize,
    published_edges: usize,
    #[serde(flatten)]
    retention: PerturbationStats,
}

fn perturb(data: &Path, config: &Path, out: &Path) -> Result<(), Failure> {
    let dataset = Dataset::load(data)?;
    let config = RunConfig::load(config)?;
    let publication = publish_dataset(&dataset, &config)?;
    let (hin, schema) = (&dataset.hin, &dataset.schema);
    let mut body = String::new();
    let mut edges = 0;
    for adj in &publication.published {
        let items = adj.positives();
        edges += items.len();
        let names: Vec<&str> = items.iter().map(|&i| hin.node_name(schema.item_node(i))).collect();
        let _ = writeln!(
            body,
            "{}\t{}",
            hin.node_name(schema.user_node(adj.user)),
            names.join(",")
        );
    }
    let summary = PerturbSummary {
        users_published: publication.published.len(),
        published_edges: edges,
        retention: perturbation_stats(&publication.views, &publication.published)?,
    };
    create_dir(out)?;
    write_file(&out.join(PUBLISHED_FILE), &body)?;
    write_file(&out.join(PERTURB_STATS_FILE), &to_json(&summary)?)?;
    println!(
        "published {} users, {} edges, retention {}",
        summary.users_published, edges, summary.retention.proportion
    );
    Ok(())
}

fn parse_published(dataset: &Dataset, path: &Path) -> Result<Vec<(usize, Vec<usize>)>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (hin, schema) = (&dataset.hin, &dataset.schema);
    let bad = |line: usize, msg: String| {
        Failure::Lib(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    };
    let lookup = |name: &str, ty| {
        hin.node_index(name)
            .filter(|&n| hin.node_type(n) == ty)
            .and_then(|n| schema.local_index(n))
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (user, items) = line.split_once('\t').unwrap_or((line, ""));
        let u = lookup(user.trim(), schema.user_type()).ok_or_else(|| bad(n + 1, format!("unknown user {user:?}")))?;
        let mut list = Vec::new();
        for item in items.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            list.push(lookup(item, schema.item_type()).ok_or_else(|| bad(n + 1, format!("unknown item {item:?}")))?);
        }
        out.push((u, list));
    }
    Ok(out)
}

fn stats(data: &Path, published: &Path) -> Result<(), Failure> {
    let dataset = Dataset::load(data)?;
    let lists = parse_published(&dataset, published)?;
    let (views, _) = partition(&dataset.hin, &dataset.schema)?;
    let stats = edge_retention(&views, &lists)?;
    print!("{}", to_json(&stats)?);
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct TrainSummary {
    rounds_run: usize,
    final_round: usize,
    final_loss: f64,
    first_loss: f64,
    final_metrics: Option<Metrics>,
    best_hr10: f64,
    best_round: usize,
    clients: usize,
    evaluated_users: usize,
    raw_reads_after_bootstrap: usize,
}

fn train(data: &Path, config: &Path, out: &Path) -> Result<(), Failure> {
    let dataset = Dataset::load(data)?;
    let config = RunConfig::load(config)?;
    create_dir(out)?;
    let mut fed = Federation::bootstrap(&dataset, &config)?;
    let metrics_path = out.join(METRICS_FILE);
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let file = File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| Error::Io {
        path: metrics_path.clone(),
        source: e,
    };
    writeln!(csv, "round,loss,hr5,hr10,ndcg5,ndcg10").map_err(io)?;
    csv.flush().map_err(io)?;
    let reports = fed.train(|report, params| {
        let m = report.metrics;
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            report.round,
            report.loss,
            opt(m.map(|m| m.hr5)),
            opt(m.map(|m| m.hr10)),
            opt(m.map(|m| m.ndcg5)),
            opt(m.map(|m| m.ndcg10)),
        )
        .and_then(|_| csv.flush())
        .map_err(io)?;
        if m.is_some() {
            Checkpoint {
                config: config.clone(),
                round: report.round,
                params: params.clone(),
            }
            .save(&checkpoint_path)?;
        }
        Ok(())
    })?;
    drop(csv);
    // an early stop or zero rounds still leaves the final state on disk
    fed.checkpoint().save(&checkpoint_path)?;

    let last: Option<&RoundReport> = reports.last();
    let best = reports
        .iter()
        .filter_map(|r| r.metrics.map(|m| (m.hr10, r.round)))
        .fold(None, |acc: Option<(f64, usize)>, x| match acc {
            Some(a) if a.0 >= x.0 => Some(a),
            _ => Some(x),
        });
    let summary = TrainSummary {
        rounds_run: reports.len(),
        final_round: fed.server.round,
        final_loss: last.map_or(0.0, |r| r.loss),
        first_loss: reports.first().map_or(0.0, |r| r.loss),
        final_metrics: last.and_then(|r| r.metrics),
        best_hr10: best.map_or(0.0, |b| b.0),
        best_round: best.map_or(0, |b| b.1),
        clients: fed.clients.len(),
        evaluated_users: fed.split.users.len(),
        raw_reads_after_bootstrap: fed.raw_reads_since_bootstrap(),
    };
    write_file(&out.join(SUMMARY_FILE), &to_json(&summary)?)?;
    println!(
        "trained {} rounds; final hr10 {}",
        summary.rounds_run,
        summary
            .final_metrics
            .map_or(String::from("n/a"), |m| m.hr10.to_string())
    );
    Ok(())
}

fn evaluate(checkpoint: &Path, data: &Path, seed: u64) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    let dataset = Dataset::load(data)?;
    let config = RunConfig {
        seed,
        ..checkpoint.config
    };
    let mut fed = Federation::bootstrap(&dataset, &config)?;
    let fresh = &fed.server.params;
    if (fresh.num_users(), fresh.num_items()) != (checkpoint.params.num_users(), checkpoint.params.num_items()) {
        return Err(Failure::Check(
            "checkpoint does not match the dataset's users and items".into(),
        ));
    }
    fed.server.params = checkpoint.params;
    print!("{}", to_json(&fed.evaluate()?)?);
    Ok(())
}

fn verify_privacy(fixtures: Option<&Path>) -> Result<(), Failure> {
    let instances = match fixtures {
        Some(dir) => load_fixtures(dir)?,
        None => default_fixtures(),
    };
    let rows = run_suite(&instances)?;
    println!(
        "{:<12} {:<40} {:>14} {:>14} result",
        "stage", "instance", "max ratio", "bound"
    );
    let mut failed = 0;
    for row in &rows {
        let r = &row.report;
        if !r.pass {
            failed += 1;
        }
        println!(
            "{:<12} {:<40} {:>14.9} {:>14.9} {}",
            row.stage,
            row.instance,
            r.max_ratio,
            r.bound,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    println!("{} of {} checks passed", rows.len() - failed, rows.len());
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} privacy checks failed")));
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Perturb { data, config, out } => perturb(&data, &config, &out),
        Command::Train { data, config, out } => train(&data, &config, &out),
        Command::Evaluate { checkpoint, data, seed } => evaluate(&checkpoint, &data, seed),
        Command::VerifyPrivacy { fixtures } => verify_privacy(fixtures.as_deref()),
        Command::Stats { data, published } => stats(&data, &published),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
