use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use injsim::audit::audit_text;
use injsim::engine::{run, run_with_baselines, RunError, RunOutput};
use injsim::scenario::{parse_scenario, Mode, Scenario};

#[derive(Parser)]
#[command(name = "injsim", version, about = "Injection-driven hybrid network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Per-tick time series.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Skip the pure-backbone and pure-ad-hoc comparison runs.
        #[arg(long)]
        no_baselines: bool,
    },
    /// Recompute a run's metrics from its trace and compare.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Run every scenario in a directory and collect one metrics table.
    Batch {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        #[arg(long)]
        no_baselines: bool,
    },
}

enum Failure {
    Scenario(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> ExitCode {
        match self {
            Failure::Scenario(_) => ExitCode::from(1),
            Failure::Runtime(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Scenario(m) | Failure::Runtime(m) => m,
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Scenario(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| Failure::Scenario(format!("{}: {e}", path.display())))
}

fn execute(s: &Scenario, baselines: bool) -> Result<RunOutput, Failure> {
    let out = if baselines { run_with_baselines(s) } else { run(s) };
    out.map_err(|e| match e {
        RunError::Scenario(e) => Failure::Scenario(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    })
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, mode, trace, metrics, series, no_baselines } => (|| {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(mode) = mode {
                s.mode = mode;
            }
            let out = execute(&s, !no_baselines)?;
            write(&trace, &out.trace_text())?;
            write(&metrics, &out.metrics.to_csv())?;
            if let Some(p) = series {
                write(&p, &out.series_text())?;
            }
            Ok(())
        })(),
        Command::Audit { trace, metrics } => (|| {
            let read = |p: &Path| fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())));
            let report = audit_text(&read(&trace)?, &read(&metrics)?).map_err(Failure::Runtime)?;
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Runtime(format!("audit failed with {} problem(s)", report.problems.len())))
            }
        })(),
        Command::Batch { dir, out, jobs, no_baselines } => batch(&dir, out.as_deref(), jobs.max(1), !no_baselines),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("injsim: {}", f.message());
            f.code()
        }
    }
}

fn batch(dir: &Path, out: Option<&Path>, jobs: usize, baselines: bool) -> Result<(), Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Scenario(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let scenarios: Vec<Scenario> = paths.iter().map(|p| load(p)).collect::<Result<_, _>>()?;

    let mut results: Vec<Option<Result<RunOutput, Failure>>> = (0..scenarios.len()).map(|_| None).collect();
    for (chunk_s, chunk_r) in scenarios.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_s.iter().map(|s| scope.spawn(move || execute(s, baselines))).collect();
            for (h, slot) in handles.into_iter().zip(chunk_r.iter_mut()) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(Failure::Runtime("worker panicked".into()))));
            }
        });
    }

    let mut table = String::new();
    for (i, r) in results.into_iter().enumerate() {
        let o = r.expect("every slot filled").map_err(|f| match f {
            Failure::Scenario(m) => Failure::Scenario(format!("{}: {m}", paths[i].display())),
            Failure::Runtime(m) => Failure::Runtime(format!("{}: {m}", paths[i].display())),
        })?;
        let csv = o.metrics.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if table.is_empty() {
            table.push_str(header);
            table.push('\n');
        }
        for l in lines {
            table.push_str(l);
            table.push('\n');
        }
    }
    match out {
        Some(p) => write(p, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}
