mod conduct;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use escalate_core::criteria::calibrate_asymmetry;
use escalate_core::models::calibrate_skeleton;
use escalate_core::StudyConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "escalate", version, about = "Model-based dose-escalation designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study and write CSV, JSON and manifest files.
    Simulate {
        config: PathBuf,
        /// Directory for the reports; overrides the directories in the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (results do not depend on this).
        #[arg(long)]
        threads: Option<usize>,
        /// Do not print the summary table.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Asymmetry parameter a for target gamma and half-width theta.
    Calibrate {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        json: bool,
    },
    /// Skeleton from the indifference-interval recursion.
    CalibrateSkeleton {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        prior_mtd: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        json: bool,
    },
    /// Conduct a trial interactively on standard input.
    Conduct {
        /// Design JSON file.
        design: PathBuf,
    },
    /// Start the HTTP conduct service.
    Serve {
        #[arg(long, env = "ESCALATE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "ESCALATE_DATA_DIR", default_value = "escalate-data")]
        data_dir: PathBuf,
    },
}

type CliResult = Result<(), String>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate {
            config,
            out_dir,
            reps,
            seed,
            threads,
            quiet,
        } => simulate(&config, out_dir.as_deref(), reps, seed, threads, quiet),
        Command::Calibrate { gamma, theta, json } => calibrate(gamma, theta, json),
        Command::CalibrateSkeleton {
            m,
            prior_mtd,
            gamma,
            delta,
            json,
        } => skeleton(m, prior_mtd, gamma, delta, json),
        Command::Conduct { design } => conduct::run(&design),
        Command::Serve { port, host, data_dir } => serve(&host, port, data_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn output_path(configured: Option<&Path>, default_name: String, out_dir: Option<&Path>) -> PathBuf {
    let path = configured.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(default_name));
    match out_dir {
        Some(dir) => dir.join(path.file_name().expect("output path names a file")),
        None => path,
    }
}

fn write(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    std::fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn simulate(
    path: &Path,
    out_dir: Option<&Path>,
    reps: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    quiet: bool,
) -> CliResult {
    let mut config = StudyConfig::from_path(path).map_err(|e| e.to_string())?;
    if let Some(r) = reps {
        config.reps = r;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if threads.is_some() {
        config.parallelism = threads;
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "study".into());
    let csv_path = output_path(config.output.csv.as_deref(), format!("{stem}.csv"), out_dir);
    let json_path = output_path(config.output.json.as_deref(), format!("{stem}.json"), out_dir);
    let manifest_path = output_path(
        config.output.manifest.as_deref(),
        format!("{stem}.manifest.json"),
        out_dir,
    );

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let report = config.run().map_err(|e| e.to_string())?;
    let wall = clock.elapsed().as_secs_f64();

    write(&csv_path, &report.to_csv_string().map_err(|e| e.to_string())?)?;
    write(&json_path, &report.to_json_string().map_err(|e| e.to_string())?)?;
    let manifest = json!({
        "config": path.display().to_string(),
        "seed": config.seed,
        "reps": config.reps,
        "threads": config.parallelism,
        "escalate_version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "wall_time_secs": wall,
        "outputs": {
            "csv": csv_path.display().to_string(),
            "json": json_path.display().to_string(),
        },
        "warnings": report.warnings,
    });
    write(&manifest_path, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !quiet {
        println!("{:<14} {:<14} {:>5} {:>7} {:>7} {:>9}", "design", "scenario", "mtd", "pcs%", "dlt%", "accuracy");
        for c in &report.cells {
            println!(
                "{:<14} {:<14} {:>5} {:>7.2} {:>7.2} {:>9.4}",
                c.design, c.scenario, c.true_mtd, c.pcs, c.dlt_pct, c.accuracy
            );
        }
        println!();
        for s in &report.summary {
            let geo = s
                .geometric_mean_accuracy
                .map(|g| format!("{g:.4}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "{:<14} mean accuracy {:.4}  geometric {}  mean DLTs {:.3}  mean DLT% {:.2}",
                s.design, s.mean_accuracy, geo, s.mean_dlt_count, s.mean_dlt_pct
            );
        }
        println!("\n{} reps in {wall:.1} s -> {}, {}", config.reps, csv_path.display(), json_path.display());
    }
    Ok(())
}

fn calibrate(gamma: f64, theta: f64, as_json: bool) -> CliResult {
    let a = calibrate_asymmetry(gamma, theta).map_err(|e| e.to_string())?;
    if as_json {
        println!("{}", json!({"gamma": gamma, "theta": theta, "a": a}));
    } else {
        println!("{a}");
    }
    Ok(())
}

fn skeleton(m: usize, prior_mtd: usize, gamma: f64, delta: f64, as_json: bool) -> CliResult {
    let s = calibrate_skeleton(m, prior_mtd, gamma, delta).map_err(|e| e.to_string())?;
    if as_json {
        println!("{}", serde_json::to_string(&s).expect("skeleton serializes"));
    } else {
        let values: Vec<String> = s.values().iter().map(|v| v.to_string()).collect();
        println!("{}", values.join(" "));
    }
    Ok(())
}

fn serve(host: &str, port: u16, data_dir: PathBuf) -> CliResult {
    let store = escalate_service::Store::open(&data_dir).map_err(|e| format!("{}: {e}", data_dir.display()))?;
    let sessions = store.len();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| format!("cannot bind {host}:{port}: {e}"))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        eprintln!("listening on http://{addr} ({sessions} sessions from {})", data_dir.display());
        escalate_service::serve(listener, Arc::new(store)).await.map_err(|e| e.to_string())
    })
}
