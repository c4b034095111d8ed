use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flad::diagnostics::{
    default_grid, landscape_slice, random_direction, top_eigenpairs, EigenSettings,
};
use flad::io::{self, execute_run, mean_std, persist_run, RunConfig, RunRecord};
use flad::{verify, Error, Objective};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "flad",
    version,
    about = "Flatness-decomposition optimizers for continual learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set optimizer.rho=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to `run.output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this single seed instead of `run.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionKind {
    Eigen,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Joint training on all classes in one phase.
    Train(Common),
    /// Full class-incremental run per seed with Acc/AAA summary.
    Continual(Common),
    /// Grid over one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key to vary.
        #[arg(long, default_value = "run.batch_size")]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
        values: Vec<String>,
    },
    /// Spectrum, trace and Tr(HΣ) after every phase.
    Diagnose(Common),
    /// Loss slice around the final parameters.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
        dims: u8,
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, value_enum, default_value_t = DirectionKind::Eigen)]
        directions: DirectionKind,
    },
    /// Check analytic derivatives and metrics against independent references.
    VerifyOracles,
}

/// Exit status: 1 validation or IO, 2 numerical abort, 3 failed check.
enum Failure {
    Run(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Continual(c) => cmd_continual(&c),
        Command::Sweep {
            common,
            param,
            values,
        } => cmd_sweep(&common, &param, &values),
        Command::Diagnose(c) => cmd_diagnose(&c),
        Command::Landscape {
            common,
            dims,
            points,
            scale,
            directions,
        } => cmd_landscape(&common, dims as usize, points, scale, directions),
        Command::VerifyOracles => cmd_verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load(common: &Common, extra: &[String]) -> flad::Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = common.seed {
        overrides.push(format!("run.seeds=[{seed}]"));
    }
    match &common.config {
        Some(path) => io::load_config(path, &overrides),
        None => io::parse_config(
            &RunConfig::default().to_toml()?,
            Path::new("<defaults>"),
            &overrides,
        ),
    }
}

fn out_dir(common: &Common, config: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| config.run.output_dir.clone())
}

fn pool(jobs: Option<usize>) -> flad::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run every seed of `config` (in parallel) and persist each under `dir/seed_{s}`.
fn run_seeds(config: &RunConfig, dir: &Path, jobs: Option<usize>) -> flad::Result<Vec<RunRecord>> {
    let records: Vec<RunRecord> = pool(jobs)?.install(|| {
        config
            .run
            .seeds
            .par_iter()
            .map(|&s| execute_run(config, s).map(|(r, _)| r))
            .collect::<flad::Result<Vec<_>>>()
    })?;
    for r in &records {
        persist_run(r, &dir.join(format!("seed_{}", r.seed)))?;
    }
    Ok(records)
}

fn print_records(records: &[RunRecord]) {
    println!("{:>8} {:>8} {:>8}", "seed", "acc", "aaa");
    for r in records {
        println!("{:>8} {:>8.4} {:>8.4}", r.seed, r.acc, r.aaa);
    }
    let (acc, acc_sd) = mean_std(&records.iter().map(|r| r.acc).collect::<Vec<_>>());
    let (aaa, aaa_sd) = mean_std(&records.iter().map(|r| r.aaa).collect::<Vec<_>>());
    println!(
        "{:>8} {acc:.4} ± {acc_sd:.4} {aaa:.4} ± {aaa_sd:.4}",
        "mean"
    );
}

fn cmd_train(common: &Common) -> Outcome {
    let probe = load(common, &[])?;
    let classes = probe.dataset()?.train.classes();
    let config = load(
        common,
        &[
            "stream.phases=1".to_string(),
            format!("stream.classes_per_phase={classes}"),
        ],
    )?;
    let records = run_seeds(&config, &out_dir(common, &config), common.jobs)?;
    print_records(&records);
    Ok(())
}

fn cmd_continual(common: &Common) -> Outcome {
    let config = load(common, &[])?;
    let records = run_seeds(&config, &out_dir(common, &config), common.jobs)?;
    print_records(&records);
    Ok(())
}

fn cmd_sweep(common: &Common, param: &str, values: &[String]) -> Outcome {
    let dir = {
        let base = load(common, &[])?;
        out_dir(common, &base)
    };
    let configs = values
        .iter()
        .map(|v| load(common, &[format!("{param}={v}")]).map(|c| (v.clone(), c)))
        .collect::<flad::Result<Vec<_>>>()?;
    let jobs: Vec<(String, RunConfig, u64)> = configs
        .iter()
        .flat_map(|(v, c)| c.run.seeds.iter().map(move |&s| (v.clone(), c.clone(), s)))
        .collect();
    let records: Vec<(String, RunRecord)> = pool(common.jobs)?.install(|| {
        jobs.par_iter()
            .map(|(v, c, s)| execute_run(c, *s).map(|(r, _)| (v.clone(), r)))
            .collect::<flad::Result<Vec<_>>>()
    })?;
    let mut csv = String::from("param,value,seed,acc,aaa\n");
    for (v, r) in &records {
        persist_run(
            r,
            &dir.join(format!("{param}={v}"))
                .join(format!("seed_{}", r.seed)),
        )?;
        let _ = writeln!(csv, "{param},{v},{},{},{}", r.seed, r.acc, r.aaa);
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let summary = dir.join("sweep.csv");
    std::fs::write(&summary, csv).map_err(|e| Error::Io {
        path: summary,
        source: e,
    })?;
    println!("{:>12} {:>18} {:>18}", param, "acc", "aaa");
    for v in values {
        let group: Vec<&RunRecord> = records
            .iter()
            .filter(|(x, _)| x == v)
            .map(|(_, r)| r)
            .collect();
        let (a, asd) = mean_std(&group.iter().map(|r| r.acc).collect::<Vec<_>>());
        let (b, bsd) = mean_std(&group.iter().map(|r| r.aaa).collect::<Vec<_>>());
        println!("{v:>12} {a:>9.4} ± {asd:<6.4} {b:>9.4} ± {bsd:<6.4}");
    }
    Ok(())
}

fn cmd_diagnose(common: &Common) -> Outcome {
    let config = load(common, &["run.spectrum=true".to_string()])?;
    let dir = out_dir(common, &config);
    let records = run_seeds(&config, &dir, common.jobs)?;
    println!(
        "{:>6} {:>6} {:>12} {:>12} {:>12}",
        "seed", "phase", "lambda_max", "trace", "tr_h_sigma"
    );
    for r in &records {
        let mut csv = String::from("phase,lambda_max,trace,trace_se,tr_h_sigma\n");
        for (p, s) in r.spectra.iter().enumerate() {
            let top = s.eigenvalues.first().copied().unwrap_or(f64::NAN);
            let (t, se) = s
                .trace
                .map_or((f64::NAN, f64::NAN), |t| (t.mean, t.std_error));
            let h = s.tr_h_sigma.unwrap_or(f64::NAN);
            let _ = writeln!(csv, "{p},{top},{t},{se},{h}");
            println!("{:>6} {p:>6} {top:>12.5} {t:>12.5} {h:>12.5e}", r.seed);
        }
        let path = dir.join(format!("seed_{}", r.seed)).join("curvature.csv");
        std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn cmd_landscape(
    common: &Common,
    dims: usize,
    points: usize,
    scale: f64,
    kind: DirectionKind,
) -> Outcome {
    let config = load(common, &[])?;
    let seed = config.run.seeds[0];
    let dir = out_dir(common, &config);
    let (record, outcome) = execute_run(&config, seed)?;
    persist_run(&record, &dir)?;
    let split = config.dataset()?;
    let stream = config.stream(split.train.classes())?;
    let rows = split
        .train
        .indices_of(&stream.seen_classes(stream.len() - 1));
    let batch = split
        .train
        .batch(&rows, |y| stream.head_index(y).expect("streamed class"))?;
    let oracle = outcome.learner.oracle()?;
    let w = &outcome.learner.params;
    let (directions, tag) = match kind {
        DirectionKind::Eigen => {
            let settings = EigenSettings {
                k: dims,
                ..config.run.eigen
            };
            (
                top_eigenpairs(&oracle, w, &batch, settings, seed)?.eigenvectors,
                "eigen",
            )
        }
        DirectionKind::Random => (
            (0..dims as u64)
                .map(|i| random_direction(w, seed, i))
                .collect(),
            "random",
        ),
    };
    let slice = landscape_slice(
        &oracle,
        w,
        &directions,
        &default_grid(points),
        scale,
        &batch,
    )?;
    let stem = format!("landscape_{tag}_{dims}d");
    slice.write_csv(&dir.join(format!("{stem}.csv")))?;
    slice.write_svg(&dir.join(format!("{stem}.svg")))?;
    let center = oracle.loss(w, &batch)?;
    let missing = slice.losses.iter().filter(|l| l.is_none()).count();
    println!(
        "{stem}: center loss {center:.6}, {} points, {missing} missing",
        slice.losses.len()
    );
    Ok(())
}

fn cmd_verify() -> Outcome {
    let started = Instant::now();
    let checks = verify::run_all()?;
    for c in &checks {
        println!("{c}");
    }
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}
