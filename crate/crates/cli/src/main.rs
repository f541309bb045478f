mod args;
mod error;
mod manifest;
mod run;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use log::info;

use args::{Cli, Command};
use error::{CliError, CliResult};
use manifest::{default_path, digest_file, sha256_hex, RunManifest};

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Ok(v) = std::env::var("LCAL_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("LCAL_THREADS must be a positive integer, got {v:?}")))?;
        return Ok(Some(n));
    }
    Ok(flag)
}

fn init_pool(threads: usize) -> CliResult<()> {
    if threads == 0 {
        return Err(CliError::Usage("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn print_stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn record(cli: &Cli, command: Command, threads: usize) -> CliResult<()> {
    let start = Instant::now();
    let outcome = run::run(&command)?;
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(text) = &outcome.stdout {
        print_stdout(text);
    }
    let manifest = RunManifest {
        tool: "lcal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: command.seed(),
        threads,
        inputs: outcome.inputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
        outputs: outcome.outputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
        stdout_sha256: outcome.stdout.as_deref().map(|s| sha256_hex(s.as_bytes())),
        wall_clock_seconds: elapsed,
        command,
    };
    let path = match &cli.manifest {
        Some(p) => p.clone(),
        None => default_path(&manifest.command, &outcome.outputs),
    };
    manifest.write(&path)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn replay(path: &Path) -> CliResult<()> {
    let m = RunManifest::read(path)?;
    if matches!(m.command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay manifest cannot itself be replayed".into()));
    }
    for d in &m.inputs {
        let now = digest_file(&d.path)?;
        if now.sha256 != d.sha256 {
            return Err(CliError::Data(format!("input {} changed since the recorded run", d.path.display())));
        }
    }
    let outcome = run::run(&m.command)?;
    let mut mismatches = Vec::new();
    for d in &m.outputs {
        if digest_file(&d.path)?.sha256 != d.sha256 {
            mismatches.push(d.path.display().to_string());
        }
    }
    let stdout = outcome.stdout.as_deref().map(|s| sha256_hex(s.as_bytes()));
    if stdout != m.stdout_sha256 {
        mismatches.push("<stdout>".into());
    }
    let summary = serde_json::json!({
        "command": m.command.name(),
        "outputs": m.outputs.len() + usize::from(m.stdout_sha256.is_some()),
        "identical": mismatches.is_empty(),
        "mismatches": mismatches,
    });
    print_stdout(&format!("{}\n", serde_json::to_string(&summary)?));
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("replay differs in {}", mismatches.join(", "))))
    }
}

fn main_inner(cli: Cli) -> CliResult<()> {
    let requested = thread_count(cli.threads)?;
    let mut command = cli.command.clone();
    command.absolutize();
    match &command {
        Command::Replay(a) => {
            let m = RunManifest::read(&a.manifest)?;
            init_pool(requested.unwrap_or(m.threads))?;
            replay(&a.manifest)
        }
        _ => {
            let threads = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            init_pool(threads)?;
            record(&cli, command, threads)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("LCAL_LOG").init();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
