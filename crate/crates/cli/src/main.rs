//! `pstrat`: command-line front end.
//!
//! Every run writes `report.json` (deterministic given argv and inputs)
//! and `run_meta.json` (timing and thread count) into `--out`. Exit codes:
//! 0 success, 2 invalid input or configuration, 3 estimation failure.
//! Failures print `error: <TypedName>: <message>` on stderr.

mod args;
mod commands;
mod config;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use pstrat_core::Error;
use serde_json::json;

use args::Cli;

const EXIT_VALIDATION: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {}: {e}", e.name());
    ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_ESTIMATION })
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("PSTRAT_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("PSTRAT_SEED=`{s}` is not a non-negative integer"))),
        Err(_) => Ok(None),
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Error> {
    let p = dir.join(name);
    std::fs::write(&p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let raw: Vec<String> = std::env::args().collect();
    let argv = match config::expand(raw.clone()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cmd = &cli.command;
    let run = cmd.run_args();

    if let Some(t) = run.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return fail(&Error::InvalidConfig(format!("--threads {t}: {e}")));
        }
    }
    let seed = match resolve_seed(run.seed) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let out = match commands::run(cmd, seed) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };

    if let Err(e) = std::fs::create_dir_all(&run.out) {
        return fail(&Error::Io(format!("{}: {e}", run.out.display())));
    }
    let artifacts: Vec<&str> = out.artifacts.iter().map(|(n, _)| n.as_str()).collect();
    let report = json!({
        "schema_version": 1,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": cmd.name(),
        "seed": seed,
        "config": cmd,
        "reports": out.reports,
        "details": out.details,
        "artifacts": artifacts,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    let result = write(&run.out, "report.json", text.as_bytes())
        .and_then(|_| out.artifacts.iter().try_for_each(|(n, b)| write(&run.out, n, b)));
    if let Err(e) = result {
        return fail(&e);
    }

    let meta = json!({
        "command": cmd.name(),
        "argv": raw,
        "started_unix_seconds": SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64() - started.elapsed().as_secs_f64())
            .unwrap_or(f64::NAN),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
    });
    if let Err(e) = write(&run.out, "run_meta.json", serde_json::to_string_pretty(&meta).unwrap().as_bytes()) {
        return fail(&e);
    }

    for r in &out.reports {
        match (r.se, r.ci) {
            (Some(se), Some([lo, hi])) => println!("{}: {} = {:.6} (SE {:.6}, CI [{:.6}, {:.6}])", r.method, r.estimand, r.point, se, lo, hi),
            (_, Some([lo, hi])) => println!("{}: {} = {:.6} (CI [{:.6}, {:.6}])", r.method, r.estimand, r.point, lo, hi),
            _ => println!("{}: {} = {:.6}", r.method, r.estimand, r.point),
        }
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
    }
    println!("wrote {}", run.out.join("report.json").display());
    ExitCode::SUCCESS
}
