use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgMatches};

use pamlab::cli::{error_line, exit_code, run, Command};
use pamlab::config::{RunConfig, KEYS, WORKERS_ENV};
use pamlab::{Error, Result};

const COMMANDS: &[(&str, &str)] = &[
    ("variational", "solve the discretized variational problem and check its intensity scaling"),
    ("fk", "Feynman-Kac Monte Carlo moments E u^n"),
    ("simulate", "Lp norms of the truncated chaos solution"),
    ("hyper", "hypercontractive comparison of chaos solutions"),
    ("report", "predicted growth rates next to both engines, plus hypercontractive margins"),
    ("rates", "closed-form rate calculators"),
];

fn app() -> clap::Command {
    let subcommands = COMMANDS.iter().map(|(name, about)| {
        let mut c = clap::Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .help("key = value configuration file; flags override it"),
        );
        for (key, help) in KEYS {
            let flag: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
            c = c.arg(Arg::new(*key).long(flag).value_name("VALUE").help(*help));
        }
        c
    });
    clap::Command::new("pamlab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Moment asymptotics of the parabolic Anderson model")
        .subcommand_required(true)
        .subcommands(subcommands)
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidParameter(format!("cannot read {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.resolve_workers(std::env::var(WORKERS_ENV).ok().as_deref())?;
    Ok(cfg)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn main_inner() -> Result<()> {
    let matches = app().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command: Command = name.parse()?;
    let cfg = resolve(sub)?;
    let out = run(command, &cfg)?;
    match &cfg.output {
        Some(path) => {
            write(path, &out.table)?;
            write(&path.with_extension("summary.txt"), out.summary.as_bytes())?;
            if let Some(plot) = &out.plotdata {
                write(&path.with_extension("plot.csv"), plot)?;
            }
            print!("{}", out.summary);
        }
        None => {
            print!("{}", String::from_utf8_lossy(&out.table));
            eprint!("{}", out.summary);
        }
    }
    if let (Some(path), Some(grid)) = (&cfg.var_maximizer, &out.maximizer) {
        write(path, grid)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
