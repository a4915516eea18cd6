//! Subcommand dispatch, shared by the binary and the tests.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::chaos::{
    build_kernels, build_noise, estimate_norms, hypercontractivity_test, second_moment_exact, KernelOptions,
};
use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::feynman_kac::estimate_moment;
use crate::model::{hypercontract_map, lyapunov_prediction, time_rate_exponent, white_noise_rate};
use crate::report::{build_report, emit_plotdata, num, table_writer, Report, CHAOS_STREAM, FK_STREAM, HYPER_STREAM};
use crate::rng::{with_workers, StreamKey};
use crate::variational::{scaling_check, solve};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Variational,
    Fk,
    Simulate,
    Hyper,
    Report,
    Rates,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Variational => "variational",
            Command::Fk => "fk",
            Command::Simulate => "simulate",
            Command::Hyper => "hyper",
            Command::Report => "report",
            Command::Rates => "rates",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "variational" => Command::Variational,
            "fk" => Command::Fk,
            "simulate" => Command::Simulate,
            "hyper" => Command::Hyper,
            "report" => Command::Report,
            "rates" => Command::Rates,
            other => return Err(invalid(format!("unknown command '{other}'"))),
        })
    }
}

/// Everything a run produces, before it is written anywhere.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Echoed configuration plus the main table.
    pub table: Vec<u8>,
    pub summary: String,
    /// Long-format plot data (`report` only).
    pub plotdata: Option<Vec<u8>>,
    /// Flat maximizer grid (`variational` with `var_maximizer` set).
    pub maximizer: Option<Vec<u8>>,
    pub report: Option<Report>,
}

/// Process exit code for an error: 2 configuration, 4 resource cap, 3 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => 2,
        Error::ResourceCap { .. } => 4,
        _ => 3,
    }
}

/// One-line error message for stderr.
pub fn error_line(e: &Error) -> String {
    let kind = match exit_code(e) {
        2 => "config",
        4 => "resource_cap",
        _ => "engine",
    };
    let msg = e.to_string().replace('\n', " ");
    format!("error: kind={kind} code={} message=\"{}\"", exit_code(e), msg.replace('"', "'"))
}

/// Validates `cfg` and runs `command` on a pool of `cfg.workers` threads.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    with_workers(cfg.workers, || match command {
        Command::Variational => run_variational(cfg),
        Command::Fk => run_fk(cfg),
        Command::Simulate => run_simulate(cfg),
        Command::Hyper => run_hyper(cfg),
        Command::Report => run_report(cfg),
        Command::Rates => run_rates(cfg),
    })
}

fn table(cfg: &RunConfig, command: Command, columns: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut buf = cfg.echo(command.name()).into_bytes();
    {
        let mut w = table_writer(cfg.format, &mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn run_variational(cfg: &RunConfig) -> Result<RunOutput> {
    let model = cfg.model(1.0)?;
    let rows = scaling_check(&model, &cfg.lambda, &cfg.variational())?;
    let mut summary = String::from("variational scaling check\n");
    for r in &rows {
        let _ = writeln!(summary, "lambda = {}: value {:.8}, {} iterations, residual {:.2e}", r.lambda, r.value, r.iterations, r.residual);
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.lambda), num(r.value), r.iterations.to_string(), num(r.residual)])
        .collect();
    let maximizer = match &cfg.var_maximizer {
        Some(_) => {
            let res = solve(&model.with_lambda(cfg.lambda[0])?, &cfg.variational())?;
            let g = &res.maximizer;
            let mut buf = Vec::new();
            {
                let mut w = table_writer(cfg.format, &mut buf);
                w.write_record(["slice", "cell", "value"])?;
                for i in 0..g.m() {
                    for (c, v) in g.slice(i).iter().enumerate() {
                        w.write_record([i.to_string(), c.to_string(), num(*v)])?;
                    }
                }
                w.flush()?;
            }
            Some(buf)
        }
        None => None,
    };
    Ok(RunOutput {
        table: table(cfg, Command::Variational, &["lambda", "value", "iterations", "residual"], &cells)?,
        summary,
        maximizer,
        ..Default::default()
    })
}

fn integer_orders(cfg: &RunConfig) -> Result<Vec<usize>> {
    cfg.p
        .iter()
        .map(|&p| {
            if p.fract() == 0.0 {
                Ok(p as usize)
            } else {
                Err(invalid(format!("the Feynman-Kac engine needs integer moment orders, got {p}")))
            }
        })
        .collect()
}

fn run_fk(cfg: &RunConfig) -> Result<RunOutput> {
    let key = StreamKey::new(cfg.seed).derive(FK_STREAM);
    let mut rows = Vec::new();
    let mut summary = String::from("feynman-kac moments\n");
    for n in integer_orders(cfg)? {
        for &t in &cfg.t {
            for &lambda in &cfg.lambda {
                let e = estimate_moment(n, t, &cfg.model(lambda)?, cfg.fk_samples, cfg.fk_steps, &key)?;
                let _ = writeln!(summary, "n = {n} t = {t} lambda = {lambda}: E u^n = {:.6} ± {:.2e}", e.value, e.stderr);
                rows.push(vec![
                    n.to_string(),
                    num(t),
                    num(lambda),
                    num(e.value),
                    num(e.log_value),
                    num(e.stderr),
                    e.samples.to_string(),
                    e.heavy_tail.to_string(),
                ]);
            }
        }
    }
    let columns = ["n", "t", "lambda", "value", "log_value", "stderr", "samples", "heavy_tail_flag"];
    Ok(RunOutput { table: table(cfg, Command::Fk, &columns, &rows)?, summary, ..Default::default() })
}

fn options(cfg: &RunConfig) -> KernelOptions {
    KernelOptions { ordering: cfg.chaos_ordering, dense_cap: cfg.chaos_cap }
}

fn run_simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let key = StreamKey::new(cfg.seed).derive(CHAOS_STREAM);
    let mut rows = Vec::new();
    let mut summary = String::from("truncated chaos moments\n");
    for &t in &cfg.t {
        let grid = cfg.chaos_grid(t)?;
        for &lambda in &cfg.lambda {
            let model = cfg.model(lambda)?;
            let noise = build_noise(&grid, &model)?;
            let sol = build_kernels(&grid, &model, cfg.chaos_k, options(cfg))?;
            let proxy = if cfg.chaos_k <= 3 { second_moment_exact(&sol, &noise)?.tail_proxy } else { f64::NAN };
            for (&p, e) in cfg.p.iter().zip(estimate_norms(&sol, &noise, &cfg.p, cfg.chaos_samples, &key)?) {
                let _ = writeln!(summary, "p = {p} t = {t} lambda = {lambda}: |u|_p = {:.6} ± {:.2e}", e.norm(), e.norm_stderr());
                rows.push(vec![
                    "chaos".into(),
                    num(p),
                    num(lambda),
                    num(t),
                    num(e.norm()),
                    num(e.norm_stderr()),
                    e.samples.to_string(),
                    cfg.chaos_k.to_string(),
                    num(proxy),
                ]);
            }
        }
    }
    let columns = ["engine", "p", "lambda", "t", "norm", "stderr", "samples", "K", "tail_proxy"];
    Ok(RunOutput { table: table(cfg, Command::Simulate, &columns, &rows)?, summary, ..Default::default() })
}

fn run_hyper(cfg: &RunConfig) -> Result<RunOutput> {
    let key = StreamKey::new(cfg.seed).derive(HYPER_STREAM);
    let mut rows = Vec::new();
    let mut summary = String::from("hypercontractive comparison\n");
    for &(p, q) in &cfg.pairs {
        for &lambda in &cfg.lambda {
            for &t in &cfg.t {
                let r = hypercontractivity_test(&cfg.chaos_grid(t)?, &cfg.model(lambda)?, cfg.chaos_k, p, q, cfg.chaos_samples, &key, options(cfg))?;
                let _ = writeln!(
                    summary,
                    "p = {p} q = {q} lambda = {lambda} t = {t}: lhs {:.6} rhs {:.6} margin {:+.2e} {}",
                    r.lhs,
                    r.rhs,
                    r.margin,
                    if r.pass { "pass" } else { "FAIL" }
                );
                rows.push(vec![
                    "chaos".into(),
                    num(p),
                    num(q),
                    num(lambda),
                    num(r.lambda_q),
                    num(t),
                    num(r.tau),
                    num(r.lhs),
                    num(r.lhs_stderr),
                    num(r.rhs),
                    num(r.rhs_stderr),
                    num(r.combined_stderr),
                    num(r.margin),
                    r.pass.to_string(),
                    r.samples.to_string(),
                    cfg.chaos_k.to_string(),
                ]);
            }
        }
    }
    let columns = [
        "engine", "p", "q", "lambda", "lambda_q", "t", "tau", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "combined_stderr", "margin",
        "pass", "samples", "K",
    ];
    Ok(RunOutput { table: table(cfg, Command::Hyper, &columns, &rows)?, summary, ..Default::default() })
}

fn run_report(cfg: &RunConfig) -> Result<RunOutput> {
    let report = build_report(cfg)?;
    let mut table = Vec::new();
    report.write_csv(cfg, &mut table)?;
    let mut plot = Vec::new();
    emit_plotdata(&report, cfg.format, &mut plot)?;
    Ok(RunOutput { table, summary: report.summary(), plotdata: Some(plot), report: Some(report), ..Default::default() })
}

fn run_rates(cfg: &RunConfig) -> Result<RunOutput> {
    let reference = cfg.model(1.0)?;
    let mut rows = vec![vec!["time_exponent".into(), String::new(), String::new(), String::new(), num(time_rate_exponent(&reference))]];
    rows.push(vec!["lambda_exponent".into(), String::new(), String::new(), String::new(), num(reference.lambda_exponent())]);
    for &lambda in &cfg.lambda {
        let model = cfg.model(lambda)?;
        for &p in &cfg.p {
            if let Some(e1) = cfg.e1 {
                let c = lyapunov_prediction(&model, p, e1)?.coefficient;
                rows.push(vec!["lyapunov_coefficient".into(), num(p), String::new(), num(lambda), num(c)]);
            }
            if p.fract() == 0.0 {
                rows.push(vec!["white_noise_rate".into(), num(p), String::new(), num(lambda), num(white_noise_rate(p as u32, lambda)?)]);
            }
        }
    }
    for &(p, q) in &cfg.pairs {
        let m = hypercontract_map(p, q)?;
        rows.push(vec!["hypercontract_factor".into(), num(p), num(q), String::new(), num(m.lambda_factor)]);
        rows.push(vec!["hypercontract_tau".into(), num(p), num(q), String::new(), num(m.tau)]);
    }
    let summary = rows
        .iter()
        .map(|r| {
            let args: Vec<String> = [("p", &r[1]), ("q", &r[2]), ("lambda", &r[3])]
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, v)| format!("{k} = {v}"))
                .collect();
            if args.is_empty() {
                format!("{}: {}\n", r[0], r[4])
            } else {
                format!("{} {}: {}\n", r[0], args.join(" "), r[4])
            }
        })
        .collect();
    Ok(RunOutput {
        table: table(cfg, Command::Rates, &["quantity", "p", "q", "lambda", "value"], &rows)?,
        summary,
        ..Default::default()
    })
}
