//! The comparison report: predicted moment growth from `Ê(1)` next to
//! Feynman-Kac and chaos estimates, plus hypercontractive margins.

use std::fmt::Write as _;
use std::io::Write;

use log::info;

use crate::chaos::{
    build_kernels, build_noise, estimate_norms, hypercontractivity_test, second_moment_exact, HyperRecord, KernelOptions,
};
use crate::config::{OutputFormat, RunConfig};
use crate::error::Result;
use crate::feynman_kac::{estimate_moment, normalize_log_moment};
use crate::model::{lyapunov_prediction, time_rate_exponent};
use crate::rng::StreamKey;
use crate::stats::{Engine, MomentEstimate};
use crate::variational::solve;

/// Stream tags so that each engine draws independent noise from one seed.
pub const FK_STREAM: u64 = 1;
pub const CHAOS_STREAM: u64 = 2;
pub const HYPER_STREAM: u64 = 3;

/// Columns of the report table.
pub const REPORT_COLUMNS: &[&str] = &[
    "kind",
    "engine",
    "p",
    "q",
    "lambda",
    "t",
    "value",
    "stderr",
    "normalized",
    "normalized_stderr",
    "prediction",
    "lhs",
    "rhs",
    "margin",
    "pass",
    "heavy_tail",
    "tail_proxy",
    "samples",
    "error",
];

/// Columns of the long-format plot data.
pub const PLOT_COLUMNS: &[&str] = &["series", "engine", "p", "q", "lambda", "t", "x", "y", "y_stderr"];

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalRow {
    /// `Ê(1)`, solved or taken from the configuration.
    pub value: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub solved: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub engine: Engine,
    pub p: f64,
    pub lambda: f64,
    pub t: f64,
    pub estimate: Option<MomentEstimate>,
    /// `t^{-time exponent} log E|u|^p`
    pub normalized: f64,
    pub normalized_stderr: f64,
    /// Predicted limit of `normalized`.
    pub prediction: f64,
    pub tail_proxy: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperRow {
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub t: f64,
    pub record: Option<HyperRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub time_exponent: f64,
    pub variational: Option<VariationalRow>,
    pub moments: Vec<MomentRow>,
    pub hyper: Vec<HyperRow>,
}

fn kernel_options(cfg: &RunConfig) -> KernelOptions {
    KernelOptions { ordering: cfg.chaos_ordering, dense_cap: cfg.chaos_cap }
}

fn is_integer(p: f64) -> bool {
    p.fract() == 0.0 && p >= 1.0
}

/// Runs the full pipeline. Engine failures become row errors; only an
/// invalid configuration is an error here.
pub fn build_report(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let key = StreamKey::new(cfg.seed);
    let reference = cfg.model(1.0)?;

    let variational = match cfg.e1 {
        Some(v) => VariationalRow { value: Some(v), iterations: 0, converged: true, solved: false, error: None },
        None => {
            info!("solving the variational problem at unit intensity");
            match solve(&reference, &cfg.variational()) {
                Ok(r) => VariationalRow {
                    value: Some(r.value),
                    iterations: r.iterations,
                    converged: r.converged,
                    solved: true,
                    error: None,
                },
                Err(e) => VariationalRow { value: None, iterations: 0, converged: false, solved: true, error: Some(e.to_string()) },
            }
        }
    };
    let e1 = variational.value.unwrap_or(f64::NAN);

    let mut moments = Vec::new();
    for &lambda in &cfg.lambda {
        let model = cfg.model(lambda)?;
        let prediction = |p: f64| lyapunov_prediction(&model, p, e1).map_or(f64::NAN, |r| r.coefficient);
        for &t in &cfg.t {
            for &p in cfg.p.iter().filter(|&&p| is_integer(p)) {
                info!("feynman-kac: p = {p}, lambda = {lambda}, t = {t}");
                let est = estimate_moment(p as usize, t, &model, cfg.fk_samples, cfg.fk_steps, &key.derive(FK_STREAM));
                moments.push(moment_row(Engine::FeynmanKac, p, lambda, t, &model, est, prediction(p), f64::NAN));
            }

            info!("chaos: lambda = {lambda}, t = {t}");
            let chaos = (|| -> Result<(Vec<MomentEstimate>, f64)> {
                let grid = cfg.chaos_grid(t)?;
                let noise = build_noise(&grid, &model)?;
                let sol = build_kernels(&grid, &model, cfg.chaos_k, kernel_options(cfg))?;
                let proxy = if cfg.chaos_k <= 3 { second_moment_exact(&sol, &noise)?.tail_proxy } else { f64::NAN };
                let est = estimate_norms(&sol, &noise, &cfg.p, cfg.chaos_samples, &key.derive(CHAOS_STREAM))?;
                Ok((est, proxy))
            })();
            match chaos {
                Ok((est, proxy)) => {
                    for (&p, e) in cfg.p.iter().zip(est) {
                        moments.push(moment_row(Engine::Chaos, p, lambda, t, &model, Ok(e), prediction(p), proxy));
                    }
                }
                Err(e) => {
                    for &p in &cfg.p {
                        moments.push(moment_row(Engine::Chaos, p, lambda, t, &model, Err(e.clone()), prediction(p), f64::NAN));
                    }
                }
            }
        }
    }

    let mut hyper = Vec::new();
    for &(p, q) in &cfg.pairs {
        for &lambda in &cfg.lambda {
            for &t in &cfg.t {
                info!("hypercontractivity: p = {p}, q = {q}, lambda = {lambda}, t = {t}");
                let rec = cfg.model(lambda).and_then(|model| {
                    hypercontractivity_test(
                        &cfg.chaos_grid(t)?,
                        &model,
                        cfg.chaos_k,
                        p,
                        q,
                        cfg.chaos_samples,
                        &key.derive(HYPER_STREAM),
                        kernel_options(cfg),
                    )
                });
                let (record, error) = match rec {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                hyper.push(HyperRow { p, q, lambda, t, record, error });
            }
        }
    }

    Ok(Report { time_exponent: time_rate_exponent(&reference), variational: Some(variational), moments, hyper })
}

fn moment_row(
    engine: Engine,
    p: f64,
    lambda: f64,
    t: f64,
    model: &crate::CovarianceModel,
    est: Result<MomentEstimate>,
    prediction: f64,
    tail_proxy: f64,
) -> MomentRow {
    match est {
        Ok(e) => {
            let n = normalize_log_moment(model, e);
            MomentRow {
                engine,
                p,
                lambda,
                t,
                estimate: Some(e),
                normalized: n.value,
                normalized_stderr: n.stderr,
                prediction,
                tail_proxy,
                error: None,
            }
        }
        Err(err) => MomentRow {
            engine,
            p,
            lambda,
            t,
            estimate: None,
            normalized: f64::NAN,
            normalized_stderr: f64::NAN,
            prediction,
            tail_proxy,
            error: Some(err.to_string()),
        },
    }
}

/// Number as written to tables and config echoes: shortest round-trip form,
/// in exponent notation for very small or large magnitudes; NaN is blank.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x != 0.0 && x.is_finite() && !(1e-4..1e15).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

pub(crate) fn table_writer<W: Write>(format: OutputFormat, out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(format.delimiter()).from_writer(out)
}

impl Report {
    /// Table rows under [`REPORT_COLUMNS`].
    pub fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        if let Some(v) = &self.variational {
            rows.push(vec![
                "variational".into(),
                if v.solved { "ascent".into() } else { "given".into() },
                String::new(),
                String::new(),
                "1".into(),
                String::new(),
                num(v.value.unwrap_or(f64::NAN)),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                v.converged.to_string(),
                String::new(),
                String::new(),
                v.iterations.to_string(),
                v.error.clone().unwrap_or_default(),
            ]);
        }
        for m in &self.moments {
            let e = m.estimate.as_ref();
            rows.push(vec![
                "moment".into(),
                m.engine.to_string(),
                num(m.p),
                String::new(),
                num(m.lambda),
                num(m.t),
                e.map_or(String::new(), |e| num(e.value)),
                e.map_or(String::new(), |e| num(e.stderr)),
                num(m.normalized),
                num(m.normalized_stderr),
                num(m.prediction),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.map_or(String::new(), |e| e.heavy_tail.to_string()),
                num(m.tail_proxy),
                e.map_or(String::new(), |e| e.samples.to_string()),
                m.error.clone().unwrap_or_default(),
            ]);
        }
        for h in &self.hyper {
            let r = h.record.as_ref();
            let f = |g: fn(&HyperRecord) -> f64| r.map_or(String::new(), |r| num(g(r)));
            rows.push(vec![
                "hyper".into(),
                "chaos".into(),
                num(h.p),
                num(h.q),
                num(h.lambda),
                num(h.t),
                String::new(),
                f(|r| r.combined_stderr),
                String::new(),
                String::new(),
                String::new(),
                f(|r| r.lhs),
                f(|r| r.rhs),
                f(|r| r.margin),
                r.map_or(String::new(), |r| r.pass.to_string()),
                String::new(),
                String::new(),
                r.map_or(String::new(), |r| r.samples.to_string()),
                h.error.clone().unwrap_or_default(),
            ]);
        }
        rows
    }

    /// Echoed configuration followed by the report table.
    pub fn write_csv<W: Write>(&self, cfg: &RunConfig, mut out: W) -> Result<()> {
        out.write_all(cfg.echo("report").as_bytes())?;
        let mut w = table_writer(cfg.format, out);
        w.write_record(REPORT_COLUMNS)?;
        for row in self.rows() {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "moment report (time exponent {})", num(self.time_exponent));
        match &self.variational {
            Some(VariationalRow { value: Some(v), solved, iterations, converged, .. }) => {
                let how = if *solved { format!("ascent, {iterations} iterations, converged: {converged}") } else { "given".into() };
                let _ = writeln!(s, "E(1) = {v:.8} ({how})");
            }
            Some(VariationalRow { error: Some(e), .. }) => {
                let _ = writeln!(s, "E(1) unavailable: {e}");
            }
            _ => {}
        }
        if !self.moments.is_empty() {
            let _ = writeln!(s, "\nnormalized log-moments  t^-k log E|u|^p");
            let _ = writeln!(s, "{:>6} {:>6} {:>8} {:>8} {:>14} {:>12} {:>12}  notes", "engine", "p", "lambda", "t", "normalized", "stderr", "prediction");
            for m in &self.moments {
                let mut notes = String::new();
                if let Some(e) = &m.error {
                    notes = format!("error: {e}");
                } else if m.estimate.is_some_and(|e| e.heavy_tail) {
                    notes = "heavy tail".into();
                }
                if m.tail_proxy.is_finite() {
                    let _ = write!(notes, "{}tail proxy {:.2e}", if notes.is_empty() { "" } else { "; " }, m.tail_proxy);
                }
                let _ = writeln!(
                    s,
                    "{:>6} {:>6} {:>8} {:>8} {:>14.6} {:>12.2e} {:>12.6}  {notes}",
                    m.engine.to_string(),
                    num(m.p),
                    num(m.lambda),
                    num(m.t),
                    m.normalized,
                    m.normalized_stderr,
                    m.prediction
                );
            }
        }
        if !self.hyper.is_empty() {
            let _ = writeln!(s, "\nhypercontractive comparison  lhs = |u_(p-1)l/(q-1)|_q <= rhs = |u_l|_p");
            let passed = self.hyper.iter().filter(|h| h.record.is_some_and(|r| r.pass)).count();
            for h in &self.hyper {
                match (&h.record, &h.error) {
                    (Some(r), _) => {
                        let _ = writeln!(
                            s,
                            "p = {} q = {} lambda = {} t = {}: lhs {:.6} rhs {:.6} margin {:+.2e} (stderr {:.1e}) {}",
                            num(h.p),
                            num(h.q),
                            num(h.lambda),
                            num(h.t),
                            r.lhs,
                            r.rhs,
                            r.margin,
                            r.combined_stderr,
                            if r.pass { "pass" } else { "FAIL" }
                        );
                    }
                    (None, e) => {
                        let _ = writeln!(s, "p = {} q = {} lambda = {} t = {}: error: {}", num(h.p), num(h.q), num(h.lambda), num(h.t), e.clone().unwrap_or_default());
                    }
                }
            }
            let _ = writeln!(s, "{passed} of {} comparisons pass", self.hyper.len());
        }
        s
    }
}

/// Long-format plot data: normalized log-moment against `t`, and the
/// hypercontractive margin against `q`. Rows that failed are left out.
pub fn emit_plotdata<W: Write>(report: &Report, format: OutputFormat, out: W) -> Result<()> {
    let mut w = table_writer(format, out);
    w.write_record(PLOT_COLUMNS)?;
    for m in report.moments.iter().filter(|m| m.error.is_none()) {
        w.write_record([
            "normalized_log_moment".to_string(),
            m.engine.to_string(),
            num(m.p),
            String::new(),
            num(m.lambda),
            num(m.t),
            num(m.t),
            num(m.normalized),
            num(m.normalized_stderr),
        ])?;
    }
    for h in &report.hyper {
        if let Some(r) = &h.record {
            w.write_record([
                "margin".to_string(),
                "chaos".to_string(),
                num(h.p),
                num(h.q),
                num(h.lambda),
                num(h.t),
                num(h.q),
                num(r.margin),
                num(r.combined_stderr),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
