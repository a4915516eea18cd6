//! Plain-text `key = value` run configuration.
//!
//! Files hold one `key = value` per line; `#` starts a comment. Lists are
//! comma separated, hypercontractive pairs are written `p:q`. The same keys
//! are accepted as overrides from the command line, and [`RunConfig::echo`]
//! writes the resolved configuration back in the same syntax.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::chaos::{SliceOrdering, SpaceTimeGrid, DEFAULT_DENSE_CAP};
use crate::error::{invalid, Result};
use crate::kernel::SpatialKernel;
use crate::model::CovarianceModel;
use crate::report::num;
use crate::variational::{AscentConfig, VariationalConfig};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PAMLAB_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Tsv,
}

impl OutputFormat {
    pub fn delimiter(self) -> u8 {
        match self {
            OutputFormat::Csv => b',',
            OutputFormat::Tsv => b'\t',
        }
    }
}

impl std::fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Tsv => "tsv",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "tsv" => Ok(OutputFormat::Tsv),
            other => Err(invalid(format!("unknown output format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha0: f64,
    pub alpha: f64,
    pub d: usize,
    pub kernel: SpatialKernel,
    /// Intensities swept by every subcommand.
    pub lambda: Vec<f64>,
    /// Horizons for the moment engines.
    pub t: Vec<f64>,
    /// Moment orders; the Feynman-Kac engine uses the integer ones.
    pub p: Vec<f64>,
    /// `(p, q)` pairs for the hypercontractive comparison.
    pub pairs: Vec<(f64, f64)>,
    /// Known `Ê(1)`; when unset `report` solves for it.
    pub e1: Option<f64>,
    pub seed: u64,

    pub var_m: usize,
    pub var_n: usize,
    pub var_l: Option<f64>,
    pub var_step: f64,
    pub var_tol: f64,
    pub var_max_iter: usize,
    pub var_maximizer: Option<PathBuf>,

    pub fk_samples: usize,
    pub fk_steps: usize,

    pub chaos_mt: usize,
    pub chaos_n: usize,
    /// Box half-width; `None` uses `3 √t`.
    pub chaos_l: Option<f64>,
    pub chaos_k: usize,
    pub chaos_samples: usize,
    pub chaos_ordering: SliceOrdering,
    pub chaos_cap: u64,

    pub format: OutputFormat,
    /// Not echoed: does not affect any output byte.
    pub workers: usize,
    /// Not echoed: the same run written to two places must match.
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ascent = AscentConfig::default();
        Self {
            alpha0: 0.5,
            alpha: 1.0,
            d: 1,
            kernel: SpatialKernel::Delta,
            lambda: vec![1.0],
            t: vec![0.25],
            p: vec![2.0],
            pairs: vec![(2.0, 4.0)],
            e1: None,
            seed: 1,
            var_m: 64,
            var_n: 64,
            var_l: None,
            var_step: ascent.step,
            var_tol: ascent.tol,
            var_max_iter: ascent.max_iter,
            var_maximizer: None,
            fk_samples: 10_000,
            fk_steps: 32,
            chaos_mt: 8,
            chaos_n: 41,
            chaos_l: None,
            chaos_k: 3,
            chaos_samples: 10_000,
            chaos_ordering: SliceOrdering::Weak,
            chaos_cap: DEFAULT_DENSE_CAP,
            format: OutputFormat::Csv,
            workers: 0,
            output: None,
        }
    }
}

/// Every accepted key with a short description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("alpha0", "temporal exponent alpha0 in (0, 1)"),
    ("alpha", "spatial exponent alpha in (0, 2)"),
    ("d", "spatial dimension"),
    ("kernel", "spatial kernel: riesz or delta"),
    ("lambda", "noise intensities, comma separated"),
    ("t", "time horizons, comma separated"),
    ("p", "moment orders, comma separated"),
    ("pairs", "hypercontractive pairs p:q, comma separated"),
    ("e1", "known E(1), or auto to solve for it"),
    ("seed", "random seed"),
    ("var_m", "variational time slices"),
    ("var_n", "variational cells per axis"),
    ("var_l", "variational box half-width, or auto"),
    ("var_step", "initial ascent step"),
    ("var_tol", "relative improvement that ends the ascent"),
    ("var_max_iter", "ascent iteration cap"),
    ("var_maximizer", "file for the maximizer grid, or none"),
    ("fk_samples", "Feynman-Kac samples"),
    ("fk_steps", "Feynman-Kac time steps"),
    ("chaos_mt", "chaos time slices"),
    ("chaos_n", "chaos cells per axis"),
    ("chaos_l", "chaos box half-width, or auto (3 sqrt t)"),
    ("chaos_k", "chaos truncation level"),
    ("chaos_samples", "chaos samples"),
    ("chaos_ordering", "slice ordering: weak or strict"),
    ("chaos_cap", "cap on dense matrix entries"),
    ("format", "table format: csv or tsv"),
    ("workers", "worker threads (0: PAMLAB_WORKERS or all cores)"),
    ("output", "output file, or none for stdout"),
];

const NOT_ECHOED: &[&str] = &["workers", "output"];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| invalid(format!("bad value for {key}: '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(invalid(format!("{key} needs at least one value")));
    }
    Ok(items)
}

fn parse_auto(key: &str, v: &str) -> Result<Option<f64>> {
    match v.trim() {
        "auto" | "none" | "" => Ok(None),
        s => parse(key, s).map(Some),
    }
}

fn parse_path(v: &str) -> Option<PathBuf> {
    match v.trim() {
        "" | "none" | "-" => None,
        s => Some(PathBuf::from(s)),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ")
}

fn auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), num)
}

fn path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "alpha0" => self.alpha0 = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "kernel" => self.kernel = v.parse()?,
            "lambda" => self.lambda = parse_list(key, v)?,
            "t" => self.t = parse_list(key, v)?,
            "p" => self.p = parse_list(key, v)?,
            "pairs" => {
                self.pairs = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match s.split_once(':') {
                        Some((p, q)) => Ok((parse(key, p)?, parse(key, q)?)),
                        None => Err(invalid(format!("pairs are written p:q, got '{s}'"))),
                    })
                    .collect::<Result<_>>()?
            }
            "e1" => self.e1 = parse_auto(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "var_m" => self.var_m = parse(key, v)?,
            "var_n" => self.var_n = parse(key, v)?,
            "var_l" => self.var_l = parse_auto(key, v)?,
            "var_step" => self.var_step = parse(key, v)?,
            "var_tol" => self.var_tol = parse(key, v)?,
            "var_max_iter" => self.var_max_iter = parse(key, v)?,
            "var_maximizer" => self.var_maximizer = parse_path(v),
            "fk_samples" => self.fk_samples = parse(key, v)?,
            "fk_steps" => self.fk_steps = parse(key, v)?,
            "chaos_mt" => self.chaos_mt = parse(key, v)?,
            "chaos_n" => self.chaos_n = parse(key, v)?,
            "chaos_l" => self.chaos_l = parse_auto(key, v)?,
            "chaos_k" => self.chaos_k = parse(key, v)?,
            "chaos_samples" => self.chaos_samples = parse(key, v)?,
            "chaos_ordering" => self.chaos_ordering = v.parse()?,
            "chaos_cap" => self.chaos_cap = parse(key, v)?,
            "format" => self.format = v.parse()?,
            "workers" => self.workers = parse(key, v)?,
            "output" => self.output = parse_path(v),
            other => return Err(invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies the `key = value` lines of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value, got '{line}'", no + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(invalid(format!("line {}: duplicate key '{key}'", no + 1)));
            }
            seen.push(key);
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Reads the configuration echoed at the top of an output file.
    pub fn from_header(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .map_while(|l| l.strip_prefix('#'))
            .filter(|l| !l.trim_start().starts_with("command"))
            .map(|l| format!("{l}\n"))
            .collect();
        Self::from_text(&body)
    }

    /// Text value of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "alpha0" => num(self.alpha0),
            "alpha" => num(self.alpha),
            "d" => self.d.to_string(),
            "kernel" => self.kernel.to_string(),
            "lambda" => join(&self.lambda),
            "t" => join(&self.t),
            "p" => join(&self.p),
            "pairs" => self.pairs.iter().map(|&(p, q)| format!("{}:{}", num(p), num(q))).collect::<Vec<_>>().join(", "),
            "e1" => auto(self.e1),
            "seed" => self.seed.to_string(),
            "var_m" => self.var_m.to_string(),
            "var_n" => self.var_n.to_string(),
            "var_l" => auto(self.var_l),
            "var_step" => num(self.var_step),
            "var_tol" => num(self.var_tol),
            "var_max_iter" => self.var_max_iter.to_string(),
            "var_maximizer" => path(&self.var_maximizer),
            "fk_samples" => self.fk_samples.to_string(),
            "fk_steps" => self.fk_steps.to_string(),
            "chaos_mt" => self.chaos_mt.to_string(),
            "chaos_n" => self.chaos_n.to_string(),
            "chaos_l" => auto(self.chaos_l),
            "chaos_k" => self.chaos_k.to_string(),
            "chaos_samples" => self.chaos_samples.to_string(),
            "chaos_ordering" => self.chaos_ordering.to_string(),
            "chaos_cap" => self.chaos_cap.to_string(),
            "format" => self.format.to_string(),
            "workers" => self.workers.to_string(),
            "output" => path(&self.output),
            _ => return None,
        })
    }

    /// Resolved configuration as `# key = value` lines, headed by the
    /// subcommand. Worker count and output path are left out.
    pub fn echo(&self, command: &str) -> String {
        let mut out = format!("# command = {command}\n");
        for (key, _) in KEYS.iter().filter(|(k, _)| !NOT_ECHOED.contains(k)) {
            let _ = writeln!(out, "# {key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    /// The configuration as recovered from its echo.
    pub fn reproducible(&self) -> Self {
        let d = Self::default();
        Self { workers: d.workers, output: d.output, ..self.clone() }
    }

    /// Worker count from the environment when the configuration leaves it at 0.
    pub fn resolve_workers(&mut self, env: Option<&str>) -> Result<()> {
        if self.workers == 0 {
            if let Some(v) = env.map(str::trim).filter(|v| !v.is_empty()) {
                self.workers = parse(WORKERS_ENV, v)?;
            }
        }
        Ok(())
    }

    /// Model at intensity `lambda`.
    pub fn model(&self, lambda: f64) -> Result<CovarianceModel> {
        CovarianceModel::new(self.alpha0, self.alpha, self.d, lambda, self.kernel)
    }

    pub fn variational(&self) -> VariationalConfig {
        VariationalConfig {
            m: self.var_m,
            n: self.var_n,
            half_width: self.var_l,
            ascent: AscentConfig { step: self.var_step, max_iter: self.var_max_iter, tol: self.var_tol },
        }
    }

    /// Chaos grid for horizon `t`, evaluated at the origin.
    pub fn chaos_grid(&self, t: f64) -> Result<SpaceTimeGrid> {
        let l = self.chaos_l.unwrap_or(3.0 * t.sqrt());
        SpaceTimeGrid::centred(t, self.chaos_mt, self.chaos_n, l, self.d)
    }

    /// Checks everything that can be checked without running an engine.
    pub fn validate(&self) -> Result<()> {
        for &l in &self.lambda {
            self.model(l)?.require_integrable()?;
        }
        if self.t.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("horizons must be positive"));
        }
        if self.p.iter().any(|&p| !(p >= 1.0 && p.is_finite())) {
            return Err(invalid("moment orders must be >= 1"));
        }
        if self.pairs.iter().any(|&(p, q)| !(p > 1.0 && q >= p && q.is_finite())) {
            return Err(invalid("pairs need 1 < p <= q"));
        }
        if let Some(e1) = self.e1 {
            if !e1.is_finite() {
                return Err(invalid("e1 must be finite"));
            }
        }
        if self.var_m == 0 || self.var_n < 2 || self.var_max_iter == 0 {
            return Err(invalid("variational grid needs var_m >= 1, var_n >= 2, var_max_iter >= 1"));
        }
        if !(self.var_step > 0.0) || !(self.var_tol >= 0.0) {
            return Err(invalid("var_step must be positive and var_tol nonnegative"));
        }
        if self.var_l.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("var_l must be positive"));
        }
        if self.fk_samples == 0 || self.fk_steps == 0 || self.chaos_samples == 0 {
            return Err(invalid("sample and step counts must be positive"));
        }
        if self.chaos_k > crate::chaos::MAX_LEVEL {
            return Err(invalid(format!("chaos_k must be at most {}", crate::chaos::MAX_LEVEL)));
        }
        for &t in &self.t {
            self.chaos_grid(t)?;
        }
        Ok(())
    }
}
