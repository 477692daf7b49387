//! Verification run configuration.
//!
//! The file is TOML with five sections: `kernel`, `grid`, `datum`, `run` and
//! `tolerances`. Every key is checked; unknown, missing, mistyped and
//! out-of-range keys are all collected and reported together.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nonlocal_core::evolve::{stable_dt, InitialDatum};
use nonlocal_core::grid::DEFAULT_NODE_BUDGET;
use nonlocal_core::kernel::KernelFamily;
use nonlocal_core::nonlocal_op::ConvolutionMethod;
use serde::Serialize;
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub node_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub p: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Always contains 0, `t_probe` and `t_end`.
    pub checkpoints: Vec<f64>,
    pub radii: Vec<f64>,
    pub k: Vec<f64>,
    pub t_probe: f64,
    pub method: ConvolutionMethod,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    pub convergence_spacing: f64,
    pub fundamental_times: Vec<f64>,
    pub fundamental_half_width: f64,
    pub fundamental_dt: f64,
    pub positivity_radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub barrier_slack: f64,
    pub upper_slack: f64,
    pub mass_budget: f64,
    pub trend_inversion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub datum: InitialDatum,
    pub run: RunConfig,
    pub tolerances: Tolerances,
    /// `|x|^{2/(p−1)}u₀ → ∞`, the hypothesis of the long-time limit.
    pub subcritical: bool,
}

const SECTIONS: &[&str] = &["kernel", "grid", "datum", "run", "tolerances"];
const KERNEL_KEYS: &[&str] = &["family", "radius", "radii", "values"];
const GRID_KEYS: &[&str] = &["dim", "half_width", "spacing", "node_budget"];
const DATUM_KEYS: &[&str] = &[
    "kind",
    "amplitude",
    "alpha",
    "cap",
    "radius",
    "height",
    "value",
    "radii",
    "values",
];
const RUN_KEYS: &[&str] = &[
    "p",
    "t_end",
    "dt",
    "checkpoints",
    "radii",
    "k",
    "t_probe",
    "method",
    "eigen_tol",
    "eigen_max_iter",
    "convergence_spacing",
    "fundamental_times",
    "fundamental_half_width",
    "fundamental_dt",
    "positivity_radii",
];
const TOLERANCE_KEYS: &[&str] = &["barrier_slack", "upper_slack", "mass_budget", "trend_inversion"];

fn datum_keys(kind: &str) -> &'static [&'static str] {
    match kind {
        "power-tail" => &["amplitude", "alpha", "cap"],
        "floor-tail" => &["alpha"],
        "compact-bump" => &["radius", "height"],
        "constant" => &["value"],
        "table" => &["radii", "values"],
        _ => &[],
    }
}

struct Reader {
    problems: Vec<String>,
}

impl Reader {
    fn section<'a>(&mut self, root: &'a Table, name: &str) -> Option<&'a Table> {
        match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.problems.push(format!("`{name}` must be a section"));
                None
            }
        }
    }

    fn unknown(&mut self, section: &str, table: &Table, allowed: &[&str]) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.problems.push(format!("unknown key `{section}.{key}`"));
            }
        }
    }

    fn float(&mut self, section: &str, table: &Table, key: &str) -> Option<f64> {
        match table.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            _ => {
                self.problems.push(format!("`{section}.{key}` must be a number"));
                None
            }
        }
    }

    fn required_float(&mut self, section: &str, table: &Table, key: &str) -> Option<f64> {
        if !table.contains_key(key) {
            self.problems.push(format!("missing key `{section}.{key}`"));
            return None;
        }
        self.float(section, table, key)
    }

    fn positive(&mut self, section: &str, table: &Table, key: &str, default: Option<f64>) -> Option<f64> {
        let v = match default {
            Some(d) => self
                .float(section, table, key)
                .or(if table.contains_key(key) { None } else { Some(d) }),
            None => self.required_float(section, table, key),
        }?;
        if v > 0.0 && v.is_finite() {
            Some(v)
        } else {
            self.problems
                .push(format!("`{section}.{key}` must be positive and finite, got {v}"));
            None
        }
    }

    fn integer(&mut self, section: &str, table: &Table, key: &str) -> Option<i64> {
        match table.get(key)? {
            Value::Integer(v) => Some(*v),
            _ => {
                self.problems.push(format!("`{section}.{key}` must be an integer"));
                None
            }
        }
    }

    fn string<'a>(&mut self, section: &str, table: &'a Table, key: &str) -> Option<&'a str> {
        match table.get(key)? {
            Value::String(s) => Some(s),
            _ => {
                self.problems.push(format!("`{section}.{key}` must be a string"));
                None
            }
        }
    }

    fn floats(&mut self, section: &str, table: &Table, key: &str) -> Option<Vec<f64>> {
        let bad = |r: &mut Reader| {
            r.problems
                .push(format!("`{section}.{key}` must be an array of numbers"));
            None
        };
        match table.get(key)? {
            Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Float(v) => out.push(*v),
                        Value::Integer(v) => out.push(*v as f64),
                        _ => return bad(self),
                    }
                }
                Some(out)
            }
            _ => bad(self),
        }
    }

    fn positive_list(&mut self, section: &str, table: &Table, key: &str, default: &[f64]) -> Option<Vec<f64>> {
        let list = if table.contains_key(key) {
            self.floats(section, table, key)?
        } else {
            default.to_vec()
        };
        if list.is_empty() {
            self.problems.push(format!("`{section}.{key}` must not be empty"));
            return None;
        }
        if list.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            self.problems
                .push(format!("`{section}.{key}` entries must be positive and finite"));
            return None;
        }
        if list.windows(2).any(|w| w[1] <= w[0]) {
            self.problems
                .push(format!("`{section}.{key}` must be strictly increasing"));
            return None;
        }
        Some(list)
    }
}

/// `{0, 1, 2, 4, …}` up to `t_end`, with `t_end` itself.
pub fn dyadic_schedule(t_end: f64) -> Vec<f64> {
    let mut times = vec![0.0];
    let mut t = 1.0;
    while t < t_end {
        times.push(t);
        t *= 2.0;
    }
    if t_end > 0.0 {
        times.push(t_end);
    }
    times
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            problems: vec![format!("cannot read {}: {e}", path.display())],
        })?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
            problems: vec![format!("not valid TOML: {}", e.message())],
        })?;
        let mut r = Reader { problems: Vec::new() };
        for key in root.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                r.problems.push(format!("unknown key `{key}`"));
            }
        }
        let empty = Table::new();
        let kernel_t = r.section(&root, "kernel").unwrap_or(&empty);
        let grid_t = r.section(&root, "grid").unwrap_or(&empty);
        let datum_t = r.section(&root, "datum").unwrap_or(&empty);
        let run_t = r.section(&root, "run").unwrap_or(&empty);
        let tol_t = r.section(&root, "tolerances").unwrap_or(&empty);
        r.unknown("kernel", kernel_t, KERNEL_KEYS);
        r.unknown("grid", grid_t, GRID_KEYS);
        r.unknown("datum", datum_t, DATUM_KEYS);
        r.unknown("run", run_t, RUN_KEYS);
        r.unknown("tolerances", tol_t, TOLERANCE_KEYS);

        let kernel = parse_kernel(&mut r, kernel_t);
        let grid = parse_grid(&mut r, grid_t);
        let datum = parse_datum(&mut r, datum_t);
        let run = parse_run(&mut r, run_t, datum.as_ref(), grid.as_ref());
        let tolerances = parse_tolerances(&mut r, tol_t, datum.as_ref());

        if let (Some(k), Some(g)) = (&kernel, &grid) {
            if let Some(run) = &run {
                let need = run.radii.last().copied().unwrap_or(0.0) + k.radius;
                if need > g.half_width {
                    r.problems.push(format!(
                        "`run.radii` up to {} plus kernel radius {} exceeds `grid.half_width` {}",
                        run.radii.last().unwrap(),
                        k.radius,
                        g.half_width
                    ));
                }
                if run.positivity_radii.last().copied().unwrap_or(0.0) > g.half_width {
                    r.problems
                        .push("`run.positivity_radii` exceed `grid.half_width`".into());
                }
                if g.dim > 2 {
                    r.problems
                        .push("`grid.dim` must be 1 or 2 for the fundamental-solution stage".into());
                }
            }
        }

        match (kernel, grid, datum, run, tolerances) {
            (Some(kernel), Some(grid), Some(datum), Some(run), Some(tolerances)) if r.problems.is_empty() => {
                let subcritical = datum.satisfies_hypotheses(run.p);
                Ok(Config {
                    kernel,
                    grid,
                    datum,
                    run,
                    tolerances,
                    subcritical,
                })
            }
            _ => {
                let mut seen = BTreeSet::new();
                let problems = r.problems.into_iter().filter(|p| seen.insert(p.clone())).collect();
                Err(ConfigError { problems })
            }
        }
    }

    /// Canonical JSON form, used to detect configuration changes on resume.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}

fn parse_kernel(r: &mut Reader, t: &Table) -> Option<KernelConfig> {
    let radius = r.positive("kernel", t, "radius", Some(1.0));
    let family = match t.get("family") {
        None => {
            r.problems.push("missing key `kernel.family`".into());
            None
        }
        Some(_) => {
            let name = r.string("kernel", t, "family")?;
            match name {
                "polynomial-bump" => Some(KernelFamily::PolynomialBump),
                "smooth-bump" => Some(KernelFamily::SmoothBump),
                "table" => {
                    let radii = r.floats("kernel", t, "radii");
                    let values = r.floats("kernel", t, "values");
                    if radii.is_none() && !t.contains_key("radii") {
                        r.problems
                            .push("missing key `kernel.radii` for the table family".into());
                    }
                    if values.is_none() && !t.contains_key("values") {
                        r.problems
                            .push("missing key `kernel.values` for the table family".into());
                    }
                    Some(KernelFamily::Table {
                        radii: radii?,
                        values: values?,
                    })
                }
                other => {
                    r.problems.push(format!(
                        "`kernel.family` must be one of polynomial-bump, smooth-bump, table; got `{other}`"
                    ));
                    None
                }
            }
        }
    };
    if let Some(f) = &family {
        if !matches!(f, KernelFamily::Table { .. }) {
            for key in ["radii", "values"] {
                if t.contains_key(key) {
                    r.problems
                        .push(format!("`kernel.{key}` is only used by the table family"));
                }
            }
        }
        if let Err(e) = f.validate() {
            r.problems.push(format!("`kernel.family`: {e}"));
        }
    }
    Some(KernelConfig {
        family: family?,
        radius: radius?,
    })
}

fn parse_grid(r: &mut Reader, t: &Table) -> Option<GridConfig> {
    let dim = match t.get("dim") {
        None => {
            r.problems.push("missing key `grid.dim`".into());
            None
        }
        Some(_) => match r.integer("grid", t, "dim") {
            Some(d @ 1..=3) => Some(d as usize),
            Some(d) => {
                r.problems.push(format!("`grid.dim` must be 1, 2 or 3, got {d}"));
                None
            }
            None => None,
        },
    };
    let half_width = r.positive("grid", t, "half_width", None);
    let spacing = r.positive("grid", t, "spacing", None);
    let node_budget = match r.integer("grid", t, "node_budget") {
        Some(n) if n > 0 => Some(n as usize),
        Some(n) => {
            r.problems.push(format!("`grid.node_budget` must be positive, got {n}"));
            None
        }
        None if t.contains_key("node_budget") => None,
        None => Some(DEFAULT_NODE_BUDGET),
    };
    Some(GridConfig {
        dim: dim?,
        half_width: half_width?,
        spacing: spacing?,
        node_budget: node_budget?,
    })
}

fn parse_datum(r: &mut Reader, t: &Table) -> Option<InitialDatum> {
    if !t.contains_key("kind") {
        r.problems.push("missing key `datum.kind`".into());
        return None;
    }
    let kind = r.string("datum", t, "kind")?;
    let allowed = datum_keys(kind);
    if allowed.is_empty() {
        r.problems.push(format!(
            "`datum.kind` must be one of power-tail, floor-tail, compact-bump, constant, table; got `{kind}`"
        ));
        return None;
    }
    for key in t.keys().filter(|k| k.as_str() != "kind") {
        if DATUM_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
            r.problems.push(format!("`datum.{key}` is not used by kind `{kind}`"));
        }
    }
    let datum = match kind {
        "power-tail" => {
            let amplitude = r.positive("datum", t, "amplitude", None);
            let alpha = r.positive("datum", t, "alpha", None);
            let cap = r.positive("datum", t, "cap", None);
            InitialDatum::PowerTail {
                amplitude: amplitude?,
                alpha: alpha?,
                cap: cap?,
            }
        }
        "floor-tail" => InitialDatum::FloorTail {
            alpha: r.positive("datum", t, "alpha", None)?,
        },
        "compact-bump" => {
            let radius = r.positive("datum", t, "radius", None);
            let height = r.positive("datum", t, "height", None);
            InitialDatum::CompactBump {
                radius: radius?,
                height: height?,
            }
        }
        "constant" => InitialDatum::Constant {
            value: r.positive("datum", t, "value", None)?,
        },
        _ => {
            let radii = r.floats("datum", t, "radii");
            let values = r.floats("datum", t, "values");
            for key in ["radii", "values"] {
                if !t.contains_key(key) {
                    r.problems.push(format!("missing key `datum.{key}`"));
                }
            }
            InitialDatum::Table {
                radii: radii?,
                values: values?,
            }
        }
    };
    if let Err(e) = datum.validate() {
        r.problems.push(e.to_string());
        return None;
    }
    if datum.sup() <= 0.0 {
        r.problems.push("the initial datum must be positive somewhere".into());
        return None;
    }
    Some(datum)
}

fn parse_run(r: &mut Reader, t: &Table, datum: Option<&InitialDatum>, grid: Option<&GridConfig>) -> Option<RunConfig> {
    let p = r.required_float("run", t, "p").and_then(|p| {
        if p > 1.0 && p.is_finite() {
            Some(p)
        } else {
            r.problems.push(format!("`run.p` must exceed 1, got {p}"));
            None
        }
    });
    let t_end = r.positive("run", t, "t_end", None);
    let t_probe = r.positive("run", t, "t_probe", Some(1.0));
    let radii = r.positive_list("run", t, "radii", &[10.0, 20.0, 40.0]);
    let k = r.positive_list("run", t, "k", &[1.0, 2.0]);
    let method = match r.string("run", t, "method") {
        None if t.contains_key("method") => None,
        None | Some("direct") => Some(ConvolutionMethod::Direct),
        Some("fast") => Some(ConvolutionMethod::Fast),
        Some(other) => {
            r.problems
                .push(format!("`run.method` must be `direct` or `fast`, got `{other}`"));
            None
        }
    };
    let eigen_tol = r.positive("run", t, "eigen_tol", Some(1e-10));
    let eigen_max_iter = match r.integer("run", t, "eigen_max_iter") {
        Some(n) if n > 0 => Some(n as usize),
        Some(n) => {
            r.problems
                .push(format!("`run.eigen_max_iter` must be positive, got {n}"));
            None
        }
        None if t.contains_key("eigen_max_iter") => None,
        None => Some(100_000),
    };
    let default_conv = if grid.is_some_and(|g| g.dim == 1) { 0.005 } else { 0.02 };
    let convergence_spacing = r.positive("run", t, "convergence_spacing", Some(default_conv));
    let fundamental_times = r.positive_list("run", t, "fundamental_times", &[5.0, 10.0, 20.0, 50.0]);
    let fundamental_half_width = r.positive("run", t, "fundamental_half_width", Some(60.0));
    let fundamental_dt = r.positive("run", t, "fundamental_dt", Some(0.05));
    let positivity_radii = r.positive_list("run", t, "positivity_radii", &[5.0]);

    let sup = datum.map(InitialDatum::sup);
    let dt_given = t.contains_key("dt");
    let dt_raw = if dt_given {
        r.positive("run", t, "dt", None)
    } else {
        None
    };
    let dt = match (p, sup) {
        (Some(p), Some(sup)) => {
            let limit = stable_dt(p, sup).ok()?;
            if !dt_given {
                Some(limit.min(0.01))
            } else {
                dt_raw.and_then(|dt| {
                    if dt > limit {
                        r.problems
                            .push(format!("`run.dt` = {dt} exceeds the stable step {limit}"));
                        None
                    } else {
                        Some(dt)
                    }
                })
            }
        }
        _ => None,
    };

    let checkpoints = match t_end {
        Some(t_end) => {
            let mut times = if t.contains_key("checkpoints") {
                match r.floats("run", t, "checkpoints") {
                    Some(list) => {
                        if list.iter().any(|&c| !(0.0..=t_end).contains(&c)) {
                            r.problems.push("`run.checkpoints` must lie in [0, run.t_end]".into());
                        }
                        if list.windows(2).any(|w| w[1] <= w[0]) {
                            r.problems.push("`run.checkpoints` must be strictly increasing".into());
                        }
                        list
                    }
                    None => Vec::new(),
                }
            } else {
                dyadic_schedule(t_end)
            };
            if let Some(tp) = t_probe {
                if tp > t_end {
                    r.problems
                        .push(format!("`run.t_probe` = {tp} exceeds `run.t_end` = {t_end}"));
                }
                times.push(tp);
            }
            times.push(0.0);
            times.push(t_end);
            times.sort_by(f64::total_cmp);
            times.dedup();
            Some(times)
        }
        None => None,
    };
    Some(RunConfig {
        p: p?,
        t_end: t_end?,
        dt: dt?,
        checkpoints: checkpoints?,
        radii: radii?,
        k: k?,
        t_probe: t_probe?,
        method: method?,
        eigen_tol: eigen_tol?,
        eigen_max_iter: eigen_max_iter?,
        convergence_spacing: convergence_spacing?,
        fundamental_times: fundamental_times?,
        fundamental_half_width: fundamental_half_width?,
        fundamental_dt: fundamental_dt?,
        positivity_radii: positivity_radii?,
    })
}

fn parse_tolerances(r: &mut Reader, t: &Table, datum: Option<&InitialDatum>) -> Option<Tolerances> {
    let default_slack = 1e-3 * datum.map_or(1.0, InitialDatum::sup);
    let barrier_slack = r.positive("tolerances", t, "barrier_slack", Some(default_slack));
    let upper_slack = r.positive("tolerances", t, "upper_slack", Some(1e-6));
    let mass_budget = r.positive("tolerances", t, "mass_budget", Some(1e-8));
    let trend_inversion = r.positive("tolerances", t, "trend_inversion", Some(0.05));
    Some(Tolerances {
        barrier_slack: barrier_slack?,
        upper_slack: upper_slack?,
        mass_budget: mass_budget?,
        trend_inversion: trend_inversion?,
    })
}
