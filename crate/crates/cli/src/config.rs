//! Run configuration: one TOML file per run.
//!
//! Parsing never stops at the first problem. Every missing key, bad value and
//! unknown key is collected so a broken file can be fixed in one pass.

use std::fmt;
use std::path::PathBuf;

use nslin::geometry::{Domain, Hole, Rect};
use nslin::losses::{LossWeights, SchemeId};
use nslin::model::Architecture;
use nslin::optim::{AdamConfig, LrSchedule};
use nslin::problem::{FlowError, FlowParams};
use nslin::trainer::TrainConfig;
use toml::{Table, Value};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NSLIN_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "nslin-out";

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub scales: Vec<f64>,
    /// One network with outputs `(u, v, p)` instead of three.
    pub shared: bool,
}

impl NetworkConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::mscale(&self.hidden, &self.scales)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportConfig {
    pub n_eval: usize,
    pub y0: f64,
    pub profile_points: usize,
    pub grid_nx: usize,
    pub grid_ny: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub flow: FlowParams,
    pub domain: Domain,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub report: ReportConfig,
    /// From the file; `None` falls back to the environment, then the default.
    pub output_dir: Option<PathBuf>,
    /// Rayon worker count; results do not depend on it.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const SECTIONS: [&str; 7] = ["flow", "domain", "network", "train", "optim", "report", "output"];

/// Typed access to one `[section]` that remembers which keys were read.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    seen: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str, errs: &mut Vec<String>) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                errs.push(format!("[{name}] must be a table"));
                None
            }
        };
        Self {
            name,
            table,
            seen: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn has(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn missing(&self, key: &str, errs: &mut Vec<String>) {
        errs.push(format!("missing required key '{}'", self.path(key)));
    }

    fn float(&mut self, key: &'static str, default: Option<f64>, errs: &mut Vec<String>) -> Option<f64> {
        match self.raw(key) {
            None => {
                if default.is_none() {
                    self.missing(key, errs);
                }
                default
            }
            Some(v) => {
                let x = as_float(v);
                if x.is_none() {
                    errs.push(format!("'{}' must be a number, got {v}", self.path(key)));
                }
                x
            }
        }
    }

    fn int(&mut self, key: &'static str, default: Option<i64>, errs: &mut Vec<String>) -> Option<i64> {
        match self.raw(key) {
            None => {
                if default.is_none() {
                    self.missing(key, errs);
                }
                default
            }
            Some(Value::Integer(i)) => Some(*i),
            Some(v) => {
                errs.push(format!("'{}' must be an integer, got {v}", self.path(key)));
                None
            }
        }
    }

    /// A nonnegative integer that fits `usize`/`u64`.
    fn count(&mut self, key: &'static str, default: Option<u64>, errs: &mut Vec<String>) -> Option<u64> {
        let i = self.int(key, default.map(|d| d as i64), errs)?;
        if i < 0 {
            errs.push(format!("'{}' must be nonnegative, got {i}", self.path(key)));
            return None;
        }
        Some(i as u64)
    }

    fn boolean(&mut self, key: &'static str, default: bool, errs: &mut Vec<String>) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(v) => {
                errs.push(format!("'{}' must be true or false, got {v}", self.path(key)));
                default
            }
        }
    }

    fn string(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<&'a str> {
        match self.raw(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(v) => {
                errs.push(format!("'{}' must be a string, got {v}", self.path(key)));
                None
            }
        }
    }

    fn array(&mut self, key: &'static str, errs: &mut Vec<String>) -> Option<&'a Vec<Value>> {
        match self.raw(key) {
            None => None,
            Some(Value::Array(a)) => Some(a),
            Some(v) => {
                errs.push(format!("'{}' must be an array, got {v}", self.path(key)));
                None
            }
        }
    }

    fn finish(self, errs: &mut Vec<String>) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.seen.contains(&k.as_str()) {
                    errs.push(format!("unknown key '{}.{k}'", self.name));
                }
            }
        }
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn parse_domain(sec: &mut Section<'_>, errs: &mut Vec<String>) -> Option<Domain> {
    let preset = sec.string("preset", errs);
    let has_explicit = sec.has("rect") || sec.has("holes");
    let rect_v = sec.raw("rect");
    let holes_v = sec.array("holes", errs);
    if let Some(p) = preset {
        if has_explicit {
            errs.push("domain: give either 'preset' or 'rect'/'holes', not both".into());
            return None;
        }
        return match p {
            "benchmark" => Some(Domain::benchmark()),
            "multi_hole" => Some(Domain::multi_hole()),
            other => {
                errs.push(format!("domain.preset must be \"benchmark\" or \"multi_hole\", got \"{other}\""));
                None
            }
        };
    }
    if !has_explicit {
        return Some(Domain::benchmark());
    }
    let Some(Value::Table(r)) = rect_v else {
        errs.push("domain.rect must be a table {xmin, xmax, ymin, ymax}".into());
        return None;
    };
    let mut coord = |k: &str| {
        let x = r.get(k).and_then(as_float);
        if x.is_none() {
            errs.push(format!("domain.rect.{k} must be a number"));
        }
        x
    };
    let (xmin, xmax, ymin, ymax) = (coord("xmin"), coord("xmax"), coord("ymin"), coord("ymax"));
    for k in r.keys() {
        if !["xmin", "xmax", "ymin", "ymax"].contains(&k.as_str()) {
            errs.push(format!("unknown key 'domain.rect.{k}'"));
        }
    }
    let mut holes = Vec::new();
    for (i, h) in holes_v.map(Vec::as_slice).unwrap_or_default().iter().enumerate() {
        let Value::Table(h) = h else {
            errs.push(format!("domain.holes[{i}] must be a table {{center, radius}}"));
            continue;
        };
        let center = match h.get("center") {
            Some(Value::Array(c)) if c.len() == 2 => c.iter().map(as_float).collect::<Option<Vec<f64>>>(),
            _ => None,
        };
        let radius = h.get("radius").and_then(as_float);
        for k in h.keys() {
            if k != "center" && k != "radius" {
                errs.push(format!("unknown key 'domain.holes[{i}].{k}'"));
            }
        }
        match (center, radius) {
            (Some(c), Some(radius)) => holes.push(Hole {
                center: [c[0], c[1]],
                radius,
            }),
            _ => errs.push(format!("domain.holes[{i}] needs center = [x, y] and a numeric radius")),
        }
    }
    let rect = Rect {
        xmin: xmin?,
        xmax: xmax?,
        ymin: ymin?,
        ymax: ymax?,
    };
    Domain::new(rect, holes).map_err(|e| errs.push(format!("domain: {e}"))).ok()
}

fn list<T>(
    sec: &mut Section<'_>,
    key: &'static str,
    default: Option<Vec<T>>,
    errs: &mut Vec<String>,
    item: impl Fn(&Value) -> Option<T>,
    what: &str,
) -> Option<Vec<T>> {
    match sec.array(key, errs) {
        None if sec.has(key) => None,
        None => {
            if default.is_none() {
                sec.missing(key, errs);
            }
            default
        }
        Some(a) => {
            let items: Option<Vec<T>> = a.iter().map(&item).collect();
            match items {
                Some(v) if !v.is_empty() => Some(v),
                _ => {
                    errs.push(format!("'{}' must be a nonempty array of {what}", sec.path(key)));
                    None
                }
            }
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigErrors> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![format!("TOML syntax: {e}")]))?;
        let mut errs = Vec::new();
        for k in root.keys() {
            if !SECTIONS.contains(&k.as_str()) {
                errs.push(format!("unknown section '[{k}]'"));
            }
        }

        let mut s = Section::new(&root, "flow", &mut errs);
        let m = s.int("m", None, &mut errs);
        let n = s.int("n", None, &mut errs);
        let nu = s.float("nu", None, &mut errs);
        s.finish(&mut errs);
        let flow = match (m, n, nu) {
            (Some(m), Some(n), Some(nu)) => FlowParams::new(m, n, nu)
                .map_err(|e| {
                    let key = if matches!(e, FlowError::ZeroN) { "flow.n" } else { "flow.nu" };
                    errs.push(format!("{key}: {e}"))
                })
                .ok(),
            _ => None,
        };

        let mut s = Section::new(&root, "domain", &mut errs);
        let domain = parse_domain(&mut s, &mut errs);
        s.finish(&mut errs);

        let mut s = Section::new(&root, "network", &mut errs);
        let positive_int = |v: &Value| v.as_integer().filter(|&i| i > 0).map(|i| i as usize);
        let positive_float = |v: &Value| as_float(v).filter(|x| x.is_finite() && *x > 0.0);
        let hidden = list(&mut s, "hidden", None, &mut errs, positive_int, "positive integers");
        let scales = list(&mut s, "scales", Some(vec![1.0]), &mut errs, positive_float, "positive numbers");
        let shared = s.boolean("shared", false, &mut errs);
        s.finish(&mut errs);

        let mut s = Section::new(&root, "train", &mut errs);
        let scheme = s.string("scheme", &mut errs).and_then(|k| {
            k.parse::<SchemeId>().map_err(|e| errs.push(format!("train.scheme: {e}"))).ok()
        });
        if !s.has("scheme") {
            s.missing("scheme", &mut errs);
        }
        let outer = s.count("outer_iters", None, &mut errs);
        let inner = s.count("inner_epochs", Some(1), &mut errs);
        let gamma = s.float("gamma", Some(0.9), &mut errs);
        let tau_init = s.float("tau_init", Some(1e12), &mut errs);
        let n_interior = s.count("n_interior", None, &mut errs);
        let n_boundary = s.count("n_boundary", None, &mut errs);
        let n_batches = s.count("n_batches", None, &mut errs);
        let seed = s.count("seed", Some(0), &mut errs);
        let w_bc = s.float("w_bc", Some(1.0), &mut errs);
        let w_p = s.float("w_p", Some(1.0), &mut errs);
        let checkpoint_every = if s.has("checkpoint_every") {
            s.count("checkpoint_every", None, &mut errs)
        } else {
            s.raw("checkpoint_every");
            None
        };
        let threads = if s.has("threads") {
            s.count("threads", None, &mut errs).map(|t| t as usize)
        } else {
            s.raw("threads");
            None
        };
        s.finish(&mut errs);

        let mut s = Section::new(&root, "optim", &mut errs);
        let lr = s.float("lr", None, &mut errs);
        let decay_factor = s.float("decay_factor", Some(1.0), &mut errs);
        let decay_every = s.count("decay_every", Some(50), &mut errs);
        let d = AdamConfig::default();
        let beta1 = s.float("beta1", Some(d.beta1), &mut errs);
        let beta2 = s.float("beta2", Some(d.beta2), &mut errs);
        let eps = s.float("eps", Some(d.eps), &mut errs);
        s.finish(&mut errs);

        let mut s = Section::new(&root, "report", &mut errs);
        let n_eval = s.count("n_eval", Some(10_000), &mut errs);
        let y0 = s.float("y0", Some(0.7), &mut errs);
        let profile_points = s.count("profile_points", Some(201), &mut errs);
        let grid_nx = s.count("grid_nx", Some(101), &mut errs);
        let grid_ny = s.count("grid_ny", Some(51), &mut errs);
        s.finish(&mut errs);

        let mut s = Section::new(&root, "output", &mut errs);
        let output_dir = s.string("dir", &mut errs).map(PathBuf::from);
        s.finish(&mut errs);

        // Cross-field checks only once the pieces parsed.
        if let (Some(domain), Some(y0)) = (&domain, y0) {
            let r = domain.rect();
            if !(y0 > r.ymin && y0 < r.ymax) {
                errs.push(format!("report.y0 = {y0} must lie strictly between {} and {}", r.ymin, r.ymax));
            }
        }
        if n_eval.is_some_and(|n| n < nslin::report::MIN_EVAL_POINTS as u64) {
            errs.push(format!("report.n_eval must be at least {}", nslin::report::MIN_EVAL_POINTS));
        }
        if profile_points.is_some_and(|n| n < 2) {
            errs.push("report.profile_points must be at least 2".into());
        }
        if grid_nx.is_some_and(|n| n < 2) || grid_ny.is_some_and(|n| n < 2) {
            errs.push("report.grid_nx and report.grid_ny must be at least 2".into());
        }
        if threads == Some(0) {
            errs.push("train.threads must be positive".into());
        }

        let train = (|| {
            let mut t = TrainConfig::new(
                scheme?,
                outer?,
                n_interior? as usize,
                n_boundary? as usize,
                n_batches? as usize,
                lr?,
            );
            t.inner_epochs = inner?;
            t.gamma = gamma?;
            t.tau_init = tau_init?;
            t.seed = seed?;
            t.weights = LossWeights { w_bc: w_bc?, w_p: w_p? };
            t.schedule = LrSchedule {
                initial_lr: lr?,
                decay_factor: decay_factor?,
                decay_every: decay_every?,
            };
            t.adam = AdamConfig {
                beta1: beta1?,
                beta2: beta2?,
                eps: eps?,
            };
            t.checkpoint_every = checkpoint_every;
            // Placeholder so the cadence check passes; the real directory
            // is fixed once the output directory is known.
            t.checkpoint_dir = checkpoint_every.map(|_| PathBuf::from("checkpoints"));
            Some(t)
        })();
        if let Some(t) = &train {
            errs.extend(t.violations().into_iter().map(|v| format!("train: {v}")));
        }

        if !errs.is_empty() {
            return Err(ConfigErrors(errs));
        }
        let cfg = RunConfig {
            flow: flow.expect("validated"),
            domain: domain.expect("validated"),
            network: NetworkConfig {
                hidden: hidden.expect("validated"),
                scales: scales.expect("validated"),
                shared,
            },
            train: train.expect("validated"),
            report: ReportConfig {
                n_eval: n_eval.expect("validated") as usize,
                y0: y0.expect("validated"),
                profile_points: profile_points.expect("validated") as usize,
                grid_nx: grid_nx.expect("validated") as usize,
                grid_ny: grid_ny.expect("validated") as usize,
            },
            output_dir,
            threads,
        };
        Ok(cfg)
    }

    /// Output directory: the file's `output.dir`, else `$NSLIN_OUT_DIR`, else
    /// `nslin-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Every setting, defaults included, as TOML that parses back to `self`.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        let mut t = Table::new();
        t.insert("m".into(), self.flow.m().into());
        t.insert("n".into(), self.flow.n().into());
        t.insert("nu".into(), self.flow.nu().into());
        root.insert("flow".into(), t.into());

        let mut t = Table::new();
        let r = self.domain.rect();
        let mut rect = Table::new();
        for (k, v) in [("xmin", r.xmin), ("xmax", r.xmax), ("ymin", r.ymin), ("ymax", r.ymax)] {
            rect.insert(k.into(), v.into());
        }
        t.insert("rect".into(), rect.into());
        let holes: Vec<Value> = self
            .domain
            .holes()
            .iter()
            .map(|h| {
                let mut ht = Table::new();
                ht.insert("center".into(), Value::Array(vec![h.center[0].into(), h.center[1].into()]));
                ht.insert("radius".into(), h.radius.into());
                Value::Table(ht)
            })
            .collect();
        t.insert("holes".into(), holes.into());
        root.insert("domain".into(), t.into());

        let mut t = Table::new();
        let hidden: Vec<Value> = self.network.hidden.iter().map(|&h| (h as i64).into()).collect();
        t.insert("hidden".into(), hidden.into());
        let scales: Vec<Value> = self.network.scales.iter().map(|&s| s.into()).collect();
        t.insert("scales".into(), scales.into());
        t.insert("shared".into(), self.network.shared.into());
        root.insert("network".into(), t.into());

        let c = &self.train;
        let mut t = Table::new();
        t.insert("scheme".into(), c.scheme.key().into());
        t.insert("outer_iters".into(), (c.outer_iters as i64).into());
        t.insert("inner_epochs".into(), (c.inner_epochs as i64).into());
        t.insert("gamma".into(), c.gamma.into());
        t.insert("tau_init".into(), c.tau_init.into());
        t.insert("n_interior".into(), (c.n_interior as i64).into());
        t.insert("n_boundary".into(), (c.n_boundary as i64).into());
        t.insert("n_batches".into(), (c.n_batches as i64).into());
        t.insert("seed".into(), (c.seed as i64).into());
        t.insert("w_bc".into(), c.weights.w_bc.into());
        t.insert("w_p".into(), c.weights.w_p.into());
        if let Some(k) = c.checkpoint_every {
            t.insert("checkpoint_every".into(), (k as i64).into());
        }
        if let Some(k) = self.threads {
            t.insert("threads".into(), (k as i64).into());
        }
        root.insert("train".into(), t.into());

        let mut t = Table::new();
        t.insert("lr".into(), c.schedule.initial_lr.into());
        t.insert("decay_factor".into(), c.schedule.decay_factor.into());
        t.insert("decay_every".into(), (c.schedule.decay_every as i64).into());
        t.insert("beta1".into(), c.adam.beta1.into());
        t.insert("beta2".into(), c.adam.beta2.into());
        t.insert("eps".into(), c.adam.eps.into());
        root.insert("optim".into(), t.into());

        let r = &self.report;
        let mut t = Table::new();
        t.insert("n_eval".into(), (r.n_eval as i64).into());
        t.insert("y0".into(), r.y0.into());
        t.insert("profile_points".into(), (r.profile_points as i64).into());
        t.insert("grid_nx".into(), (r.grid_nx as i64).into());
        t.insert("grid_ny".into(), (r.grid_ny as i64).into());
        root.insert("report".into(), t.into());

        if let Some(d) = &self.output_dir {
            let mut t = Table::new();
            t.insert("dir".into(), d.display().to_string().into());
            root.insert("output".into(), t.into());
        }
        toml::to_string(&root).expect("TOML table serializes")
    }
}

/// The bundled benchmark configuration.
pub const BENCHMARK_CFG: &str = include_str!("../benchmark.cfg");
