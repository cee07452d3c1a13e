//! Error metrics against the exact solution, line profiles, field grids and
//! their CSV files.
//!
//! Predicted pressure is only determined up to a constant, so every pressure
//! comparison first removes the mean of `pred - exact` over the points at hand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Domain, GeometryError};
use crate::mlp::{NetError, Point};
use crate::model::FlowModel;
use crate::problem::{exact, FlowParams};
use crate::trainer::TrainRecord;

/// Minimum sample count for Monte Carlo error estimates.
pub const MIN_EVAL_POINTS: usize = 1000;
/// Profile points closer than this to a hole circle are dropped.
pub const HOLE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Anything that yields `(u, v, p)` at a set of points.
pub trait FieldPredictor {
    fn predict(&self, points: &[Point]) -> Result<Vec<[f64; 3]>, NetError>;
}

impl FieldPredictor for FlowModel {
    fn predict(&self, points: &[Point]) -> Result<Vec<[f64; 3]>, NetError> {
        self.eval_values(points)
    }
}

/// Wraps a pointwise closure, e.g. the exact solution itself.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(Point) -> [f64; 3]> FieldPredictor for FnPredictor<F> {
    fn predict(&self, points: &[Point]) -> Result<Vec<[f64; 3]>, NetError> {
        Ok(points.iter().map(|&x| (self.0)(x)).collect())
    }
}

fn exact_uvp(fp: &FlowParams, x: Point) -> [f64; 3] {
    let e = exact(fp, x);
    [e.u, e.v, e.p]
}

fn mean_offset(pred: &[[f64; 3]], truth: &[[f64; 3]], k: usize) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| p[k] - t[k]).sum::<f64>() / pred.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub value: f64,
    /// Set when the exact field vanishes on the samples, in which case
    /// `value` is the absolute RMS error instead of a ratio.
    pub absolute: bool,
}

impl FieldError {
    fn from_sums(num: f64, den: f64, n: usize) -> Self {
        if den > 0.0 {
            Self {
                value: (num / den).sqrt(),
                absolute: false,
            }
        } else {
            Self {
                value: (num / n as f64).sqrt(),
                absolute: true,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub u: FieldError,
    pub v: FieldError,
    /// Gauge-fixed.
    pub p: FieldError,
    /// `‖(u, v) - (u*, v*)‖ / ‖(u*, v*)‖` over the same samples.
    pub velocity: FieldError,
    pub n_eval: usize,
}

/// Monte Carlo relative L2 errors over `n_eval` uniform interior samples.
pub fn relative_l2<P: FieldPredictor + ?Sized, R: Rng + ?Sized>(
    pred: &P,
    fp: &FlowParams,
    domain: &Domain,
    n_eval: usize,
    rng: &mut R,
) -> Result<ErrorReport, ReportError> {
    if n_eval < MIN_EVAL_POINTS {
        return Err(ReportError::Invalid(format!(
            "n_eval must be at least {MIN_EVAL_POINTS}, got {n_eval}"
        )));
    }
    let pts = domain.sample_interior(n_eval, rng)?;
    let got = pred.predict(&pts)?;
    let truth: Vec<[f64; 3]> = pts.iter().map(|&x| exact_uvp(fp, x)).collect();
    let shift = mean_offset(&got, &truth, 2);
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    for (g, t) in got.iter().zip(&truth) {
        for k in 0..3 {
            let d = if k == 2 { g[k] - t[k] - shift } else { g[k] - t[k] };
            num[k] += d * d;
            den[k] += t[k] * t[k];
        }
    }
    Ok(ErrorReport {
        u: FieldError::from_sums(num[0], den[0], n_eval),
        v: FieldError::from_sums(num[1], den[1], n_eval),
        p: FieldError::from_sums(num[2], den[2], n_eval),
        velocity: FieldError::from_sums(num[0] + num[1], den[0] + den[1], n_eval),
        n_eval,
    })
}

pub const FIELD_NAMES: [&str; 3] = ["u", "v", "p"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineProfile {
    pub y0: f64,
    pub xs: Vec<f64>,
    /// Pressure already shifted by the profile's mean offset.
    pub pred: Vec<[f64; 3]>,
    pub exact: Vec<[f64; 3]>,
}

impl LineProfile {
    pub fn abs_err(&self, i: usize, k: usize) -> f64 {
        (self.pred[i][k] - self.exact[i][k]).abs()
    }

    /// `|pred - exact| / (|exact| + 1e-12)`
    pub fn rel_err(&self, i: usize, k: usize) -> f64 {
        self.abs_err(i, k) / (self.exact[i][k].abs() + 1e-12)
    }
}

/// Values along `y = y0` at `n_pts` equispaced abscissae. The end points are
/// pulled inside the rectangle by `1e-9` of its width and points inside or
/// within `HOLE_TOL` of a hole are skipped.
pub fn line_profile<P: FieldPredictor + ?Sized>(
    pred: &P,
    fp: &FlowParams,
    domain: &Domain,
    y0: f64,
    n_pts: usize,
) -> Result<LineProfile, ReportError> {
    let r = domain.rect();
    if !(y0 > r.ymin && y0 < r.ymax) {
        return Err(ReportError::Invalid(format!(
            "profile line y = {y0} is not inside ({}, {})",
            r.ymin, r.ymax
        )));
    }
    if n_pts < 2 {
        return Err(ReportError::Invalid(format!("a profile needs at least 2 points, got {n_pts}")));
    }
    let eps = 1e-9 * r.width();
    let (a, b) = (r.xmin + eps, r.xmax - eps);
    let xs: Vec<f64> = (0..n_pts)
        .map(|i| a + (b - a) * i as f64 / (n_pts - 1) as f64)
        .filter(|&x| domain.hole_clearance([x, y0]).is_none_or(|c| c > HOLE_TOL))
        .collect();
    let pts: Vec<Point> = xs.iter().map(|&x| [x, y0]).collect();
    let mut got = pred.predict(&pts)?;
    let truth: Vec<[f64; 3]> = pts.iter().map(|&x| exact_uvp(fp, x)).collect();
    if !pts.is_empty() {
        let shift = mean_offset(&got, &truth, 2);
        got.iter_mut().for_each(|g| g[2] -= shift);
    }
    Ok(LineProfile {
        y0,
        xs,
        pred: got,
        exact: truth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub x: f64,
    pub y: f64,
    /// `(pred, exact)` for `(u, v, p)`; `None` inside a hole.
    pub values: Option<([f64; 3], [f64; 3])>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    /// Row-major with `x` varying fastest.
    pub nodes: Vec<GridNode>,
}

impl FieldGrid {
    pub fn masked_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.values.is_none()).count()
    }
}

/// A regular `nx x ny` grid over the closed rectangle. Nodes strictly inside
/// a hole are masked; predicted pressure is gauge-fixed over the rest.
pub fn field_grid<P: FieldPredictor + ?Sized>(
    pred: &P,
    fp: &FlowParams,
    domain: &Domain,
    nx: usize,
    ny: usize,
) -> Result<FieldGrid, ReportError> {
    if nx < 2 || ny < 2 {
        return Err(ReportError::Invalid(format!("grid needs at least 2x2 nodes, got {nx}x{ny}")));
    }
    let r = domain.rect();
    let coords: Vec<Point> = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                [
                    r.xmin + r.width() * i as f64 / (nx - 1) as f64,
                    r.ymin + r.height() * j as f64 / (ny - 1) as f64,
                ]
            })
        })
        .collect();
    let live: Vec<Point> = coords
        .iter()
        .copied()
        .filter(|&p| domain.hole_clearance(p).is_none_or(|c| c >= 0.0))
        .collect();
    let mut got = pred.predict(&live)?;
    let truth: Vec<[f64; 3]> = live.iter().map(|&x| exact_uvp(fp, x)).collect();
    if !live.is_empty() {
        let shift = mean_offset(&got, &truth, 2);
        got.iter_mut().for_each(|g| g[2] -= shift);
    }
    let mut it = got.into_iter().zip(truth);
    let nodes = coords
        .into_iter()
        .map(|p| {
            let inside = domain.hole_clearance(p).is_none_or(|c| c >= 0.0);
            GridNode {
                x: p[0],
                y: p[1],
                values: if inside { it.next() } else { None },
            }
        })
        .collect();
    Ok(FieldGrid { nx, ny, nodes })
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ReportError> {
    let file = File::create(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(path: &Path, mut w: csv::Writer<BufWriter<File>>) -> Result<(), ReportError> {
    let io = |source| ReportError::Io { path: path.to_path_buf(), source };
    w.flush().map_err(io)?;
    w.into_inner()
        .map_err(|e| io(e.into_error()))?
        .flush()
        .map_err(io)
}

fn row<W: Write>(path: &Path, w: &mut csv::Writer<W>, fields: &[String]) -> Result<(), ReportError> {
    w.write_record(fields).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

// `Display` for f64 prints the shortest string that parses back to the same
// value, so the files round-trip exactly.
fn num(x: f64) -> String {
    x.to_string()
}

pub const LOSS_HISTORY_HEADER: [&str; 11] =
    ["epoch", "r_u", "r_v", "r_p", "b_u", "total", "lr", "tau", "frozen_updated", "r_div", "r_grad"];

/// One row per epoch. Wall-clock time is left out so reruns give identical files.
pub fn write_loss_history(record: &TrainRecord, path: &Path) -> Result<(), ReportError> {
    let mut w = create(path)?;
    row(path, &mut w, &LOSS_HISTORY_HEADER.map(String::from))?;
    for e in &record.epochs {
        let l = &e.loss;
        let fields = [
            e.epoch.to_string(),
            num(l.r_u),
            num(l.r_v),
            num(l.r_p),
            num(l.b_u),
            num(l.total),
            num(e.lr),
            num(e.tau),
            u8::from(e.frozen_updated).to_string(),
            num(l.r_div),
            num(l.r_grad),
        ];
        row(path, &mut w, &fields)?;
    }
    finish(path, w)
}

/// `profile_<field>.csv` with columns `x, pred, exact, rel_err, abs_err`.
pub fn write_profile(profile: &LineProfile, field: usize, path: &Path) -> Result<(), ReportError> {
    let mut w = create(path)?;
    row(path, &mut w, &["x", "pred", "exact", "rel_err", "abs_err"].map(String::from))?;
    for (i, &x) in profile.xs.iter().enumerate() {
        let fields = [
            num(x),
            num(profile.pred[i][field]),
            num(profile.exact[i][field]),
            num(profile.rel_err(i, field)),
            num(profile.abs_err(i, field)),
        ];
        row(path, &mut w, &fields)?;
    }
    finish(path, w)
}

/// Writes `profile_u.csv`, `profile_v.csv` and `profile_p.csv` into `dir`.
pub fn write_profiles(profile: &LineProfile, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    FIELD_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let path = dir.join(format!("profile_{name}.csv"));
            write_profile(profile, k, &path).map(|()| path)
        })
        .collect()
}

/// Unmasked nodes only; the `masked` column is kept for a stable schema.
pub fn write_grid(grid: &FieldGrid, path: &Path) -> Result<(), ReportError> {
    let mut w = create(path)?;
    let header = ["x", "y", "u_pred", "v_pred", "p_pred", "u_exact", "v_exact", "p_exact", "masked"];
    row(path, &mut w, &header.map(String::from))?;
    for n in &grid.nodes {
        if let Some((p, e)) = n.values {
            let fields = [
                num(n.x),
                num(n.y),
                num(p[0]),
                num(p[1]),
                num(p[2]),
                num(e[0]),
                num(e[1]),
                num(e[2]),
                "0".to_string(),
            ];
            row(path, &mut w, &fields)?;
        }
    }
    finish(path, w)
}
