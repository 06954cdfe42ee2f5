//! Analytics on the (mean, dispersion) plane: state scatter, kernel density
//! grid, transition edges, a cell-averaged vector field, recurrent
//! forecasting and mutual information between the two signals.

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};
use crate::series::DualSignal;
use crate::stats::{normal_cdf, std_sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    /// 0-based time index.
    pub t: usize,
    pub m: f64,
    pub s: f64,
}

/// One point per time step, in time order.
pub fn states(signal: &DualSignal) -> Vec<StatePoint> {
    signal
        .mean()
        .iter()
        .zip(signal.dispersion())
        .enumerate()
        .map(|(t, (m, s))| StatePoint { t, m: *m, s: *s })
        .collect()
}

/// Directed edge `t -> t + 1` with its origin and displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub m_from: f64,
    pub s_from: f64,
    pub dm: f64,
    pub ds: f64,
}

pub fn transitions(points: &[StatePoint]) -> Result<Vec<Edge>> {
    if points.len() < 2 {
        return invalid(format!("transitions need at least 2 points, got {}", points.len()));
    }
    Ok(points
        .windows(2)
        .map(|w| Edge {
            from: w[0].t,
            to: w[1].t,
            m_from: w[0].m,
            s_from: w[0].s,
            dm: w[1].m - w[0].m,
            ds: w[1].s - w[0].s,
        })
        .collect())
}

/// Cell edges of a rectangular grid; cell `(i, j)` spans
/// `m_edges[i]..m_edges[i+1]` by `s_edges[j]..s_edges[j+1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub m_edges: Vec<f64>,
    pub s_edges: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    (0..=cells)
        .map(|k| if k == cells { hi } else { lo + (hi - lo) * k as f64 / cells as f64 })
        .collect()
}

fn locate(edges: &[f64], v: f64) -> Option<usize> {
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    if !(v >= lo && v <= hi) {
        return None;
    }
    // the last cell is closed on the right
    let k = edges.partition_point(|e| *e <= v);
    Some(k.saturating_sub(1).min(edges.len() - 2))
}

impl GridAxes {
    pub fn nm(&self) -> usize {
        self.m_edges.len() - 1
    }

    pub fn ns(&self) -> usize {
        self.s_edges.len() - 1
    }

    pub fn m_centers(&self) -> Vec<f64> {
        self.m_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn s_centers(&self) -> Vec<f64> {
        self.s_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Row-major index `i * ns + j` of the cell holding `(m, s)`.
    pub fn cell_of(&self, m: f64, s: f64) -> Option<usize> {
        Some(locate(&self.m_edges, m)? * self.ns() + locate(&self.s_edges, s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub axes: GridAxes,
    /// Row-major cell masses (`i` over the mean axis); they sum to 1.
    pub cells: Vec<f64>,
    pub bandwidth: (f64, f64),
}

/// Per-axis Silverman bandwidth `1.06 σ T^(-1/5)`.
pub fn silverman(values: &[f64]) -> f64 {
    1.06 * std_sample(values) * (values.len() as f64).powf(-0.2)
}

/// Probability mass of a kernel centered at `v` over each cell; a zero
/// bandwidth puts all mass in the cell holding `v`.
fn axis_masses(edges: &[f64], v: f64, h: f64) -> Vec<f64> {
    if h == 0.0 {
        let mut out = vec![0.0; edges.len() - 1];
        if let Some(k) = locate(edges, v) {
            out[k] = 1.0;
        }
        return out;
    }
    let cdf: Vec<f64> = edges.iter().map(|e| normal_cdf((e - v) / h)).collect();
    cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

/// Axis range covering the data plus three bandwidths; a constant axis gets
/// a unit-scale window around its value.
fn axis_range(values: &[f64], h: f64, non_negative: bool) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = if h > 0.0 {
        3.0 * h
    } else if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1.0)
    };
    let lo = lo - pad;
    (if non_negative { lo.max(0.0) } else { lo }, hi + pad)
}

/// Gaussian kernel density of the points integrated over an `nm x ns` grid.
///
/// `bandwidth = None` uses the Silverman rule per axis and rejects a set of
/// identical points. An explicit bandwidth may contain zeros, which turns
/// that axis into a histogram.
pub fn density_grid(points: &[StatePoint], grid: (usize, usize), bandwidth: Option<(f64, f64)>) -> Result<DensityGrid> {
    let (nm, ns) = grid;
    if nm < 2 || ns < 2 {
        return invalid(format!("density grid needs at least 2 x 2 cells, got {nm} x {ns}"));
    }
    if points.len() < 2 {
        return invalid("density grid needs at least 2 points");
    }
    let ms: Vec<f64> = points.iter().map(|p| p.m).collect();
    let ss: Vec<f64> = points.iter().map(|p| p.s).collect();
    let (hm, hs) = match bandwidth {
        Some((hm, hs)) => {
            if !(hm.is_finite() && hm >= 0.0 && hs.is_finite() && hs >= 0.0) {
                return invalid(format!("bandwidth must be finite and non-negative, got ({hm}, {hs})"));
            }
            (hm, hs)
        }
        None => {
            let (hm, hs) = (silverman(&ms), silverman(&ss));
            if hm == 0.0 && hs == 0.0 {
                return degenerate("all state points are identical; the kernel bandwidth is zero");
            }
            (hm, hs)
        }
    };
    let (m_lo, m_hi) = axis_range(&ms, hm, false);
    let (s_lo, s_hi) = axis_range(&ss, hs, true);
    let axes = GridAxes { m_edges: linspace(m_lo, m_hi, nm), s_edges: linspace(s_lo, s_hi, ns) };
    let mut cells = vec![0.0; nm * ns];
    for p in points {
        let am = axis_masses(&axes.m_edges, p.m, hm);
        let asx = axis_masses(&axes.s_edges, p.s, hs);
        for (i, a) in am.iter().enumerate().filter(|(_, a)| **a > 0.0) {
            for (j, b) in asx.iter().enumerate() {
                cells[i * ns + j] += a * b;
            }
        }
    }
    let total: f64 = cells.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return degenerate("kernel mass on the grid is zero");
    }
    cells.iter_mut().for_each(|c| *c /= total);
    Ok(DensityGrid { axes, cells, bandwidth: (hm, hs) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Supported,
    Interpolated,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub axes: GridAxes,
    pub dm: Vec<f64>,
    pub ds: Vec<f64>,
    /// Number of edges originating in each cell.
    pub support: Vec<usize>,
    pub status: Vec<CellStatus>,
}

/// Mean displacement of the edges originating in each cell.
///
/// With `idw_power = Some(p)`, empty cells are filled by inverse-distance
/// weighting (distance in cell units) from the supported cells and flagged
/// as interpolated; otherwise they stay flagged empty with a zero vector.
/// Edges whose origin lies outside the grid are ignored.
pub fn vector_field(edges: &[Edge], axes: &GridAxes, idw_power: Option<f64>) -> Result<VectorField> {
    if edges.is_empty() {
        return invalid("vector field needs at least one edge");
    }
    if let Some(p) = idw_power {
        if !(p.is_finite() && p > 0.0) {
            return invalid(format!("IDW power must be positive, got {p}"));
        }
    }
    let n = axes.nm() * axes.ns();
    let mut dm = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let mut support = vec![0usize; n];
    for e in edges {
        if let Some(c) = axes.cell_of(e.m_from, e.s_from) {
            dm[c] += e.dm;
            ds[c] += e.ds;
            support[c] += 1;
        }
    }
    if support.iter().all(|k| *k == 0) {
        return degenerate("no edge originates inside the grid");
    }
    let mut status = vec![CellStatus::Empty; n];
    for c in 0..n {
        if support[c] > 0 {
            dm[c] /= support[c] as f64;
            ds[c] /= support[c] as f64;
            status[c] = CellStatus::Supported;
        }
    }
    if let Some(power) = idw_power {
        let ns = axes.ns();
        let supported: Vec<usize> = (0..n).filter(|c| support[*c] > 0).collect();
        for c in (0..n).filter(|c| support[*c] == 0) {
            let (ci, cj) = ((c / ns) as f64, (c % ns) as f64);
            let (mut wsum, mut vm, mut vs) = (0.0, 0.0, 0.0);
            for &k in &supported {
                let (ki, kj) = ((k / ns) as f64, (k % ns) as f64);
                let d = ((ci - ki).powi(2) + (cj - kj).powi(2)).sqrt();
                let w = d.powf(-power);
                wsum += w;
                vm += w * dm[k];
                vs += w * ds[k];
            }
            dm[c] = vm / wsum;
            ds[c] = vs / wsum;
            status[c] = CellStatus::Interpolated;
        }
    }
    Ok(VectorField { axes: axes.clone(), dm, ds, support, status })
}

/// Bilinear weights of `v` between neighbouring centers, clamped at the ends.
fn bracket(centers: &[f64], v: f64) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if v <= centers[0] {
        return (0, 0, 0.0);
    }
    if v >= centers[last] {
        return (last, last, 0.0);
    }
    let k = centers.partition_point(|c| *c <= v) - 1;
    let frac = (v - centers[k]) / (centers[k + 1] - centers[k]);
    (k, k + 1, frac)
}

impl VectorField {
    /// Displacement at `(m, s)` by bilinear interpolation between cell centers.
    pub fn at(&self, m: f64, s: f64) -> (f64, f64) {
        let ns = self.axes.ns();
        let (i0, i1, a) = bracket(&self.axes.m_centers(), m);
        let (j0, j1, b) = bracket(&self.axes.s_centers(), s);
        let corners = [(i0, j0, (1.0 - a) * (1.0 - b)), (i1, j0, a * (1.0 - b)), (i0, j1, (1.0 - a) * b), (i1, j1, a * b)];
        corners.iter().fold((0.0, 0.0), |(vm, vs), &(i, j, w)| {
            let c = i * ns + j;
            (vm + w * self.dm[c], vs + w * self.ds[c])
        })
    }
}

/// Follows the field for `steps` steps from `current`.
pub fn forecast_next(current: StatePoint, field: &VectorField, density: &DensityGrid, steps: usize) -> Result<Vec<StatePoint>> {
    if field.axes != density.axes {
        return invalid("vector field and density grid use different grids");
    }
    if field.axes.cell_of(current.m, current.s).is_none() {
        return Err(Error::OutOfDomain(format!(
            "start ({}, {}) lies outside the grid [{}, {}] x [{}, {}]",
            current.m,
            current.s,
            field.axes.m_edges[0],
            field.axes.m_edges[field.axes.nm()],
            field.axes.s_edges[0],
            field.axes.s_edges[field.axes.ns()],
        )));
    }
    let mut out = Vec::with_capacity(steps);
    let mut p = current;
    for _ in 0..steps {
        let (dm, ds) = field.at(p.m, p.s);
        p = StatePoint { t: p.t + 1, m: p.m + dm, s: (p.s + ds).max(0.0) };
        out.push(p);
    }
    Ok(out)
}

/// Equal-frequency bin of each value (ties broken by position).
fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]).then(a.cmp(b)));
    let mut out = vec![0; x.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / x.len();
    }
    out
}

/// Plug-in mutual information (natural log) with equal-frequency bins.
pub fn mutual_information(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return invalid(format!("series lengths differ: {} and {}", a.len(), b.len()));
    }
    if bins < 2 {
        return invalid(format!("mutual information needs at least 2 bins, got {bins}"));
    }
    if a.len() < bins {
        return invalid(format!("{} points cannot fill {bins} bins", a.len()));
    }
    let constant = |x: &[f64]| x.iter().all(|v| *v == x[0]);
    if constant(a) || constant(b) {
        return degenerate("mutual information of a constant series");
    }
    let (ba, bb) = (quantile_bins(a, bins), quantile_bins(b, bins));
    let n = a.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (i, j) in ba.iter().zip(&bb) {
        joint[i * bins + j] += 1;
        pa[*i] += 1;
        pb[*j] += 1;
    }
    // summing sorted terms makes the estimate exactly symmetric in (a, b)
    let mut terms: Vec<f64> = (0..bins * bins)
        .filter(|c| joint[*c] > 0)
        .map(|c| {
            let pij = joint[c] as f64 / n;
            let marg = (pa[c / bins] as f64 / n) * (pb[c % bins] as f64 / n);
            pij * (pij / marg).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}
