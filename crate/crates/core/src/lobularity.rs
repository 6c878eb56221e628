//! Pancreas surface lobularity (PSL).
//!
//! For each of up to seven axial slices around the slice with the most
//! body/tail voxels, rays are cast from a point above the pancreas centroid
//! to find the anterior surface, a quartic is fit to the surface, and the
//! mean point-to-fit distance (mm) is scaled by 10. The patient score is the
//! median over slices.
//!
//! The ray origin sits at the centroid column, half the slice height above
//! the topmost pancreas row. It may lie outside the image; samples outside
//! the grid count as background. Keeping the origin fixed relative to the
//! pancreas makes the score exactly invariant to whole-pixel in-plane shifts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::LabelMask;
use crate::schema::{LabelSchema, Structure};

pub const RAY_COUNT: usize = 512;
pub const RAY_STEP_PX: f64 = 0.5;
pub const TRIM_MM: f64 = 2.0;
pub const MIN_SURFACE_POINTS: usize = 25;
pub const MIN_ARC_LENGTH_MM: f64 = 4.0;
pub const MIN_USABLE_SLICES: usize = 3;
pub const SLICE_HALF_WINDOW: usize = 3;
pub const PSL_SCALE: f64 = 10.0;
/// Fit samples per surface point when searching for the nearest fit point.
pub const FIT_OVERSAMPLING: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PslError {
    #[error("pancreas labels {0:?} absent from mask")]
    LabelAbsent(Vec<u32>),
    #[error("slice has no pancreas pixels")]
    EmptySlice,
    #[error("surface degenerate: {points} points, {arc_mm:.2} mm arc after trimming")]
    DegenerateSurface { points: usize, arc_mm: f64 },
    #[error("quartic fit is rank deficient ({distinct} distinct columns)")]
    RankDeficient { distinct: usize },
    #[error("only {usable} usable slices, need {MIN_USABLE_SLICES}")]
    TooFewUsableSlices { usable: usize },
}

pub type Result<T> = std::result::Result<T, PslError>;

/// A binary axial slice, row-major with row 0 on the anterior side.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl SliceMask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Self {
        assert_eq!(rows * cols, data.len(), "slice size mismatch");
        Self { rows, cols, data }
    }

    pub fn from_labels(mask: &LabelMask, z: usize, labels: &[u32]) -> Self {
        let [nx, ny, _] = mask.dims();
        Self::new(ny, nx, mask.slice_z(z).iter().map(|l| labels.contains(l)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    fn get_signed(&self, row: i64, col: i64) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.rows
            && (col as usize) < self.cols
            && self.get(row as usize, col as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Ordered anterior surface points of one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCurve {
    /// Ray origin `(row, col)` in pixel indices, possibly above row 0.
    pub origin: [i64; 2],
    /// Surface pixels `(row, col)` in casting-angle order.
    pub pixels: Vec<[usize; 2]>,
    /// The same points in mm `(col_mm, row_mm)` measured from the origin.
    pub points: Vec<[f64; 2]>,
}

impl SurfaceCurve {
    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    fn column_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Detect the anterior pancreas boundary of one slice by ray casting.
///
/// Angle 0 points along +column and 90° along +row, i.e. into the body.
pub fn anterior_surface(slice: &SliceMask, spacing: (f64, f64)) -> Result<SurfaceCurve> {
    let mut n = 0i64;
    let mut col_sum = 0i64;
    let mut top_row = usize::MAX;
    for r in 0..slice.rows {
        for c in 0..slice.cols {
            if slice.get(r, c) {
                n += 1;
                col_sum += c as i64;
                top_row = top_row.min(r);
            }
        }
    }
    if n == 0 {
        return Err(PslError::EmptySlice);
    }
    // Round-half-up of the mean column in integer arithmetic.
    let origin_col = (2 * col_sum + n).div_euclid(2 * n);
    let origin_row = top_row as i64 - (slice.rows / 2) as i64;

    let steps = 2 * slice.cols;
    let mut pixels: Vec<[usize; 2]> = Vec::new();
    for i in 0..RAY_COUNT {
        let theta = std::f64::consts::PI * i as f64 / (RAY_COUNT - 1) as f64;
        let (dr, dc) = theta.sin_cos();
        let hit = (0..=steps).find_map(|k| {
            let t = k as f64 * RAY_STEP_PX;
            let row = origin_row + (t * dr).round() as i64;
            let col = origin_col + (t * dc).round() as i64;
            slice
                .get_signed(row, col)
                .then_some([row as usize, col as usize])
        });
        if let Some(p) = hit {
            if pixels.last() != Some(&p) {
                pixels.push(p);
            }
        }
    }

    let (sx, sy) = spacing;
    let points: Vec<[f64; 2]> = pixels
        .iter()
        .map(|&[r, c]| {
            [
                (c as i64 - origin_col) as f64 * sx,
                (r as i64 - origin_row) as f64 * sy,
            ]
        })
        .collect();

    let mut arc = Vec::with_capacity(points.len());
    let mut s = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            s += dist(points[i - 1], *p);
        }
        arc.push(s);
    }
    let total = s;
    let keep: Vec<usize> = (0..points.len())
        .filter(|&i| arc[i] >= TRIM_MM && total - arc[i] >= TRIM_MM)
        .collect();

    let curve = SurfaceCurve {
        origin: [origin_row, origin_col],
        pixels: keep.iter().map(|&i| pixels[i]).collect(),
        points: keep.iter().map(|&i| points[i]).collect(),
    };
    let arc_mm = curve.arc_length();
    if curve.points.len() < MIN_SURFACE_POINTS || arc_mm < MIN_ARC_LENGTH_MM {
        return Err(PslError::DegenerateSurface {
            points: curve.points.len(),
            arc_mm,
        });
    }
    Ok(curve)
}

/// Least-squares quartic `row_mm = Σ c_k col_mm^k`.
///
/// Internally fit in the scaled abscissa `u = (x - center) / half_width`,
/// which spans [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarticFit {
    /// Coefficients `c0..c4` in the curve's own units.
    pub coefficients: [f64; 5],
    pub center: f64,
    pub half_width: f64,
    /// Coefficients in the scaled abscissa.
    pub scaled: [f64; 5],
    pub rss: f64,
}

impl QuarticFit {
    pub fn evaluate(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.half_width;
        self.scaled.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }
}

/// Householder QR least squares for a tall `n × 5` system. Returns `None`
/// when the design is numerically rank deficient.
fn least_squares5(design: &[[f64; 5]], rhs: &[f64]) -> Option<[f64; 5]> {
    let n = design.len();
    let mut a: Vec<[f64; 5]> = design.to_vec();
    let mut b = rhs.to_vec();
    let mut diag = [0.0; 5];
    let scale = design
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));

    for k in 0..5 {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale * (n as f64).sqrt() {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k.
        a[k][k] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| a[i][k] * a[i][k]).sum();
        for j in k + 1..5 {
            let dot: f64 = (k..n).map(|i| a[i][k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                a[i][j] -= f * a[i][k];
            }
        }
        let dot: f64 = (k..n).map(|i| a[i][k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            b[i] -= f * a[i][k];
        }
        diag[k] = alpha;
    }

    let mut x = [0.0; 5];
    for k in (0..5).rev() {
        let s: f64 = (k + 1..5).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / diag[k];
    }
    Some(x)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn fit_quartic(curve: &SurfaceCurve) -> Result<QuarticFit> {
    let mut xs: Vec<f64> = curve.points.iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 5 {
        return Err(PslError::RankDeficient { distinct: xs.len() });
    }
    let (lo, hi) = curve.column_range();
    let center = 0.5 * (lo + hi);
    let half_width = 0.5 * (hi - lo);

    let design: Vec<[f64; 5]> = curve
        .points
        .iter()
        .map(|p| {
            let u = (p[0] - center) / half_width;
            [1.0, u, u * u, u * u * u, u * u * u * u]
        })
        .collect();
    let rhs: Vec<f64> = curve.points.iter().map(|p| p[1]).collect();
    let scaled = least_squares5(&design, &rhs).ok_or(PslError::RankDeficient { distinct: xs.len() })?;

    // Expand Σ a_k ((x - c)/h)^k into powers of x.
    let mut coefficients = [0.0; 5];
    for (k, a) in scaled.iter().enumerate() {
        let ak = a / half_width.powi(k as i32);
        for (j, c) in coefficients.iter_mut().enumerate().take(k + 1) {
            *c += ak * binomial(k, j) * (-center).powi((k - j) as i32);
        }
    }

    let mut fit = QuarticFit {
        coefficients,
        center,
        half_width,
        scaled,
        rss: 0.0,
    };
    fit.rss = curve
        .points
        .iter()
        .map(|p| (p[1] - fit.evaluate(p[0])).powi(2))
        .sum();
    if fit.coefficients.iter().chain(&fit.scaled).any(|c| !c.is_finite()) {
        return Err(PslError::RankDeficient { distinct: xs.len() });
    }
    Ok(fit)
}

fn refine_distance(p: [f64; 2], fit: &QuarticFit, mut a: f64, mut b: f64) -> f64 {
    let g = |x: f64| dist(p, [x, fit.evaluate(x)]);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..60 {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    gc.min(gd)
}

/// Ten times the mean distance (mm) from each surface point to the fit. The
/// nearest of `FIT_OVERSAMPLING × n` samples spread over the curve's columns
/// is refined by golden-section search between its neighbors.
pub fn slice_psl(curve: &SurfaceCurve, fit: &QuarticFit) -> f64 {
    let n = curve.points.len();
    if n == 0 {
        return 0.0;
    }
    let (lo, hi) = curve.column_range();
    let m = (FIT_OVERSAMPLING * n).max(2);
    let samples: Vec<[f64; 2]> = (0..m)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (m - 1) as f64;
            [x, fit.evaluate(x)]
        })
        .collect();
    let total: f64 = curve
        .points
        .iter()
        .map(|&p| {
            let (best, d) = samples
                .iter()
                .enumerate()
                .map(|(i, &s)| (i, dist(p, s)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            // Refine between the neighboring samples.
            let a = samples[best.saturating_sub(1)][0];
            let b = samples[(best + 1).min(m - 1)][0];
            d.min(refine_distance(p, fit, a, b))
        })
        .sum();
    PSL_SCALE * total / n as f64
}

fn per_slice_counts(mask: &LabelMask, labels: &[u32]) -> Vec<usize> {
    let nz = mask.dims()[2];
    (0..nz)
        .map(|z| mask.slice_z(z).iter().filter(|l| labels.contains(l)).count())
        .collect()
}

/// The slice with the most body+tail voxels (or whole-pancreas voxels when
/// no sub-regions are labeled) and up to three neighbors on each side that
/// still contain pancreas.
pub fn select_slices(mask: &LabelMask, schema: &LabelSchema) -> Result<Vec<usize>> {
    let pancreas = schema.resolve(Structure::Pancreas);
    let present = per_slice_counts(mask, &pancreas);
    if present.iter().all(|&c| c == 0) {
        return Err(PslError::LabelAbsent(pancreas));
    }

    let mut weights = None;
    if schema.has_body_and_tail() {
        let body_tail: Vec<u32> = [Structure::PancreasBody, Structure::PancreasTail]
            .iter()
            .filter_map(|s| schema.label(*s))
            .collect();
        let counts = per_slice_counts(mask, &body_tail);
        if counts.iter().any(|&c| c > 0) {
            weights = Some(counts);
        }
    }
    let weights = weights.unwrap_or_else(|| present.clone());

    // First maximum wins ties.
    let best = weights
        .iter()
        .enumerate()
        .fold((0, 0), |(bz, bc), (z, &c)| if c > bc { (z, c) } else { (bz, bc) })
        .0;
    let lo = best.saturating_sub(SLICE_HALF_WINDOW);
    let hi = (best + SLICE_HALF_WINDOW).min(present.len() - 1);
    Ok((lo..=hi).filter(|&z| present[z] > 0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub z: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSlice {
    pub z: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PslResult {
    pub psl_median: f64,
    pub per_slice_scores: Vec<SliceScore>,
    pub slices_used: usize,
    pub slices_skipped: usize,
    pub skipped: Vec<SkippedSlice>,
}

/// Surface, fit and score of one usable slice, kept for debug rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTrace {
    pub z: usize,
    pub curve: SurfaceCurve,
    pub fit: QuarticFit,
    pub score: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn score_slice(mask: &LabelMask, labels: &[u32], z: usize) -> Result<SliceTrace> {
    let s = mask.spacing();
    let slice = SliceMask::from_labels(mask, z, labels);
    let curve = anterior_surface(&slice, (s[0], s[1]))?;
    let fit = fit_quartic(&curve)?;
    let score = slice_psl(&curve, &fit);
    Ok(SliceTrace { z, curve, fit, score })
}

pub fn compute_psl(mask: &LabelMask, schema: &LabelSchema) -> Result<PslResult> {
    compute_psl_traced(mask, schema).map(|(r, _)| r)
}

pub fn compute_psl_traced(mask: &LabelMask, schema: &LabelSchema) -> Result<(PslResult, Vec<SliceTrace>)> {
    let slices = select_slices(mask, schema)?;
    let labels = schema.resolve(Structure::Pancreas);
    let mut traces = Vec::new();
    let mut skipped = Vec::new();
    for z in slices {
        match score_slice(mask, &labels, z) {
            Ok(t) => traces.push(t),
            Err(e) => skipped.push(SkippedSlice {
                z,
                reason: e.to_string(),
            }),
        }
    }
    if traces.len() < MIN_USABLE_SLICES {
        return Err(PslError::TooFewUsableSlices {
            usable: traces.len(),
        });
    }
    let per_slice_scores: Vec<SliceScore> = traces
        .iter()
        .map(|t| SliceScore { z: t.z, score: t.score })
        .collect();
    let scores: Vec<f64> = per_slice_scores.iter().map(|s| s.score).collect();
    let result = PslResult {
        psl_median: median(&scores).expect("at least three scores"),
        slices_used: traces.len(),
        slices_skipped: skipped.len(),
        per_slice_scores,
        skipped,
    };
    Ok((result, traces))
}
