//! Segmentation agreement metrics and the nonparametric tests used to
//! compare segmentation models and patient groups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BinaryMask;
use crate::stats::{chi_squared_sf, midranks, normal_two_sided, tie_sum};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask dims differ: {0:?} vs {1:?}")]
    DimensionMismatch([usize; 3], [usize; 3]),
    #[error("mask is empty")]
    EmptyMask,
    #[error("need at least 5 nonzero paired differences, got {0}")]
    TooFewPairs(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Largest pooled sample handled by exact Mann-Whitney enumeration.
pub const MANN_WHITNEY_EXACT_MAX: usize = 12;
/// Largest number of nonzero differences handled by the exact signed-rank
/// distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Dice similarity 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Foreground voxels with at least one face neighbor that is background or
/// outside the grid.
pub fn surface_voxels(m: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.dims();
    let fg = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && *m.get(x as usize, y as usize, z as usize)
    };
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !*m.get(x, y, z) {
                    continue;
                }
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                let interior = fg(xi - 1, yi, zi)
                    && fg(xi + 1, yi, zi)
                    && fg(xi, yi - 1, zi)
                    && fg(xi, yi + 1, zi)
                    && fg(xi, yi, zi - 1)
                    && fg(xi, yi, zi + 1);
                if !interior {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Squared distance transform along one line (Felzenszwalb & Huttenlocher).
/// `f` holds squared distances so far (`INFINITY` where no site reaches).
fn edt_line(f: &mut [f64], spacing: f64, v: &mut Vec<usize>, zs: &mut Vec<f64>, out: &mut [f64]) {
    let n = f.len();
    v.clear();
    zs.clear();
    let pos = |q: usize| q as f64 * spacing;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    zs.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *zs.last().unwrap() {
                        v.pop();
                        zs.pop();
                    } else {
                        v.push(q);
                        zs.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && zs[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance (mm²) from every cell of a `dims` box to
/// the nearest site.
fn squared_distance_field(dims: [usize; 3], spacing: [f64; 3], sites: &[[usize; 3]]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut d = vec![f64::INFINITY; nx * ny * nz];
    for s in sites {
        d[s[0] + nx * (s[1] + ny * s[2])] = 0.0;
    }
    let mut v = Vec::new();
    let mut zs = Vec::new();
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];

    for axis in 0..3 {
        let (len, stride) = match axis {
            0 => (nx, 1),
            1 => (ny, nx),
            _ => (nz, nx * ny),
        };
        let starts: Vec<usize> = (0..nx * ny * nz)
            .filter(|&i| {
                let [x, y, z] = [i % nx, (i / nx) % ny, i / (nx * ny)];
                [x, y, z][axis] == 0
            })
            .collect();
        for start in starts {
            for (i, l) in line[..len].iter_mut().enumerate() {
                *l = d[start + i * stride];
            }
            edt_line(&mut line[..len], spacing[axis], &mut v, &mut zs, &mut out[..len]);
            for (i, l) in line[..len].iter().enumerate() {
                d[start + i * stride] = *l;
            }
        }
    }
    d
}

/// Average symmetric surface distance in mm between voxel centers.
pub fn assd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a, b)?;
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    if sa.is_empty() || sb.is_empty() {
        return Err(MetricsError::EmptyMask);
    }

    // The joint bounding box of both surfaces contains every nearest site.
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for p in sa.iter().chain(&sb) {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let local = |p: &[usize; 3]| [p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]];
    let index = |p: [usize; 3]| p[0] + dims[0] * (p[1] + dims[1] * p[2]);
    let spacing = a.spacing();

    let la: Vec<_> = sa.iter().map(local).collect();
    let lb: Vec<_> = sb.iter().map(local).collect();
    let to_b = squared_distance_field(dims, spacing, &lb);
    let to_a = squared_distance_field(dims, spacing, &la);

    let sum_a: f64 = la.iter().map(|&p| to_b[index(p)].sqrt()).sum();
    let sum_b: f64 = lb.iter().map(|&p| to_a[index(p)].sqrt()).sum();
    Ok((sum_a + sum_b) / (la.len() + lb.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. Up to [`WILCOXON_EXACT_MAX`] pairs the
/// exact null distribution of W+ (sum of positive ranks) is used; above, the
/// normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestOutcome> {
    if x.len() != y.len() {
        return Err(MetricsError::InsufficientData(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n < 5 {
        return Err(MetricsError::TooFewPairs(n));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let p = if n <= WILCOXON_EXACT_MAX {
        // Ranks are multiples of 1/2; count sign assignments over doubled ranks.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_sum(&ties) / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            normal_two_sided(z)
        }
    };
    Ok(TestOutcome {
        statistic: w_plus,
        p_value: p,
    })
}

/// Friedman test over `scores[model][subject]` with tie correction.
pub fn friedman(scores: &[Vec<f64>]) -> Result<TestOutcome> {
    let k = scores.len();
    if k < 3 {
        return Err(MetricsError::InsufficientData(format!("need at least 3 models, got {k}")));
    }
    let n = scores[0].len();
    if n < 2 || scores.iter().any(|s| s.len() != n) {
        return Err(MetricsError::InsufficientData(
            "need at least 2 subjects scored by every model".into(),
        ));
    }
    let mut rank_sums = vec![0.0; k];
    let mut ties_total = 0.0;
    for j in 0..n {
        let column: Vec<f64> = scores.iter().map(|s| s[j]).collect();
        let (ranks, ties) = midranks(&column);
        for (sum, r) in rank_sums.iter_mut().zip(ranks) {
            *sum += r;
        }
        ties_total += tie_sum(&ties);
    }
    let (nf, kf) = (n as f64, k as f64);
    let spread: f64 = rank_sums
        .iter()
        .map(|r| (r / nf - (kf + 1.0) / 2.0).powi(2))
        .sum();
    let correction = 1.0 - ties_total / (nf * (kf * kf * kf - kf));
    let q = if correction <= 0.0 {
        0.0
    } else {
        12.0 * nf / (kf * (kf + 1.0)) * spread / correction
    };
    Ok(TestOutcome {
        statistic: q,
        p_value: chi_squared_sf(q, kf - 1.0),
    })
}

/// Two-sided Mann-Whitney U test. `statistic` is U for `x`, counting ties
/// as one half. Exact enumeration when the pooled size is at most
/// [`MANN_WHITNEY_EXACT_MAX`], otherwise the normal approximation with tie
/// and continuity corrections.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestOutcome> {
    let (n1, n2) = (x.len(), y.len());
    if n1 < 3 || n2 < 3 {
        return Err(MetricsError::InsufficientData(format!(
            "need at least 3 values per group, got {n1} and {n2}"
        )));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let base = (n1 * (n1 + 1)) as f64 / 2.0;
    let u = ranks[..n1].iter().sum::<f64>() - base;
    let mu = (n1 * n2) as f64 / 2.0;
    let n = n1 + n2;

    let p = if n <= MANN_WHITNEY_EXACT_MAX {
        let observed = (u - mu).abs();
        let mut extreme = 0u64;
        let mut total = 0u64;
        for bits in 0u32..(1 << n) {
            if bits.count_ones() as usize != n1 {
                continue;
            }
            let r: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
            total += 1;
            if (r - base - mu).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        }
        extreme as f64 / total as f64
    } else {
        let nf = n as f64;
        let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_sum(&ties) / (nf * (nf - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            normal_two_sided(((u - mu).abs() - 0.5).max(0.0) / var.sqrt())
        }
    };
    Ok(TestOutcome {
        statistic: u,
        p_value: p,
    })
}

/// Bonferroni adjustment `min(1, p·m)`.
///
/// # Panics
/// If `m` is smaller than the number of p-values.
pub fn bonferroni(pvals: &[f64], m: usize) -> Vec<f64> {
    assert!(m >= pvals.len(), "m = {m} < {} comparisons", pvals.len());
    pvals.iter().map(|p| (p * m as f64).min(1.0)).collect()
}
