//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use psl_core::grid::{BinaryMask, LabelMask, Volume};
use psl_core::lobularity::compute_psl;
use psl_core::phantom::{make_pancreas_phantom, make_synthetic_cohort, EffectSizes, PhantomSpec};
use psl_core::schema::Structure;
use psl_core::screening::{
    auc, bootstrap_ci, fit_logistic, labeled_cases, roc_auc, run_screening, LabelRules, Metric, ModelPreset,
    ScreeningConfig, DEFAULT_RIDGE,
};
use psl_core::segmetrics::{assd, dice, friedman, mann_whitney_u, wilcoxon_signed_rank};
use psl_core::stats::normal_cdf;
use psl_core::volio::{self, Datatype, Endian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn psl_of(amplitude: f64) -> f64 {
    let ph = make_pancreas_phantom(&PhantomSpec::serrated(amplitude, 8.0)).expect("phantom");
    compute_psl(&ph.mask, &ph.schema).expect("psl").psl_median
}

fn c1_psl_analytic() -> Result<String, String> {
    let target = 10.0 * (2.0 / std::f64::consts::PI) * 2.0;
    let serrated = psl_of(2.0);
    let smooth = psl_of(0.0);
    let rel = (serrated - target).abs() / target;
    let detail = format!("serrated {serrated:.3} vs {target:.3} ({:.1}%), smooth {smooth:.3}", 100.0 * rel);
    ensure(rel <= 0.2, format!("serrated off target: {detail}"))?;
    ensure(smooth < 0.4 * serrated, format!("smooth too rough: {detail}"))?;
    Ok(detail)
}

fn c2_psl_monotone() -> Result<String, String> {
    let amps = [0.0, 0.5, 1.0, 2.0, 4.0];
    let scores: Vec<f64> = amps.iter().map(|&a| psl_of(a)).collect();
    let detail = format!("{scores:.3?}");
    ensure(scores.windows(2).all(|w| w[0] < w[1]), format!("not increasing: {detail}"))?;
    Ok(detail)
}

fn shifted(mask: &LabelMask, dx: i64, dy: i64) -> LabelMask {
    let [nx, ny, nz] = mask.dims();
    let mut out = LabelMask::filled(mask.dims(), mask.spacing(), 0).unwrap();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let l = *mask.get(x, y, z);
                if l == 0 {
                    continue;
                }
                let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                assert!(tx >= 0 && ty >= 0 && (tx as usize) < nx && (ty as usize) < ny, "shift leaves the grid");
                out.set(tx as usize, ty as usize, z, l);
            }
        }
    }
    out
}

fn c3_translation() -> Result<String, String> {
    let ph = make_pancreas_phantom(&PhantomSpec::serrated(2.0, 8.0)).expect("phantom");
    let pancreas = ph.schema.resolve(Structure::Pancreas);
    let only = ph.mask.map(|l| if pancreas.contains(l) { *l } else { 0 });
    let base = compute_psl(&only, &ph.schema).expect("psl").psl_median;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20 {
        let (dx, dy) = (rng.random_range(-60..=60), rng.random_range(-60..=60));
        let got = compute_psl(&shifted(&only, dx, dy), &ph.schema).expect("psl").psl_median;
        ensure(
            got.to_bits() == base.to_bits(),
            format!("shift #{i} ({dx},{dy}): {got:e} != {base:e}"),
        )?;
    }
    Ok(format!("20 shifts, psl {base:.6} bit-identical"))
}

/// Face-connected boundary voxels, out-of-grid neighbors counted as outside.
fn brute_surface(m: &BinaryMask) -> Vec<[usize; 3]> {
    let d = m.dims();
    let mut out = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if !*m.get(x, y, z) {
                    continue;
                }
                let p = [x as i64, y as i64, z as i64];
                let exposed = (0..3).any(|a| {
                    [-1i64, 1].iter().any(|&s| {
                        let mut q = p;
                        q[a] += s;
                        q[a] < 0 || q[a] >= d[a] as i64 || !*m.get(q[0] as usize, q[1] as usize, q[2] as usize)
                    })
                });
                if exposed {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn brute_assd(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let s = a.spacing();
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    let nearest = |p: &[usize; 3], set: &[[usize; 3]]| {
        set.iter()
            .map(|q| (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * s[k]).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let total: f64 = sa.iter().map(|p| nearest(p, &sb)).sum::<f64>() + sb.iter().map(|q| nearest(q, &sa)).sum::<f64>();
    total / (sa.len() + sb.len()) as f64
}

fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3]) -> BinaryMask {
    let density = rng.random_range(0.05..0.6);
    let mut data: Vec<bool> = (0..dims.iter().product()).map(|_| rng.random_bool(density)).collect();
    if !data.iter().any(|&v| v) {
        data[0] = true;
    }
    BinaryMask::new(dims, spacing, data).unwrap()
}

fn c4_assd_dice() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let dims = [rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=12)];
        let spacing = [rng.random_range(0.3..2.0), rng.random_range(0.3..2.0), rng.random_range(0.5..3.0)];
        let a = random_mask(&mut rng, dims, spacing);
        let b = random_mask(&mut rng, dims, spacing);
        let got = assd(&a, &b).map_err(|e| format!("pair {i}: {e}"))?;
        let want = brute_assd(&a, &b);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-9, format!("pair {i}: assd {got} vs {want}"))?;

        let sa: HashSet<usize> = (0..a.len()).filter(|&k| a.data()[k]).collect();
        let sb: HashSet<usize> = (0..b.len()).filter(|&k| b.data()[k]).collect();
        let want = 2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64;
        let got = dice(&a, &b).map_err(|e| e.to_string())?;
        ensure(got == want, format!("pair {i}: dice {got} vs {want}"))?;
    }
    Ok(format!("200 pairs, max ASSD error {worst:.1e} mm, Dice exact"))
}

/// Unpenalized Newton-Raphson on the raw design with Gaussian elimination,
/// iterated until the step vanishes.
fn newton_oracle(x: &[Vec<f64>], y: &[bool]) -> Vec<f64> {
    let p = x[0].len() + 1;
    let rows: Vec<Vec<f64>> = x.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let mut b = vec![0.0; p];
    for _ in 0..500 {
        let mut m = vec![vec![0.0; p + 1]; p];
        for (r, &yi) in rows.iter().zip(y) {
            let eta: f64 = r.iter().zip(&b).map(|(a, c)| a * c).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            for i in 0..p {
                m[i][p] += r[i] * (yi as u8 as f64 - mu);
                for j in 0..p {
                    m[i][j] += r[i] * r[j] * mu * (1.0 - mu);
                }
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, piv);
            for r in c + 1..p {
                let f = m[r][c] / m[c][c];
                for k in c..=p {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut d = vec![0.0; p];
        for r in (0..p).rev() {
            let s: f64 = (r + 1..p).map(|k| m[r][k] * d[k]).sum();
            d[r] = (m[r][p] - s) / m[r][r];
        }
        for i in 0..p {
            b[i] += d[i];
        }
        if d.iter().all(|v| v.abs() <= 1e-15 * (1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max))) {
            break;
        }
    }
    b
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lr_fixtures() -> Vec<(Vec<Vec<f64>>, Vec<bool>)> {
    let f1 = (
        (1..=12).map(|i| vec![i as f64]).collect(),
        [0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 1].iter().map(|&v| v == 1).collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x2: Vec<Vec<f64>> = (0..30).map(|_| vec![40.0 + 12.0 * normal(&mut rng), 25.0 + 4.0 * normal(&mut rng)]).collect();
    let y2 = x2.iter().map(|r| rng.random_bool(sigmoid(0.06 * (r[0] - 40.0) + 0.2 * (r[1] - 25.0)))).collect();
    let x3: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let a = normal(&mut rng);
            let b = 0.6 * a + 0.8 * normal(&mut rng);
            vec![a, 100.0 * b, 0.01 * normal(&mut rng)]
        })
        .collect();
    let y3 = x3.iter().map(|r| rng.random_bool(sigmoid(0.8 * r[0] - 0.005 * r[1] + 30.0 * r[2]))).collect();
    vec![f1, (x2, y2), (x3, y3)]
}

fn c5_logistic() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (i, (x, y)) in lr_fixtures().into_iter().enumerate() {
        let names: Vec<String> = (0..x[0].len()).map(|j| format!("x{j}")).collect();
        let m = fit_logistic(&x, &y, &names, DEFAULT_RIDGE).map_err(|e| format!("fixture {i}: {e}"))?;
        ensure(m.converged, format!("fixture {i} did not converge"))?;
        let oracle = newton_oracle(&x, &y);
        for (got, want) in m.raw_coefficients().iter().zip(&oracle) {
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-6, format!("fixture {i}: {got} vs oracle {want}"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for problem in 0..100 {
        let n = rng.random_range(20..80);
        let k = rng.random_range(1..=4);
        let beta: Vec<f64> = (0..k).map(|_| 3.0 * normal(&mut rng)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| normal(&mut rng)).collect()).collect();
        let mut y: Vec<bool> = x
            .iter()
            .map(|r| rng.random_bool(sigmoid(r.iter().zip(&beta).map(|(a, b)| a * b).sum())))
            .collect();
        y[0] = true;
        y[1] = false;
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let m = fit_logistic(&x, &y, &names, DEFAULT_RIDGE).map_err(|e| format!("problem {problem}: {e}"))?;
        ensure(
            m.penalized_trace.windows(2).all(|w| w[1] >= w[0]),
            format!("problem {problem}: log-likelihood decreased: {:?}", m.penalized_trace),
        )?;
    }
    Ok(format!("3 fixtures within {worst:.1e} of Newton oracle; 100 traces non-decreasing"))
}

fn c6_auc() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for set in 0..500 {
        let n = rng.random_range(2..=60);
        let levels = rng.random_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let mut wins = 0.0;
        let (mut pos, mut neg) = (0.0, 0.0);
        for i in 0..n {
            if labels[i] {
                pos += 1.0;
            } else {
                neg += 1.0;
            }
            for j in 0..n {
                if labels[i] && !labels[j] {
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let want = wins / (pos * neg);
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure(got == want, format!("set {set}: auc {got} vs {want}"))?;

        let roc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let youden = roc.sensitivity + roc.specificity - 1.0;
        for &t in &scores {
            let tp = (0..n).filter(|&i| labels[i] && scores[i] >= t).count() as f64;
            let fp = (0..n).filter(|&i| !labels[i] && scores[i] >= t).count() as f64;
            ensure(
                tp / pos - fp / neg <= youden + 1e-12,
                format!("set {set}: threshold {t} beats the Youden point"),
            )?;
        }
    }
    Ok("500 sets exact; Youden optimal".into())
}

fn c7_exact_tests() -> Result<String, String> {
    let w = wilcoxon_signed_rank(&[11.0, 12.0, 13.0, 14.0, 15.0], &[10.0; 5]).map_err(|e| e.to_string())?;
    ensure(w.p_value == 0.0625, format!("wilcoxon p {}", w.p_value))?;
    let m = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure(m.p_value == 0.1, format!("mann-whitney p {}", m.p_value))?;
    let f = friedman(&vec![vec![0.8; 6]; 3]).map_err(|e| e.to_string())?;
    ensure(f.p_value == 1.0, format!("friedman p {}", f.p_value))?;
    Ok(format!("wilcoxon {}, mann-whitney {}, friedman {}", w.p_value, m.p_value, f.p_value))
}

fn c8_screening() -> Result<String, String> {
    let cohort = make_synthetic_cohort(400, &EffectSizes::strong(), 1).map_err(|e| e.to_string())?;
    let (cases, excluded) = labeled_cases(&cohort.records, &cohort.biomarkers, &LabelRules::default());
    ensure(excluded.is_empty(), format!("{} patients excluded", excluded.len()))?;
    let config = ScreeningConfig {
        bootstrap_resamples: 2000,
        ..ScreeningConfig::default()
    };
    let report = run_screening(&cases, &config).map_err(|e| e.to_string())?;
    let auc_of = |p: ModelPreset| report.presets.iter().find(|r| r.preset == p).map(|r| r.roc.auc).unwrap();
    let (clinical, imaging, combined) = (
        auc_of(ModelPreset::Clinical),
        auc_of(ModelPreset::Imaging),
        auc_of(ModelPreset::Combined),
    );
    let cmp = report
        .comparisons
        .iter()
        .find(|c| c.a == ModelPreset::Clinical && c.b == ModelPreset::Imaging)
        .unwrap();
    let detail = format!(
        "AUC clinical {clinical:.3}, imaging {imaging:.3}, combined {combined:.3}; imaging vs clinical p={:.1e}",
        cmp.comparison.p_value
    );
    ensure(imaging > 0.85 && combined > 0.85 && clinical < 0.65, detail.clone())?;
    ensure(cmp.comparison.p_value < 0.05, detail.clone())?;
    Ok(detail)
}

fn c9_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kinds: [(Datatype, f64, f64); 3] = [(Datatype::Uint8, 0.0, 255.0), (Datatype::Int16, -32768.0, 32767.0), (Datatype::Int32, -2.1e9, 2.1e9)];
    for i in 0..100 {
        let (dt, lo, hi) = kinds[i % 3];
        let dims = [rng.random_range(1..10), rng.random_range(1..10), rng.random_range(1..6)];
        let spacing = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.2..5.0)];
        let data: Vec<f64> = (0..dims.iter().product()).map(|_| rng.random_range(lo..=hi).round()).collect();
        let v = Volume::new(dims, spacing, data).unwrap();
        let path = dir.path().join(format!("v{i}.nii{}", if i % 2 == 0 { ".gz" } else { "" }));
        volio::write_volume(&v, &path, dt).map_err(|e| e.to_string())?;
        let back = volio::read_volume(&path).map_err(|e| e.to_string())?;
        ensure(back.dims() == v.dims(), format!("volume {i}: dims changed"))?;
        ensure(
            back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            format!("volume {i}: voxels changed"),
        )?;
        let little = volio::decode(&volio::encode(&v, dt, Endian::Little).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let big = volio::decode(&volio::encode(&v, dt, Endian::Big).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(little == big, format!("volume {i}: endianness differs"))?;
    }
    Ok("100 volumes bit-exact; little/big endian identical".into())
}

fn c10_coverage() -> Result<String, String> {
    let delta = 1.0;
    let truth = normal_cdf(delta / 2f64.sqrt());
    let mut covered = 0;
    for cohort in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + cohort);
        let labels: Vec<bool> = (0..200).map(|i| i < 100).collect();
        let scores: Vec<f64> = labels.iter().map(|&l| normal(&mut rng) + if l { delta } else { 0.0 }).collect();
        let ci = bootstrap_ci(&scores, &labels, Metric::Auc, 2000, cohort).map_err(|e| e.to_string())?;
        if ci.lo <= truth && truth <= ci.hi {
            covered += 1;
        }
    }
    let detail = format!("{covered}/100 intervals cover true AUC {truth:.4}");
    ensure(covered >= 90, detail.clone())?;
    Ok(detail)
}

fn main() {
    let criteria: [(u8, &str, Check, Option<u64>); 10] = [
        (1, "PSL analytic oracle", c1_psl_analytic, Some(10)),
        (2, "PSL monotonicity", c2_psl_monotone, Some(30)),
        (3, "PSL translation invariance", c3_translation, None),
        (4, "ASSD/Dice brute force", c4_assd_dice, None),
        (5, "Logistic regression oracle", c5_logistic, None),
        (6, "AUC oracle", c6_auc, None),
        (7, "Exact-distribution statistics", c7_exact_tests, None),
        (8, "End-to-end screening", c8_screening, Some(60)),
        (9, "Format round trip", c9_round_trip, None),
        (10, "Bootstrap coverage", c10_coverage, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.to_lowercase().contains(&f.to_lowercase())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(s)) if elapsed > Duration::from_secs(s) => Err(format!("{d}; exceeded {s} s")),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id:>2}] {name}: {detail} ({:.2} s)", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
