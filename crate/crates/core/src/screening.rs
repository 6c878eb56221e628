//! Cohort labeling, stratified splitting, logistic regression by IRLS,
//! ROC analysis with Youden thresholds, and bootstrap inference.

use std::collections::BTreeMap;
use std::io;

use chrono::{Months, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maskops::{BiomarkerRecord, FEATURE_NAMES};
use crate::stats::{midranks, normal_two_sided, quantile_sorted, sample_sd};

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const MAX_IRLS_ITERATIONS: usize = 100;
pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const COEFFICIENT_LIMIT: f64 = 1e4;
/// Fitted probabilities this close to 0 or 1 indicate (quasi-)separation.
pub const SEPARATION_EPS: f64 = 1e-12;
pub const INEFFECTIVE_AUC: f64 = 0.7;
pub const DEFAULT_BOOTSTRAP: usize = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum ScreeningError {
    #[error("class {class} has too few patients for the split ({count})")]
    ClassTooSmall { class: &'static str, count: usize },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("expected {expected} features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("model did not converge")]
    NotConverged,
    #[error("score vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid patient record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("cohort csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, ScreeningError>;

/// One row of the cohort CSV plus its imaging biomarkers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: f64,
    pub bmi: f64,
    pub hba1c: Option<f64>,
    pub hba1c_date: Option<NaiveDate>,
    pub ct_date: Option<NaiveDate>,
    pub t2dm_diagnosis_date: Option<NaiveDate>,
    pub confirm_date: Option<NaiveDate>,
    #[serde(default)]
    pub ct_path: Option<String>,
    #[serde(default)]
    pub mask_path: Option<String>,
    #[serde(skip)]
    pub biomarkers: Option<BiomarkerRecord>,
}

pub const COHORT_COLUMNS: [&str; 10] = [
    "patient_id",
    "age",
    "bmi",
    "hba1c",
    "hba1c_date",
    "ct_date",
    "t2dm_diagnosis_date",
    "confirm_date",
    "ct_path",
    "mask_path",
];

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| ScreeningError::InvalidRecord {
            id: self.patient_id.clone(),
            reason: reason.into(),
        };
        if !(self.age > 0.0) {
            return Err(bad("age must be positive"));
        }
        if !(self.bmi > 0.0) {
            return Err(bad("bmi must be positive"));
        }
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<PatientRecord>> {
        let mut rd = csv::Reader::from_reader(input);
        let mut out = Vec::new();
        for row in rd.deserialize::<PatientRecord>() {
            let rec = row.map_err(|e| ScreeningError::Csv(e.to_string()))?;
            rec.validate()?;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn write_csv<W: io::Write>(records: &[PatientRecord], out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let csv_err = |e: csv::Error| ScreeningError::Csv(e.to_string());
        w.write_record(COHORT_COLUMNS).map_err(csv_err)?;
        let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        for r in records {
            w.write_record([
                r.patient_id.clone(),
                r.age.to_string(),
                r.bmi.to_string(),
                r.hba1c.map(|v| v.to_string()).unwrap_or_default(),
                date(r.hba1c_date),
                date(r.ct_date),
                date(r.t2dm_diagnosis_date),
                date(r.confirm_date),
                r.ct_path.clone().unwrap_or_default(),
                r.mask_path.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| ScreeningError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", content = "reason", rename_all = "snake_case")]
pub enum CohortLabel {
    Diabetic,
    Nondiabetic,
    Excluded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRules {
    pub diabetic_hba1c_min: f64,
    /// Non-diabetic HbA1c must be strictly below this value.
    pub nondiabetic_hba1c_below: f64,
    pub confirmation_years: u32,
}

impl Default for LabelRules {
    fn default() -> Self {
        Self {
            diabetic_hba1c_min: 6.5,
            nondiabetic_hba1c_below: 6.5,
            confirmation_years: 4,
        }
    }
}

pub fn label_patient(r: &PatientRecord) -> CohortLabel {
    label_patient_with(r, &LabelRules::default())
}

pub fn label_patient_with(r: &PatientRecord, rules: &LabelRules) -> CohortLabel {
    use CohortLabel::Excluded;
    let Some(hba1c) = r.hba1c else {
        return Excluded("missing HbA1c".into());
    };
    let Some(ct) = r.ct_date else {
        return Excluded("missing CT date".into());
    };
    if hba1c >= rules.diabetic_hba1c_min {
        return match r.t2dm_diagnosis_date {
            None => Excluded("missing T2DM diagnosis date".into()),
            Some(dx) if ct > dx => CohortLabel::Diabetic,
            Some(_) => Excluded("CT does not follow T2DM diagnosis".into()),
        };
    }
    if hba1c >= rules.nondiabetic_hba1c_below {
        return Excluded("HbA1c between non-diabetic and diabetic ranges".into());
    }
    match r.hba1c_date {
        None => return Excluded("missing HbA1c date".into()),
        Some(d) if d > ct => return Excluded("HbA1c measured after CT".into()),
        Some(_) => {}
    }
    let Some(confirm) = r.confirm_date else {
        return Excluded("missing non-diabetic confirmation date".into());
    };
    let horizon = ct
        .checked_add_months(Months::new(12 * rules.confirmation_years))
        .expect("date in range");
    if confirm >= horizon {
        CohortLabel::Nondiabetic
    } else {
        Excluded(format!(
            "non-diabetic status confirmed less than {} years after CT",
            rules.confirmation_years
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Per-class random split. Each class contributes `round(fraction · n)`
/// training patients; output keeps the input order within each side.
pub fn stratified_split(cohort: &[(String, bool)], train_fraction: f64, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; cohort.len()];
    for (class, name) in [(true, "diabetic"), (false, "nondiabetic")] {
        let mut idx: Vec<usize> = (0..cohort.len()).filter(|&i| cohort[i].1 == class).collect();
        let n = idx.len();
        let n_train = (train_fraction * n as f64).round() as usize;
        if n < 2 || n_train == 0 || n_train >= n {
            return Err(ScreeningError::ClassTooSmall { class: name, count: n });
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = cohort.iter().zip(&in_train).partition(|(_, t)| **t);
    Ok(Split {
        train: train.into_iter().map(|(c, _)| c.0.clone()).collect(),
        test: test.into_iter().map(|(c, _)| c.0.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Intercept followed by one coefficient per standardized feature.
    pub coefficients: Vec<f64>,
    pub ridge: f64,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Penalized log-likelihood after each accepted IRLS step.
    pub penalized_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(eta: &DVector<f64>, y: &[bool]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| if yi { e } else { 0.0 } - softplus(e))
        .sum()
}

fn penalty(beta: &DVector<f64>, ridge: f64) -> f64 {
    0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Standardize columns and prepend the intercept column.
fn design(x: &[Vec<f64>], means: &[f64], sds: &[f64]) -> DMatrix<f64> {
    let k = means.len();
    DMatrix::from_fn(x.len(), k + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x[i][j - 1] - means[j - 1]) / sds[j - 1]
        }
    })
}

fn information(z: &DMatrix<f64>, p: &[f64], ridge: f64) -> DMatrix<f64> {
    let w = DVector::from_iterator(p.len(), p.iter().map(|p| p * (1.0 - p)));
    let zw = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * w[i]);
    let mut h = z.transpose() * zw;
    for j in 1..h.ncols() {
        h[(j, j)] += ridge;
    }
    h
}

fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    h.lu().solve(g)
}

/// Penalized maximum-likelihood logistic regression by iteratively
/// reweighted least squares on standardized features. The intercept is not
/// penalized. Steps that would lower the penalized likelihood are halved.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], names: &[String], ridge: f64) -> Result<LogisticModel> {
    let n = x.len();
    let k = names.len();
    if n != y.len() {
        return Err(ScreeningError::LengthMismatch(n, y.len()));
    }
    if let Some(row) = x.iter().find(|r| r.len() != k) {
        return Err(ScreeningError::FeatureMismatch {
            expected: k,
            got: row.len(),
        });
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == n {
        return Err(ScreeningError::SingleClass);
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ScreeningError::DegenerateDesign("non-finite feature value".into()));
    }

    let mut means = Vec::with_capacity(k);
    let mut sds = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let sd = sample_sd(&col);
        if !(sd > 1e-12 * m.abs().max(1.0)) {
            return Err(ScreeningError::DegenerateDesign(format!("feature {} is constant", names[j])));
        }
        means.push(m);
        sds.push(sd);
    }
    let z = design(x, &means, &sds);
    for a in 1..=k {
        for b in a + 1..=k {
            let r = z.column(a).dot(&z.column(b)) / (n as f64 - 1.0);
            if r.abs() > 1.0 - 1e-10 {
                return Err(ScreeningError::DegenerateDesign(format!(
                    "features {} and {} are collinear",
                    names[a - 1],
                    names[b - 1]
                )));
            }
        }
    }

    let yv = DVector::from_iterator(n, y.iter().map(|&v| v as u8 as f64));
    let mut beta = DVector::zeros(k + 1);
    let objective = |beta: &DVector<f64>| log_likelihood(&(&z * beta), y) - penalty(beta, ridge);
    let mut current = objective(&beta);
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_IRLS_ITERATIONS {
        iterations += 1;
        let eta = &z * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(n, yv.iter().zip(&p).map(|(y, p)| y - p));
        let mut grad = z.transpose() * resid;
        for j in 1..=k {
            grad[j] -= ridge * beta[j];
        }
        let h = information(&z, &p, ridge);
        let Some(delta) = solve_spd(h, &grad) else {
            return Err(ScreeningError::DegenerateDesign("singular information matrix".into()));
        };

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = &beta + &delta * step;
            let value = objective(&candidate);
            if value >= current {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else {
            // No ascent available at floating-point resolution.
            converged = delta.amax() * step < IRLS_TOLERANCE.sqrt();
            break;
        };
        let change = (&next - &beta).amax();
        beta = next;
        current = value;
        trace.push(current);
        if change < IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }

    let eta = &z * &beta;
    let mut warnings = Vec::new();
    let separated = eta
        .iter()
        .map(|&e| sigmoid(e))
        .any(|p| p < SEPARATION_EPS || p > 1.0 - SEPARATION_EPS);
    let huge = beta.iter().any(|b| b.abs() > COEFFICIENT_LIMIT);
    if !converged || separated || huge {
        warnings.push(format!(
            "QuasiSeparation: converged={converged}, fitted probabilities at 0/1={separated}, |beta|>{COEFFICIENT_LIMIT}={huge}"
        ));
        log::debug!("logistic fit: {}", warnings[0]);
        converged = false;
    }

    Ok(LogisticModel {
        feature_names: names.to_vec(),
        means,
        sds,
        coefficients: beta.iter().copied().collect(),
        ridge,
        converged,
        iterations,
        log_likelihood: log_likelihood(&eta, y),
        penalized_trace: trace,
        warnings,
    })
}

impl LogisticModel {
    /// Intercept and slopes on the original feature scales.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let slopes: Vec<f64> = (0..self.sds.len()).map(|j| self.coefficients[j + 1] / self.sds[j]).collect();
        let intercept = self.coefficients[0] - slopes.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        std::iter::once(intercept).chain(slopes).collect()
    }

    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_names.len() {
            return Err(ScreeningError::FeatureMismatch {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        Ok(self.coefficients[0]
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.coefficients[j + 1] * (v - self.means[j]) / self.sds[j])
                .sum::<f64>())
    }
}

pub fn predict_proba(model: &LogisticModel, x: &[f64]) -> Result<f64> {
    model.linear_predictor(x).map(sigmoid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub important: bool,
}

/// Wald statistics from the inverse observed information at the optimum.
pub fn feature_importance(model: &LogisticModel, x: &[Vec<f64>], y: &[bool]) -> Result<Vec<FeatureImportance>> {
    if !model.converged {
        return Err(ScreeningError::NotConverged);
    }
    if x.len() != y.len() {
        return Err(ScreeningError::LengthMismatch(x.len(), y.len()));
    }
    let z = design(x, &model.means, &model.sds);
    let beta = DVector::from_column_slice(&model.coefficients);
    let p: Vec<f64> = (&z * &beta).iter().map(|&e| sigmoid(e)).collect();
    let cov = information(&z, &p, model.ridge)
        .try_inverse()
        .ok_or_else(|| ScreeningError::DegenerateDesign("singular information matrix".into()))?;
    Ok(model
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let coefficient = model.coefficients[j + 1];
            let std_error = cov[(j + 1, j + 1)].max(0.0).sqrt();
            let z = coefficient / std_error;
            let p_value = normal_two_sided(z);
            FeatureImportance {
                name: name.clone(),
                coefficient,
                std_error,
                z,
                p_value,
                important: p_value < 0.05,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +∞.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub youden_threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ScreeningError::SingleClass);
    }
    Ok((pos, neg))
}

/// AUC by the rank-sum formulation; tied positive/negative pairs count 1/2.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(ScreeningError::LengthMismatch(scores.len(), labels.len()));
    }
    let (pos, neg) = class_counts(labels)?;
    let (ranks, _) = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// ROC curve over all distinct thresholds with the Youden operating point.
/// Youden ties go to the higher-specificity point.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let area = auc(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Youden index scaled by pos·neg to compare exactly in integers.
    let mut best: Option<(i64, usize, usize, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
        let j = tp as i64 * neg as i64 - fp as i64 * pos as i64;
        let better = match best {
            None => true,
            Some((bj, _, bfp, _)) => j > bj || (j == bj && fp < bfp),
        };
        if better {
            best = Some((j, tp, fp, t));
        }
    }
    let (_, btp, bfp, threshold) = best.expect("at least one threshold");
    Ok(RocCurve {
        points,
        auc: area,
        youden_threshold: threshold,
        sensitivity: btp as f64 / pos as f64,
        specificity: 1.0 - bfp as f64 / neg as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    Sensitivity,
    Specificity,
}

fn metric_value(metric: Metric, scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(match metric {
        Metric::Auc => auc(scores, labels)?,
        Metric::Sensitivity => roc_auc(scores, labels)?.sensitivity,
        Metric::Specificity => roc_auc(scores, labels)?.specificity,
    })
}

/// Indices of a class-stratified resample drawn with replacement.
fn stratified_resample(pos: &[usize], neg: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = Vec::with_capacity(pos.len() + neg.len());
    for class in [pos, neg] {
        for _ in 0..class.len() {
            idx.push(class[rng.random_range(0..class.len())]);
        }
    }
    idx
}

fn resample_rng(seed: u64, b: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64))
}

fn split_classes(labels: &[bool]) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| labels[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub resample_median: f64,
}

/// 95% percentile interval from `resamples` stratified bootstrap resamples.
/// Resample `b` draws from its own generator seeded with `seed + b`.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Result<ConfidenceInterval> {
    let estimate = metric_value(metric, scores, labels)?;
    let (pos, neg) = split_classes(labels);
    let mut values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let idx = stratified_resample(&pos, &neg, &mut resample_rng(seed, b));
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            metric_value(metric, &s, &l).expect("both classes present")
        })
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        estimate,
        lo: quantile_sorted(&values, 0.025),
        hi: quantile_sorted(&values, 0.975),
        resample_median: quantile_sorted(&values, 0.5),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    pub statistic: f64,
    pub sd: f64,
    pub p_value: f64,
}

/// Paired bootstrap test of two ROC curves on the same cases:
/// `D = (auc_a − auc_b) / sd*(auc_a − auc_b)`, two-sided normal p-value.
pub fn compare_roc_bootstrap(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<RocComparison> {
    if scores_a.len() != scores_b.len() {
        return Err(ScreeningError::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    let auc_a = auc(scores_a, labels)?;
    let auc_b = auc(scores_b, labels)?;
    let (pos, neg) = split_classes(labels);
    let diffs: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let idx = stratified_resample(&pos, &neg, &mut resample_rng(seed, b));
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let a: Vec<f64> = idx.iter().map(|&i| scores_a[i]).collect();
            let bb: Vec<f64> = idx.iter().map(|&i| scores_b[i]).collect();
            auc(&a, &l).expect("two classes") - auc(&bb, &l).expect("two classes")
        })
        .collect();
    let sd = sample_sd(&diffs);
    let statistic = if sd > 0.0 { (auc_a - auc_b) / sd } else { 0.0 };
    Ok(RocComparison {
        auc_a,
        auc_b,
        statistic,
        sd,
        p_value: normal_two_sided(statistic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Clinical,
    Imaging,
    Combined,
}

pub const CLINICAL_FEATURES: [&str; 2] = ["age", "bmi"];

impl ModelPreset {
    pub const ALL: [ModelPreset; 3] = [ModelPreset::Clinical, ModelPreset::Imaging, ModelPreset::Combined];

    pub fn name(self) -> &'static str {
        match self {
            ModelPreset::Clinical => "clinical",
            ModelPreset::Imaging => "imaging",
            ModelPreset::Combined => "combined",
        }
    }

    pub fn features(self) -> Vec<String> {
        let clinical = CLINICAL_FEATURES.iter();
        let imaging = FEATURE_NAMES.iter();
        match self {
            ModelPreset::Clinical => clinical.map(|s| s.to_string()).collect(),
            ModelPreset::Imaging => imaging.map(|s| s.to_string()).collect(),
            ModelPreset::Combined => clinical.chain(imaging).map(|s| s.to_string()).collect(),
        }
    }
}

impl std::str::FromStr for ModelPreset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown model preset {s:?}"))
    }
}

/// A labeled patient with every candidate feature (clinical and imaging).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub patient_id: String,
    pub diabetic: bool,
    pub features: BTreeMap<String, Option<f64>>,
}

impl LabeledCase {
    pub fn new(record: &PatientRecord, biomarkers: &BiomarkerRecord, diabetic: bool) -> Self {
        let mut features = biomarkers.features.clone();
        features.insert("age".into(), Some(record.age));
        features.insert("bmi".into(), Some(record.bmi));
        Self {
            patient_id: record.patient_id.clone(),
            diabetic,
            features,
        }
    }

    /// Values of `names`, or `None` when any is absent.
    pub fn row(&self, names: &[String]) -> Option<Vec<f64>> {
        names.iter().map(|n| self.features.get(n).copied().flatten()).collect()
    }
}

/// Label every record, keeping only diabetic and non-diabetic patients that
/// have a biomarker row.
pub fn labeled_cases(records: &[PatientRecord], biomarkers: &[BiomarkerRecord], rules: &LabelRules) -> (Vec<LabeledCase>, Vec<(String, String)>) {
    let by_id: BTreeMap<&str, &BiomarkerRecord> = biomarkers.iter().map(|b| (b.patient_id.as_str(), b)).collect();
    let mut cases = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        let diabetic = match label_patient_with(r, rules) {
            CohortLabel::Diabetic => true,
            CohortLabel::Nondiabetic => false,
            CohortLabel::Excluded(reason) => {
                excluded.push((r.patient_id.clone(), reason));
                continue;
            }
        };
        match by_id.get(r.patient_id.as_str()) {
            Some(b) => cases.push(LabeledCase::new(r, b, diabetic)),
            None => excluded.push((r.patient_id.clone(), "no biomarker record".into())),
        }
    }
    (cases, excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    pub presets: Vec<ModelPreset>,
    pub ridge: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 42,
            bootstrap_resamples: DEFAULT_BOOTSTRAP,
            presets: ModelPreset::ALL.to_vec(),
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub preset: ModelPreset,
    pub model: LogisticModel,
    pub train_used: usize,
    pub train_dropped: usize,
    pub test_ids: Vec<String>,
    pub test_labels: Vec<bool>,
    pub test_scores: Vec<f64>,
    pub test_dropped: usize,
    pub roc: RocCurve,
    pub auc_ci: ConfidenceInterval,
    pub sensitivity_ci: ConfidenceInterval,
    pub specificity_ci: ConfidenceInterval,
    pub importance: Option<Vec<FeatureImportance>>,
}

impl PresetReport {
    pub fn ineffective(&self) -> bool {
        self.roc.auc < INEFFECTIVE_AUC
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: ModelPreset,
    pub b: ModelPreset,
    pub cases: usize,
    pub comparison: RocComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    pub split: Split,
    pub presets: Vec<PresetReport>,
    pub comparisons: Vec<PairComparison>,
}

fn rows_for(cases: &[&LabeledCase], names: &[String]) -> (Vec<Vec<f64>>, Vec<bool>, Vec<String>, usize) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    let mut dropped = 0;
    for c in cases {
        match c.row(names) {
            Some(r) => {
                x.push(r);
                y.push(c.diabetic);
                ids.push(c.patient_id.clone());
            }
            None => dropped += 1,
        }
    }
    (x, y, ids, dropped)
}

/// Split, fit every preset on the training side, and evaluate on the test
/// side with bootstrap intervals and pairwise ROC comparisons.
pub fn run_screening(cases: &[LabeledCase], config: &ScreeningConfig) -> Result<ScreeningReport> {
    let cohort: Vec<(String, bool)> = cases.iter().map(|c| (c.patient_id.clone(), c.diabetic)).collect();
    let split = stratified_split(&cohort, config.train_fraction, config.seed)?;
    let by_id: BTreeMap<&str, &LabeledCase> = cases.iter().map(|c| (c.patient_id.as_str(), c)).collect();
    let train: Vec<&LabeledCase> = split.train.iter().map(|id| by_id[id.as_str()]).collect();
    let test: Vec<&LabeledCase> = split.test.iter().map(|id| by_id[id.as_str()]).collect();

    let mut presets = Vec::new();
    for &preset in &config.presets {
        let names = preset.features();
        let (x, y, _, train_dropped) = rows_for(&train, &names);
        if train_dropped > 0 {
            log::info!("{}: dropped {train_dropped} training rows with absent features", preset.name());
        }
        let model = fit_logistic(&x, &y, &names, config.ridge)?;
        let importance = feature_importance(&model, &x, &y).ok();
        let (tx, ty, test_ids, test_dropped) = rows_for(&test, &names);
        let scores: Vec<f64> = tx
            .iter()
            .map(|r| predict_proba(&model, r))
            .collect::<Result<_>>()?;
        let roc = roc_auc(&scores, &ty)?;
        let b = config.bootstrap_resamples;
        let seed = config.seed;
        presets.push(PresetReport {
            preset,
            train_used: x.len(),
            train_dropped,
            test_dropped,
            auc_ci: bootstrap_ci(&scores, &ty, Metric::Auc, b, seed)?,
            sensitivity_ci: bootstrap_ci(&scores, &ty, Metric::Sensitivity, b, seed)?,
            specificity_ci: bootstrap_ci(&scores, &ty, Metric::Specificity, b, seed)?,
            roc,
            model,
            importance,
            test_ids,
            test_labels: ty,
            test_scores: scores,
        });
    }

    let mut comparisons = Vec::new();
    for i in 0..presets.len() {
        for j in i + 1..presets.len() {
            let (a, b) = (&presets[i], &presets[j]);
            // Compare on the test cases scored by both models.
            let b_scores: BTreeMap<&str, f64> = b.test_ids.iter().map(|s| s.as_str()).zip(b.test_scores.iter().copied()).collect();
            let mut sa = Vec::new();
            let mut sb = Vec::new();
            let mut labels = Vec::new();
            for ((id, &s), &l) in a.test_ids.iter().zip(&a.test_scores).zip(&a.test_labels) {
                if let Some(&other) = b_scores.get(id.as_str()) {
                    sa.push(s);
                    sb.push(other);
                    labels.push(l);
                }
            }
            let comparison = compare_roc_bootstrap(&sa, &sb, &labels, config.bootstrap_resamples, config.seed)?;
            comparisons.push(PairComparison {
                a: a.preset,
                b: b.preset,
                cases: labels.len(),
                comparison,
            });
        }
    }
    Ok(ScreeningReport {
        split,
        presets,
        comparisons,
    })
}
