//! `psl train-eval` and `psl roc-plot`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use psl_core::maskops::BiomarkerRecord;
use psl_core::screening::{labeled_cases, run_screening, ConfidenceInterval, LogisticModel, ModelPreset, PatientRecord};
use psl_core::segmetrics::mann_whitney_u;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::output::{csv_writer, ensure_dir, num, open, write_json, write_text};
use crate::svg::{self, RocSeries};

#[derive(Serialize)]
struct ModelFile<'a> {
    preset: ModelPreset,
    /// Coefficients on the original feature scale, intercept first.
    raw_coefficients: Vec<f64>,
    model: &'a LogisticModel,
}

fn ci_cells(ci: &ConfidenceInterval) -> [String; 3] {
    [num(ci.estimate), num(ci.lo), num(ci.hi)]
}

pub fn run(cfg: &PipelineConfig) -> Result<()> {
    let cohort_path = cfg.require_cohort()?;
    let biomarker_path = cfg
        .biomarkers
        .as_deref()
        .ok_or_else(|| CliError::Validation("no biomarkers CSV given (--biomarkers or config `biomarkers`)".into()))?;
    let records = PatientRecord::read_csv(open(cohort_path)?)?;
    let biomarkers = BiomarkerRecord::read_csv(open(biomarker_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", biomarker_path.display())))?;
    let (cases, excluded) = labeled_cases(&records, &biomarkers, &cfg.label_rules());
    log::info!("{} labeled cases, {} excluded", cases.len(), excluded.len());

    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut w = csv_writer(&out.join("exclusions.csv"))?;
    w.write_record(["patient_id", "reason"])?;
    for (id, reason) in &excluded {
        w.write_record([id, reason])?;
    }
    w.flush()?;

    let report = run_screening(&cases, &cfg.screening())?;

    let diabetic: BTreeMap<&str, bool> = cases.iter().map(|c| (c.patient_id.as_str(), c.diabetic)).collect();
    let mut w = csv_writer(&out.join("split.csv"))?;
    w.write_record(["patient_id", "set", "diabetic"])?;
    for (set, ids) in [("train", &report.split.train), ("test", &report.split.test)] {
        for id in ids {
            w.write_record([id.as_str(), set, if diabetic[id.as_str()] { "1" } else { "0" }])?;
        }
    }
    w.flush()?;

    let mut metrics = csv_writer(&out.join("metrics.csv"))?;
    metrics.write_record([
        "preset",
        "train_n",
        "train_dropped",
        "test_n",
        "test_dropped",
        "auc",
        "auc_lo",
        "auc_hi",
        "sensitivity",
        "sensitivity_lo",
        "sensitivity_hi",
        "specificity",
        "specificity_lo",
        "specificity_hi",
        "threshold",
        "converged",
        "ineffective",
    ])?;
    let mut points = csv_writer(&out.join("roc_points.csv"))?;
    points.write_record(["preset", "threshold", "fpr", "tpr"])?;
    let mut series = Vec::new();
    for p in &report.presets {
        let name = p.preset.name();
        let mut row = vec![
            name.to_string(),
            p.train_used.to_string(),
            p.train_dropped.to_string(),
            p.test_scores.len().to_string(),
            p.test_dropped.to_string(),
        ];
        row.extend(ci_cells(&p.auc_ci));
        row.extend(ci_cells(&p.sensitivity_ci));
        row.extend(ci_cells(&p.specificity_ci));
        row.push(num(p.roc.youden_threshold));
        row.push(p.model.converged.to_string());
        row.push(p.ineffective().to_string());
        metrics.write_record(&row)?;
        for pt in &p.roc.points {
            points.write_record([name, &num(pt.threshold), &num(pt.fpr), &num(pt.tpr)])?;
        }
        series.push(RocSeries {
            label: name.to_string(),
            auc: p.roc.auc,
            points: p.roc.points.iter().map(|pt| (pt.fpr, pt.tpr)).collect(),
        });
        write_json(
            &out.join(format!("model_{name}.json")),
            &ModelFile {
                preset: p.preset,
                raw_coefficients: p.model.raw_coefficients(),
                model: &p.model,
            },
        )?;
        if let Some(imp) = &p.importance {
            let mut w = csv_writer(&out.join(format!("importance_{name}.csv")))?;
            w.write_record(["feature", "coefficient", "std_error", "z", "p_value", "important"])?;
            for f in imp {
                w.write_record([
                    f.name.clone(),
                    num(f.coefficient),
                    num(f.std_error),
                    num(f.z),
                    num(f.p_value),
                    f.important.to_string(),
                ])?;
            }
            w.flush()?;
        }
        for warning in &p.model.warnings {
            log::warn!("{name}: {warning}");
        }
        println!(
            "{name:<9} AUC {:.3} [{:.3}, {:.3}]  sens {:.3}  spec {:.3}{}",
            p.auc_ci.estimate,
            p.auc_ci.lo,
            p.auc_ci.hi,
            p.roc.sensitivity,
            p.roc.specificity,
            if p.ineffective() { "  (ineffective)" } else { "" }
        );
    }
    metrics.flush()?;
    points.flush()?;

    let mut w = csv_writer(&out.join("comparisons.csv"))?;
    w.write_record(["model_a", "model_b", "cases", "auc_a", "auc_b", "statistic", "sd", "p_value"])?;
    for c in &report.comparisons {
        let r = &c.comparison;
        w.write_record([
            c.a.name().to_string(),
            c.b.name().to_string(),
            c.cases.to_string(),
            num(r.auc_a),
            num(r.auc_b),
            num(r.statistic),
            num(r.sd),
            num(r.p_value),
        ])?;
        println!("{} vs {}: p = {:.3e}", c.a.name(), c.b.name(), r.p_value);
    }
    w.flush()?;

    write_text(&out.join("roc.svg"), &svg::roc_plot(&series))?;
    write_psl_boxplot(out, &cases)?;
    Ok(())
}

fn write_psl_boxplot(out: &Path, cases: &[psl_core::screening::LabeledCase]) -> Result<()> {
    let pick = |d: bool| -> Vec<f64> {
        cases
            .iter()
            .filter(|c| c.diabetic == d)
            .filter_map(|c| c.features.get("psl_median").copied().flatten())
            .collect()
    };
    let (non, dia) = (pick(false), pick(true));
    let title = match mann_whitney_u(&non, &dia) {
        Ok(t) => format!("PSL by group (Mann-Whitney p = {:.2e})", t.p_value),
        Err(_) => "PSL by group".to_string(),
    };
    let groups = vec![("non-diabetic".to_string(), non), ("diabetic".to_string(), dia)];
    write_text(&out.join("psl_boxplot.svg"), &svg::box_plot(&title, "PSL", &groups))
}

pub struct RocPlotArgs {
    pub points: PathBuf,
    pub metrics: Option<PathBuf>,
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("{what}: not a number: {s:?}")))
}

/// Redraw `roc.svg` from a `roc_points.csv`.
pub fn roc_plot(cfg: &PipelineConfig, args: &RocPlotArgs) -> Result<()> {
    let mut reader = csv::Reader::from_reader(open(&args.points)?);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("{}: missing column {name}", args.points.display())))
    };
    let (ip, ifpr, itpr) = (col("preset")?, col("fpr")?, col("tpr")?);
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let name = row[ip].to_string();
        let pt = (parse_num(&row[ifpr], "fpr")?, parse_num(&row[itpr], "tpr")?);
        match curves.iter_mut().find(|(n, _)| *n == name) {
            Some((_, v)) => v.push(pt),
            None => curves.push((name, vec![pt])),
        }
    }
    if curves.is_empty() {
        return Err(CliError::Validation(format!("{} has no points", args.points.display())));
    }

    let mut aucs = BTreeMap::new();
    if let Some(path) = &args.metrics {
        let mut reader = csv::Reader::from_reader(open(path)?);
        let headers = reader.headers()?.clone();
        let find = |n: &str| headers.iter().position(|h| h == n);
        let (Some(ip), Some(ia)) = (find("preset"), find("auc")) else {
            return Err(CliError::Validation(format!("{}: needs preset and auc columns", path.display())));
        };
        for row in reader.records() {
            let row = row?;
            aucs.insert(row[ip].to_string(), parse_num(&row[ia], "auc")?);
        }
    }
    let series: Vec<RocSeries> = curves
        .into_iter()
        .map(|(label, points)| RocSeries {
            auc: aucs.get(&label).copied().unwrap_or_else(|| trapezoid(&points)),
            label,
            points,
        })
        .collect();
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("roc.svg"), &svg::roc_plot(&series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_of_diagonal_is_half() {
        assert_eq!(trapezoid(&[(0.0, 0.0), (1.0, 1.0)]), 0.5);
        assert_eq!(trapezoid(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]), 1.0);
    }
}
