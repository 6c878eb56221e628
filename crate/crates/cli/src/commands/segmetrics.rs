//! `psl segmetrics`: Dice and ASSD of predicted masks against references,
//! plus Friedman and pairwise Wilcoxon tests across models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use psl_core::schema::Structure;
use psl_core::segmetrics::{assd, bonferroni, dice, friedman, wilcoxon_signed_rank};
use psl_core::stats::{mean, sample_sd};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::output::{case_id, csv_writer, ensure_dir, load_mask, num};

pub struct SegmetricsArgs {
    pub ref_dir: PathBuf,
    /// `name=dir` or a bare directory, which is named after itself.
    pub pred_dirs: Vec<String>,
    pub structure: Structure,
}

pub fn parse_structure(s: &str) -> std::result::Result<Structure, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown structure `{s}`"))
}

fn model_dir(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (name.to_string(), PathBuf::from(dir)),
        _ => {
            let p = PathBuf::from(spec);
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
            (name, p)
        }
    }
}

fn list_cases(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("read {}: {e}", dir.display())))?;
    let mut cases = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if let Some(id) = case_id(&path) {
            cases.insert(id, path);
        }
    }
    Ok(cases)
}

struct CaseScore {
    dice: f64,
    assd: f64,
}

pub fn run(cfg: &PipelineConfig, args: &SegmetricsArgs) -> Result<()> {
    if args.pred_dirs.is_empty() {
        return Err(CliError::Validation("no prediction directories given".into()));
    }
    let schema = cfg.label_schema()?;
    let labels = schema.resolve(args.structure);
    if labels.is_empty() {
        return Err(CliError::Validation(format!("schema has no label for {:?}", args.structure)));
    }
    let refs = list_cases(&args.ref_dir)?;
    if refs.is_empty() {
        return Err(CliError::Validation(format!("no NIfTI masks in {}", args.ref_dir.display())));
    }
    let models: Vec<(String, PathBuf)> = args.pred_dirs.iter().map(|s| model_dir(s)).collect();
    let mut preds = Vec::new();
    for (name, dir) in &models {
        let cases = list_cases(dir)?;
        if cases.keys().ne(refs.keys()) {
            let missing: Vec<&String> = refs.keys().filter(|k| !cases.contains_key(*k)).collect();
            let extra: Vec<&String> = cases.keys().filter(|k| !refs.contains_key(*k)).collect();
            return Err(CliError::Validation(format!(
                "case mismatch for model {name}: missing {missing:?}, unexpected {extra:?}"
            )));
        }
        preds.push(cases);
    }

    let pool = cfg.thread_pool()?;
    let ids: Vec<&String> = refs.keys().collect();
    let flip = cfg.flip_anterior;
    let scores: Vec<Vec<CaseScore>> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let reference = load_mask(&refs[*id], flip)?.select(&labels);
                preds
                    .iter()
                    .map(|cases| {
                        let pred = load_mask(&cases[*id], flip)?.select(&labels);
                        Ok(CaseScore {
                            dice: dice(&reference, &pred)?,
                            assd: assd(&reference, &pred)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| CliError::Validation(format!("{id}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let mut w = csv_writer(&out.join("segmetrics_cases.csv"))?;
    w.write_record(["case_id", "model", "dice", "assd_mm"])?;
    for (id, row) in ids.iter().zip(&scores) {
        for ((name, _), s) in models.iter().zip(row) {
            w.write_record([id.as_str(), name, &num(s.dice), &num(s.assd)])?;
        }
    }
    w.flush()?;

    let column = |m: usize, f: fn(&CaseScore) -> f64| -> Vec<f64> { scores.iter().map(|row| f(&row[m])).collect() };
    let metrics: [(&str, fn(&CaseScore) -> f64); 2] = [("dice", |s| s.dice), ("assd_mm", |s| s.assd)];

    let mut w = csv_writer(&out.join("segmetrics_summary.csv"))?;
    w.write_record(["model", "cases", "dice_mean", "dice_sd", "assd_mean", "assd_sd"])?;
    println!("{:<20} {:>5} {:>16} {:>18}", "model", "cases", "dice", "assd_mm");
    for (m, (name, _)) in models.iter().enumerate() {
        let d = column(m, metrics[0].1);
        let a = column(m, metrics[1].1);
        let (dm, ds, am, asd) = (mean(&d), sample_sd(&d), mean(&a), sample_sd(&a));
        w.write_record([name.clone(), d.len().to_string(), num(dm), num(ds), num(am), num(asd)])?;
        println!("{name:<20} {:>5} {dm:>8.4} ± {ds:<6.4} {am:>9.4} ± {asd:<6.4}", d.len());
    }
    w.flush()?;

    let mut w = csv_writer(&out.join("segmetrics_tests.csv"))?;
    w.write_record(["test", "metric", "model_a", "model_b", "statistic", "p_value", "p_bonferroni", "note"])?;
    let pairs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|a| (a + 1..models.len()).map(move |b| (a, b)))
        .collect();
    for (metric, f) in metrics {
        if models.len() >= 3 {
            let by_model: Vec<Vec<f64>> = (0..models.len()).map(|m| column(m, f)).collect();
            match friedman(&by_model) {
                Ok(t) => w.write_record(["friedman", metric, "", "", &num(t.statistic), &num(t.p_value), "", ""])?,
                Err(e) => w.write_record(["friedman", metric, "", "", "", "", "", &e.to_string()])?,
            }
        }
        let outcomes: Vec<_> = pairs
            .iter()
            .map(|&(a, b)| wilcoxon_signed_rank(&column(a, f), &column(b, f)))
            .collect();
        let valid: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().map(|t| t.p_value)).collect();
        let adjusted = bonferroni(&valid, pairs.len().max(1));
        let mut adjusted = adjusted.into_iter();
        for (&(a, b), o) in pairs.iter().zip(&outcomes) {
            let (na, nb) = (&models[a].0, &models[b].0);
            match o {
                Ok(t) => w.write_record([
                    "wilcoxon",
                    metric,
                    na,
                    nb,
                    &num(t.statistic),
                    &num(t.p_value),
                    &num(adjusted.next().unwrap_or(f64::NAN)),
                    "",
                ])?,
                Err(e) => w.write_record(["wilcoxon", metric, na, nb, "", "", "", &e.to_string()])?,
            }
        }
    }
    w.flush()?;
    Ok(())
}
