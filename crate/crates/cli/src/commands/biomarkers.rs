//! `psl biomarkers`: per-patient imaging features and PSL for a cohort.

use std::path::Path;

use psl_core::lobularity::{compute_psl, PslResult};
use psl_core::maskops::{biomarker_table, BiomarkerRecord};
use psl_core::schema::LabelSchema;
use psl_core::screening::PatientRecord;
use psl_core::volio::VolioError;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::output::{csv_writer, ensure_dir, load_mask, load_volume, open, resolve, write_json};

#[derive(Debug)]
struct Failure {
    stage: &'static str,
    message: String,
    io: bool,
}

impl Failure {
    fn new(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
            io: false,
        }
    }

    fn read(stage: &'static str, e: VolioError) -> Self {
        Self {
            stage,
            io: matches!(e, VolioError::Io { .. }),
            message: e.to_string(),
        }
    }
}

#[derive(Serialize)]
struct PslReport<'a> {
    patient_id: &'a str,
    result: Option<&'a PslResult>,
    error: Option<String>,
}

fn process(
    r: &PatientRecord,
    base: &Path,
    schema: &LabelSchema,
    flip: bool,
) -> std::result::Result<(BiomarkerRecord, std::result::Result<PslResult, String>), Failure> {
    let ct_path = r.ct_path.as_deref().ok_or_else(|| Failure::new("input", "no ct_path"))?;
    let mask_path = r.mask_path.as_deref().ok_or_else(|| Failure::new("input", "no mask_path"))?;
    let ct = load_volume(&resolve(base, ct_path), flip).map_err(|e| Failure::read("read_ct", e))?;
    let mask = load_mask(&resolve(base, mask_path), flip).map_err(|e| Failure::read("read_mask", e))?;
    let mut rec = biomarker_table(&ct, &mask, schema, &r.patient_id).map_err(|e| Failure::new("biomarkers", e.to_string()))?;
    let psl = compute_psl(&mask, schema).map_err(|e| e.to_string());
    match &psl {
        Ok(p) => rec.set("psl_median", Some(p.psl_median)),
        Err(e) => log::warn!("{}: PSL unavailable: {e}", r.patient_id),
    }
    Ok((rec, psl))
}

pub fn run(cfg: &PipelineConfig) -> Result<()> {
    let cohort_path = cfg.require_cohort()?;
    let records = PatientRecord::read_csv(open(cohort_path)?)?;
    if records.is_empty() {
        return Err(CliError::Validation(format!("cohort {} has no patients", cohort_path.display())));
    }
    let base = cohort_path.parent().unwrap_or(Path::new("."));
    let schema = cfg.label_schema()?;
    let pool = cfg.thread_pool()?;
    let results: Vec<_> = pool.install(|| {
        records
            .par_iter()
            .map(|r| process(r, base, &schema, cfg.flip_anterior))
            .collect()
    });

    let out = &cfg.output_dir;
    ensure_dir(&out.join("psl"))?;
    let mut rows = Vec::new();
    let mut errors = csv_writer(&out.join("biomarker_errors.csv"))?;
    errors.write_record(["patient_id", "stage", "error"])?;
    let mut failures = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok((rec, psl)) => {
                let (result, error) = match &psl {
                    Ok(p) => (Some(p), None),
                    Err(e) => (None, Some(e.clone())),
                };
                write_json(
                    &out.join("psl").join(format!("{}.json", r.patient_id)),
                    &PslReport {
                        patient_id: &r.patient_id,
                        result,
                        error,
                    },
                )?;
                rows.push(rec);
            }
            Err(f) => {
                log::error!("{}: {} failed: {}", r.patient_id, f.stage, f.message);
                errors.write_record([r.patient_id.as_str(), f.stage, f.message.as_str()])?;
                failures.push(f);
            }
        }
    }
    errors.flush()?;
    BiomarkerRecord::write_csv(&rows, std::fs::File::create(out.join("biomarkers.csv"))?)?;
    log::info!("{} of {} patients processed", rows.len(), records.len());
    if rows.is_empty() {
        let msg = format!("all {} patients failed; see biomarker_errors.csv", records.len());
        return Err(if failures.iter().all(|f| f.io) {
            CliError::Io(msg)
        } else {
            CliError::Validation(msg)
        });
    }
    Ok(())
}
