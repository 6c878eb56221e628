//! `psl phantom`: synthetic phantoms with ground-truth sidecars, or a
//! synthetic screening cohort.

use std::path::PathBuf;

use psl_core::maskops::BiomarkerRecord;
use psl_core::phantom::{make_pancreas_phantom, make_synthetic_cohort, EffectSizes, PhantomSpec};
use psl_core::screening::PatientRecord;
use psl_core::volio::{self, Datatype};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, open, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Effect {
    None,
    Strong,
}

pub struct PhantomArgs {
    pub spec: Option<PathBuf>,
    pub amplitudes: Vec<f64>,
    pub synthetic_cohort: Option<usize>,
    pub effect: Effect,
}

pub fn run(cfg: &PipelineConfig, args: &PhantomArgs) -> Result<()> {
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    if let Some(n) = args.synthetic_cohort {
        let effects = match args.effect {
            Effect::None => EffectSizes::none(),
            Effect::Strong => EffectSizes::strong(),
        };
        let cohort = make_synthetic_cohort(n, &effects, cfg.seed)?;
        PatientRecord::write_csv(&cohort.records, std::fs::File::create(out.join("cohort.csv"))?)?;
        BiomarkerRecord::write_csv(&cohort.biomarkers, std::fs::File::create(out.join("biomarkers.csv"))?)?;
        log::info!("wrote synthetic cohort of {n} to {}", out.display());
        return Ok(());
    }

    let spec: PhantomSpec = match &args.spec {
        Some(p) => serde_json::from_reader(open(p)?)
            .map_err(|e| CliError::Validation(format!("phantom spec {}: {e}", p.display())))?,
        None => PhantomSpec::default(),
    };
    let variants: Vec<(String, PhantomSpec)> = if args.amplitudes.is_empty() {
        vec![("phantom".into(), spec)]
    } else {
        args.amplitudes
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut s = spec.clone();
                s.pancreas.amplitude = a;
                s.seed = spec.seed.wrapping_add(i as u64);
                (format!("P{i:03}"), s)
            })
            .collect()
    };
    for (_, s) in &variants {
        s.validate()?;
    }

    let mut records = Vec::new();
    for (id, s) in &variants {
        let ph = make_pancreas_phantom(s)?;
        let dir = out.join(id);
        ensure_dir(&dir)?;
        volio::write_volume(&ph.ct, dir.join("ct.nii"), Datatype::Int16)?;
        volio::write_label_mask(&ph.mask, dir.join("mask.nii"))?;
        write_json(&dir.join("truth.json"), &ph.truth)?;
        write_json(&dir.join("spec.json"), s)?;
        log::info!("{id}: amplitude {} mm, sinusoid PSL {:.3}", s.pancreas.amplitude, ph.truth.sinusoid_psl);
        records.push(PatientRecord {
            patient_id: id.clone(),
            age: 50.0,
            bmi: 25.0,
            hba1c: None,
            hba1c_date: None,
            ct_date: None,
            t2dm_diagnosis_date: None,
            confirm_date: None,
            ct_path: Some(format!("{id}/ct.nii")),
            mask_path: Some(format!("{id}/mask.nii")),
            biomarkers: None,
        });
    }
    PatientRecord::write_csv(&records, std::fs::File::create(out.join("phantom_cohort.csv"))?)?;
    Ok(())
}
