//! `psl psl`: lobularity of individual masks, with optional per-slice SVGs.

use std::collections::BTreeSet;
use std::path::PathBuf;

use psl_core::lobularity::{compute_psl_traced, SliceMask};
use psl_core::schema::Structure;
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::output::{case_id, csv_writer, ensure_dir, load_mask, num, write_json, write_text};
use crate::svg;

pub struct PslArgs {
    pub masks: Vec<PathBuf>,
    pub debug_svg: bool,
}

/// File stems, prefixed with the parent directory when stems repeat
/// (`P001/mask.nii.gz` and `P002/mask.nii.gz`).
fn case_ids(paths: &[PathBuf]) -> Vec<String> {
    let stem = |p: &PathBuf| case_id(p).unwrap_or_else(|| p.display().to_string());
    let stems: Vec<String> = paths.iter().map(stem).collect();
    let unique = stems.iter().collect::<BTreeSet<_>>().len() == stems.len();
    if unique {
        return stems;
    }
    paths
        .iter()
        .zip(stems)
        .map(|(p, s)| match p.parent().and_then(|d| d.file_name()) {
            Some(d) => format!("{}_{s}", d.to_string_lossy()),
            None => s,
        })
        .collect()
}

pub fn run(cfg: &PipelineConfig, args: &PslArgs) -> Result<()> {
    if args.masks.is_empty() {
        return Err(CliError::Validation("no masks given".into()));
    }
    let schema = cfg.label_schema()?;
    let labels = schema.resolve(Structure::Pancreas);
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    if args.debug_svg {
        ensure_dir(&out.join("psl_debug"))?;
    }

    let ids = case_ids(&args.masks);
    let pool = cfg.thread_pool()?;
    let results: Vec<_> = pool.install(|| {
        args.masks
            .par_iter()
            .map(|path| {
                let mask = load_mask(path, cfg.flip_anterior).map_err(|e| e.to_string())?;
                let (result, traces) = compute_psl_traced(&mask, &schema).map_err(|e| e.to_string())?;
                let s = mask.spacing();
                let figures: Vec<(usize, String)> = if args.debug_svg {
                    traces
                        .iter()
                        .map(|t| {
                            let slice = SliceMask::from_labels(&mask, t.z, &labels);
                            let pixels: Vec<[usize; 2]> = (0..slice.rows())
                                .flat_map(|r| (0..slice.cols()).map(move |c| [r, c]))
                                .filter(|&[r, c]| slice.get(r, c))
                                .collect();
                            (t.z, svg::slice_debug(t, &pixels, (s[0], s[1])))
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                Ok::<_, String>((result, figures))
            })
            .collect()
    });

    let mut w = csv_writer(&out.join("psl.csv"))?;
    w.write_record(["case_id", "psl_median", "slices_used", "slices_skipped", "error"])?;
    let mut ok = 0;
    for (id, res) in ids.into_iter().zip(results) {
        match res {
            Ok((result, figures)) => {
                ok += 1;
                w.write_record([
                    id.clone(),
                    num(result.psl_median),
                    result.slices_used.to_string(),
                    result.slices_skipped.to_string(),
                    String::new(),
                ])?;
                write_json(&out.join(format!("psl_{id}.json")), &result)?;
                for (z, text) in figures {
                    write_text(&out.join("psl_debug").join(format!("{id}_z{z:03}.svg")), &text)?;
                }
                println!("{id}: PSL {:.3} ({} slices)", result.psl_median, result.slices_used);
            }
            Err(e) => {
                log::error!("{id}: {e}");
                w.write_record([id, String::new(), String::new(), String::new(), e])?;
            }
        }
    }
    w.flush()?;
    if ok == 0 {
        return Err(CliError::Validation("no mask produced a PSL score".into()));
    }
    Ok(())
}
