//! Per-structure imaging biomarkers: volume, attenuation statistics, fat
//! fraction and single-slice body composition at vertebral levels.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{LabelMask, Volume};
use crate::schema::{LabelSchema, Structure};

/// Adipose attenuation window in HU, inclusive on both ends.
pub const FAT_HU_WINDOW: (f64, f64) = (-190.0, -30.0);

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("labels {0:?} absent from mask")]
    LabelAbsent(Vec<u32>),
    #[error("labels {labels:?} absent on slice {z}")]
    LabelAbsentOnSlice { labels: Vec<u32>, z: usize },
    #[error("ct dims {ct:?} differ from mask dims {mask:?}")]
    DimensionMismatch { ct: [usize; 3], mask: [usize; 3] },
    #[error("slice {z} outside volume of depth {depth}")]
    SliceOutOfRange { z: usize, depth: usize },
}

pub type Result<T> = std::result::Result<T, MaskError>;

/// Running mean/variance (Welford) plus a fat-window tally.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
    in_window: usize,
}

impl Accumulator {
    fn push(&mut self, hu: f64, window: (f64, f64)) {
        self.n += 1;
        let delta = hu - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (hu - self.mean);
        if hu >= window.0 && hu <= window.1 {
            self.in_window += 1;
        }
    }

    fn stats(&self) -> AttenuationStats {
        let sd = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).max(0.0).sqrt()
        } else {
            0.0
        };
        AttenuationStats {
            mean: self.mean,
            sd,
            count: self.n,
        }
    }

    fn fraction(&self) -> f64 {
        self.in_window as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationStats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single voxel.
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceComposition {
    pub area_mm2: f64,
    pub mean_hu: f64,
    pub sd_hu: f64,
    pub fat_fraction: f64,
}

fn check_dims(ct: &Volume, mask: &LabelMask) -> Result<()> {
    if ct.dims() != mask.dims() {
        return Err(MaskError::DimensionMismatch {
            ct: ct.dims(),
            mask: mask.dims(),
        });
    }
    Ok(())
}

fn accumulate<'a>(
    hu: impl Iterator<Item = &'a f64>,
    labels: impl Iterator<Item = &'a u32>,
    want: &[u32],
    window: (f64, f64),
) -> Accumulator {
    let mut acc = Accumulator::default();
    for (h, l) in hu.zip(labels) {
        if want.contains(l) {
            acc.push(*h, window);
        }
    }
    acc
}

fn volumetric(ct: &Volume, mask: &LabelMask, labels: &[u32], window: (f64, f64)) -> Result<Accumulator> {
    check_dims(ct, mask)?;
    let acc = accumulate(ct.data().iter(), mask.data().iter(), labels, window);
    if acc.n == 0 {
        return Err(MaskError::LabelAbsent(labels.to_vec()));
    }
    Ok(acc)
}

/// Volume in mm³ of the voxels carrying any of `labels`.
pub fn structure_volume(mask: &LabelMask, labels: &[u32]) -> Result<f64> {
    let n = mask.data().iter().filter(|l| labels.contains(l)).count();
    if n == 0 {
        return Err(MaskError::LabelAbsent(labels.to_vec()));
    }
    Ok(n as f64 * mask.voxel_volume())
}

pub fn attenuation_stats(ct: &Volume, mask: &LabelMask, labels: &[u32]) -> Result<AttenuationStats> {
    Ok(volumetric(ct, mask, labels, FAT_HU_WINDOW)?.stats())
}

/// Fraction of the structure's voxels inside [`FAT_HU_WINDOW`].
pub fn fat_fraction(ct: &Volume, mask: &LabelMask, labels: &[u32]) -> Result<f64> {
    fat_fraction_in_window(ct, mask, labels, FAT_HU_WINDOW)
}

pub fn fat_fraction_in_window(
    ct: &Volume,
    mask: &LabelMask,
    labels: &[u32],
    window: (f64, f64),
) -> Result<f64> {
    Ok(volumetric(ct, mask, labels, window)?.fraction())
}

/// Median axial index over all voxels of the vertebra, taking the lower of
/// the two middle voxels when the count is even.
pub fn vertebral_slice(mask: &LabelMask, labels: &[u32]) -> Result<usize> {
    let [nx, ny, nz] = mask.dims();
    let plane = nx * ny;
    let per_slice: Vec<usize> = (0..nz)
        .map(|z| {
            mask.data()[z * plane..(z + 1) * plane]
                .iter()
                .filter(|l| labels.contains(l))
                .count()
        })
        .collect();
    let total: usize = per_slice.iter().sum();
    if total == 0 {
        return Err(MaskError::LabelAbsent(labels.to_vec()));
    }
    // 0-based rank of the lower middle voxel.
    let target = (total - 1) / 2;
    let mut seen = 0;
    for (z, &c) in per_slice.iter().enumerate() {
        seen += c;
        if seen > target {
            return Ok(z);
        }
    }
    unreachable!("target rank lies below total")
}

pub fn body_composition_at_level(
    ct: &Volume,
    mask: &LabelMask,
    labels: &[u32],
    z: usize,
) -> Result<SliceComposition> {
    check_dims(ct, mask)?;
    let depth = mask.dims()[2];
    if z >= depth {
        return Err(MaskError::SliceOutOfRange { z, depth });
    }
    let acc = accumulate(
        ct.slice_z(z).iter(),
        mask.slice_z(z).iter(),
        labels,
        FAT_HU_WINDOW,
    );
    if acc.n == 0 {
        return Err(MaskError::LabelAbsentOnSlice {
            labels: labels.to_vec(),
            z,
        });
    }
    let s = mask.spacing();
    let stats = acc.stats();
    Ok(SliceComposition {
        area_mm2: acc.n as f64 * s[0] * s[1],
        mean_hu: stats.mean,
        sd_hu: stats.sd,
        fat_fraction: acc.fraction(),
    })
}

/// Column order of the biomarker table.
pub const FEATURE_NAMES: [&str; 27] = [
    "liver_volume_mm3",
    "liver_attenuation_mean_hu",
    "liver_attenuation_sd_hu",
    "liver_fat_fraction",
    "spleen_volume_mm3",
    "spleen_attenuation_mean_hu",
    "spleen_attenuation_sd_hu",
    "spleen_fat_fraction",
    "pancreas_volume_mm3",
    "pancreas_attenuation_mean_hu",
    "pancreas_attenuation_sd_hu",
    "pancreas_fat_fraction",
    "liver_fat_volume_mm3",
    "pancreas_fat_volume_mm3",
    "muscle_l3_area_mm2",
    "muscle_l3_attenuation_mean_hu",
    "muscle_l3_attenuation_sd_hu",
    "muscle_l3_fat_fraction",
    "visceral_fat_l1_area_mm2",
    "visceral_fat_l1_attenuation_mean_hu",
    "visceral_fat_l1_attenuation_sd_hu",
    "visceral_fat_l1_fat_fraction",
    "subcutaneous_fat_l1_area_mm2",
    "subcutaneous_fat_l1_attenuation_mean_hu",
    "subcutaneous_fat_l1_attenuation_sd_hu",
    "subcutaneous_fat_l1_fat_fraction",
    "psl_median",
];

/// Named scalar features for one patient. Missing values are `None`, never 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRecord {
    pub patient_id: String,
    pub features: BTreeMap<String, Option<f64>>,
}

impl BiomarkerRecord {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            features: FEATURE_NAMES.iter().map(|n| (n.to_string(), None)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.features.get(name).copied().flatten()
    }

    pub fn set(&mut self, name: &str, value: Option<f64>) {
        self.features.insert(name.to_string(), value);
    }

    pub fn csv_header() -> Vec<String> {
        std::iter::once("patient_id")
            .chain(FEATURE_NAMES)
            .map(String::from)
            .collect()
    }

    pub fn csv_row(&self) -> Vec<String> {
        std::iter::once(self.patient_id.clone())
            .chain(
                FEATURE_NAMES
                    .iter()
                    .map(|n| self.get(n).map(|v| v.to_string()).unwrap_or_default()),
            )
            .collect()
    }

    pub fn write_csv<W: io::Write>(records: &[BiomarkerRecord], out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(Self::csv_header())?;
        for r in records {
            w.write_record(r.csv_row())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse a biomarker CSV. Unknown columns are kept as extra features.
    pub fn read_csv<R: io::Read>(input: R) -> std::result::Result<Vec<BiomarkerRecord>, String> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers().map_err(|e| e.to_string())?.clone();
        if header.get(0) != Some("patient_id") {
            return Err("first column must be patient_id".into());
        }
        let mut out = Vec::new();
        for (line, row) in rd.records().enumerate() {
            let row = row.map_err(|e| e.to_string())?;
            let mut rec = BiomarkerRecord::new(&row[0]);
            for (name, cell) in header.iter().zip(row.iter()).skip(1) {
                let value = if cell.trim().is_empty() {
                    None
                } else {
                    Some(cell.trim().parse::<f64>().map_err(|e| {
                        format!("row {}: column {name}: {e}", line + 2)
                    })?)
                };
                rec.set(name, value);
            }
            out.push(rec);
        }
        Ok(out)
    }
}

fn organ_features(rec: &mut BiomarkerRecord, ct: &Volume, mask: &LabelMask, prefix: &str, labels: &[u32]) {
    let volume = structure_volume(mask, labels).ok();
    let acc = volumetric(ct, mask, labels, FAT_HU_WINDOW).ok();
    rec.set(&format!("{prefix}_volume_mm3"), volume);
    rec.set(
        &format!("{prefix}_attenuation_mean_hu"),
        acc.map(|a| a.stats().mean),
    );
    rec.set(&format!("{prefix}_attenuation_sd_hu"), acc.map(|a| a.stats().sd));
    rec.set(&format!("{prefix}_fat_fraction"), acc.map(|a| a.fraction()));
}

fn level_features(
    rec: &mut BiomarkerRecord,
    ct: &Volume,
    mask: &LabelMask,
    prefix: &str,
    labels: &[u32],
    level: Option<usize>,
) {
    let comp = level
        .filter(|_| !labels.is_empty())
        .and_then(|z| body_composition_at_level(ct, mask, labels, z).ok());
    rec.set(&format!("{prefix}_area_mm2"), comp.map(|c| c.area_mm2));
    rec.set(&format!("{prefix}_attenuation_mean_hu"), comp.map(|c| c.mean_hu));
    rec.set(&format!("{prefix}_attenuation_sd_hu"), comp.map(|c| c.sd_hu));
    rec.set(&format!("{prefix}_fat_fraction"), comp.map(|c| c.fat_fraction));
}

/// Assemble every imaging feature except `psl_median`, which the lobularity
/// stage fills in. Absent structures become `None` features.
pub fn biomarker_table(
    ct: &Volume,
    mask: &LabelMask,
    schema: &LabelSchema,
    patient_id: &str,
) -> Result<BiomarkerRecord> {
    check_dims(ct, mask)?;
    let mut rec = BiomarkerRecord::new(patient_id);

    for (prefix, s) in [
        ("liver", Structure::Liver),
        ("spleen", Structure::Spleen),
        ("pancreas", Structure::Pancreas),
    ] {
        organ_features(&mut rec, ct, mask, prefix, &schema.resolve(s));
    }

    for prefix in ["liver", "pancreas"] {
        let fat_volume = rec
            .get(&format!("{prefix}_fat_fraction"))
            .zip(rec.get(&format!("{prefix}_volume_mm3")))
            .map(|(f, v)| f * v);
        rec.set(&format!("{prefix}_fat_volume_mm3"), fat_volume);
    }

    let level = |s: Structure| {
        let labels = schema.resolve(s);
        if labels.is_empty() {
            None
        } else {
            vertebral_slice(mask, &labels).ok()
        }
    };
    let l3 = level(Structure::VertebraL3);
    let l1 = level(Structure::VertebraL1);
    level_features(&mut rec, ct, mask, "muscle_l3", &schema.resolve(Structure::Muscle), l3);
    level_features(
        &mut rec,
        ct,
        mask,
        "visceral_fat_l1",
        &schema.resolve(Structure::VisceralFat),
        l1,
    );
    level_features(
        &mut rec,
        ct,
        mask,
        "subcutaneous_fat_l1",
        &schema.resolve(Structure::SubcutaneousFat),
        l1,
    );
    Ok(rec)
}
