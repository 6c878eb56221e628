//! Synthetic CT phantoms with analytically known ground truth, and synthetic
//! screening cohorts with class-conditional Gaussian features.
//!
//! Phantom coordinates are millimeters with voxel `(i, j, k)` centered at
//! `(i·sx, j·sy, k·sz)`. Row `j = 0` is anterior.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Duration, Months, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{LabelMask, Volume};
use crate::maskops::{BiomarkerRecord, FAT_HU_WINDOW};
use crate::schema::{LabelSchema, Structure};
use crate::screening::PatientRecord;

/// Per-axis supersampling factor for analytic volumes.
pub const SUPERSAMPLE: usize = 10;
pub const BACKGROUND_HU: f64 = -1000.0;
pub const MIN_COHORT: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("{0} does not fit inside the grid")]
    SpecOutOfBounds(String),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Ellipsoid { center, radii } => {
                (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Box { min, max } => (0..3).all(|a| min[a] <= p[a] && p[a] <= max[a]),
        }
    }

    /// Exact volume in mm³.
    pub fn volume(&self) -> f64 {
        match self {
            Shape::Ellipsoid { radii, .. } => 4.0 / 3.0 * PI * radii.iter().product::<f64>(),
            Shape::Box { min, max } => (0..3).map(|a| max[a] - min[a]).product(),
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Ellipsoid { center, radii } => (
                std::array::from_fn(|a| center[a] - radii[a]),
                std::array::from_fn(|a| center[a] + radii[a]),
            ),
            Shape::Box { min, max } => (*min, *max),
        }
    }
}

/// Two-valued tissue: voxels take `hu`, except a random `speckle_fraction`
/// that take `speckle_hu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    pub hu: f64,
    pub speckle_hu: f64,
    pub speckle_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub structure: Structure,
    pub shape: Shape,
    pub tissue: Tissue,
}

/// Superellipse cross-section `|u|^e + |v|^e ≤ 1` whose semi-axes shrink as
/// `sqrt(1 − w²)` along z, with a sinusoidal anterior boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PancreasShape {
    pub center: [f64; 3],
    /// In-plane semi-axes and the z half-length, mm.
    pub semi_axes: [f64; 3],
    pub exponent: f64,
    pub amplitude: f64,
    pub period: f64,
    /// Label head/body/tail by thirds of the x extent instead of one label.
    pub subregions: bool,
    pub tissue: Tissue,
}

impl PancreasShape {
    /// Anterior and posterior boundary rows (mm) at `(x, z)`, if the column
    /// intersects the shape.
    pub fn boundary(&self, x: f64, z: f64) -> Option<(f64, f64)> {
        let [cx, cy, cz] = self.center;
        let w = (z - cz) / self.semi_axes[2];
        if w.abs() > 1.0 {
            return None;
        }
        let s = (1.0 - w * w).sqrt();
        let u = (x - cx) / (self.semi_axes[0] * s);
        if !(u.abs() <= 1.0) {
            return None;
        }
        let h = self.semi_axes[1] * s * (1.0 - u.abs().powf(self.exponent)).powf(1.0 / self.exponent);
        Some((cy - h + self.serration(x, h), cy + h))
    }

    /// Smooth anterior boundary without serrations.
    pub fn base_anterior(&self, x: f64, z: f64) -> Option<f64> {
        let smooth = PancreasShape {
            amplitude: 0.0,
            ..self.clone()
        };
        smooth.boundary(x, z).map(|b| b.0)
    }

    /// Row offset of the anterior boundary. The amplitude is limited to half
    /// the local half-thickness near the tips so the boundary cannot cross
    /// the posterior side.
    fn serration(&self, x: f64, h: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let a = self.amplitude.min(h / 2.0);
        a * (2.0 * PI * (x - self.center[0]) / self.period).sin()
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.boundary(p[0], p[2]).is_some_and(|(top, bottom)| top <= p[1] && p[1] <= bottom)
    }

    fn structure_at(&self, x: f64) -> Structure {
        if !self.subregions {
            return Structure::Pancreas;
        }
        let third = 2.0 * self.semi_axes[0] / 3.0;
        let left = self.center[0] - self.semi_axes[0];
        if x < left + third {
            Structure::PancreasHead
        } else if x < left + 2.0 * third {
            Structure::PancreasBody
        } else {
            Structure::PancreasTail
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let c = self.center;
        let s = self.semi_axes;
        let a = self.amplitude;
        (
            [c[0] - s[0], c[1] - s[1] - a, c[2] - s[2]],
            [c[0] + s[0], c[1] + s[1], c[2] + s[2]],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub pancreas: PancreasShape,
    pub structures: Vec<Placement>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// 128 × 128 × 20 mm field at 0.5 mm with every structure the biomarker
    /// table reads. Box faces sit between voxel centers.
    fn default() -> Self {
        let tissue = |hu, speckle_hu, speckle_fraction| Tissue {
            hu,
            speckle_hu,
            speckle_fraction,
        };
        let boxed = |structure, min, max, t| Placement {
            structure,
            shape: Shape::Box { min, max },
            tissue: t,
        };
        Self {
            dims: [256, 256, 40],
            spacing: [0.5, 0.5, 0.5],
            pancreas: PancreasShape {
                center: [64.0, 68.0, 10.0],
                semi_axes: [28.0, 7.0, 8.0],
                exponent: 2.5,
                amplitude: 0.0,
                period: 8.0,
                subregions: false,
                tissue: tissue(40.0, -100.0, 0.1),
            },
            structures: vec![
                Placement {
                    structure: Structure::Liver,
                    shape: Shape::Ellipsoid {
                        center: [22.0, 95.0, 10.0],
                        radii: [16.0, 12.0, 9.0],
                    },
                    tissue: tissue(60.0, -100.0, 0.05),
                },
                Placement {
                    structure: Structure::Spleen,
                    shape: Shape::Ellipsoid {
                        center: [108.0, 95.0, 10.0],
                        radii: [10.0, 8.0, 6.0],
                    },
                    tissue: tissue(50.0, -80.0, 0.02),
                },
                boxed(Structure::VertebraL1, [55.75, 109.75, 0.75], [72.25, 124.25, 4.25], tissue(400.0, 400.0, 0.0)),
                boxed(Structure::VertebraL3, [55.75, 109.75, 14.75], [72.25, 124.25, 18.25], tissue(400.0, 400.0, 0.0)),
                boxed(Structure::Muscle, [75.75, 107.75, 0.25], [94.25, 124.25, 18.75], tissue(45.0, -120.0, 0.08)),
                boxed(Structure::VisceralFat, [39.75, 19.75, 0.25], [88.25, 52.25, 18.75], tissue(-100.0, 10.0, 0.1)),
                boxed(Structure::SubcutaneousFat, [3.75, 1.75, 0.25], [124.25, 14.25, 18.75], tissue(-110.0, 15.0, 0.05)),
            ],
            seed: 1,
        }
    }
}

impl PhantomSpec {
    /// The default phantom with anterior serrations of `amplitude` mm.
    pub fn serrated(amplitude: f64, period: f64) -> Self {
        let mut s = Self::default();
        s.pancreas.amplitude = amplitude;
        s.pancreas.period = period;
        s
    }

    pub fn schema(&self) -> LabelSchema {
        if self.pancreas.subregions {
            LabelSchema::standard_subregions()
        } else {
            LabelSchema::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(PhantomError::InvalidSpec(m));
        if self.dims.iter().any(|&d| d == 0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return invalid("dims and spacing must be positive".into());
        }
        let p = &self.pancreas;
        if !(p.amplitude >= 0.0) {
            return invalid("serration amplitude must be non-negative".into());
        }
        let in_plane = self.spacing[0].max(self.spacing[1]);
        if p.amplitude > 0.0 && !(p.period > 2.0 * in_plane) {
            return invalid(format!("serration period must exceed {} mm", 2.0 * in_plane));
        }
        if !(p.exponent > 0.0) || p.semi_axes.iter().any(|&a| !(a > 0.0)) {
            return invalid("pancreas exponent and semi-axes must be positive".into());
        }
        for t in std::iter::once(&p.tissue).chain(self.structures.iter().map(|s| &s.tissue)) {
            if !(0.0..=1.0).contains(&t.speckle_fraction) {
                return invalid("speckle fraction must lie in [0, 1]".into());
            }
        }
        let extent: [f64; 3] = std::array::from_fn(|a| (self.dims[a] - 1) as f64 * self.spacing[a]);
        let check = |name: String, (lo, hi): ([f64; 3], [f64; 3])| {
            if (0..3).all(|a| lo[a] >= 0.0 && hi[a] <= extent[a]) {
                Ok(())
            } else {
                Err(PhantomError::SpecOutOfBounds(name))
            }
        };
        check("pancreas".into(), p.bounds())?;
        for s in &self.structures {
            if matches!(s.structure, Structure::Pancreas | Structure::PancreasHead | Structure::PancreasBody | Structure::PancreasTail) {
                return invalid("the pancreas is described by the `pancreas` field".into());
            }
            check(format!("{:?}", s.structure), s.shape.bounds())?;
        }
        Ok(())
    }
}

/// Closed-form statistics of a two-valued voxel population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueTruth {
    pub voxel_count: usize,
    pub speckle_count: usize,
    pub mean_hu: f64,
    pub sd_hu: f64,
    pub fat_fraction: f64,
}

impl TissueTruth {
    fn from_counts(n: usize, speckle: usize, t: &Tissue) -> Self {
        let (nf, sf) = (n as f64, speckle as f64);
        let base = nf - sf;
        let mean = (base * t.hu + sf * t.speckle_hu) / nf;
        let sd = if n > 1 {
            (base * sf / (nf * (nf - 1.0))).sqrt() * (t.hu - t.speckle_hu).abs()
        } else {
            0.0
        };
        let fat = |hu: f64| (FAT_HU_WINDOW.0..=FAT_HU_WINDOW.1).contains(&hu) as u8 as f64;
        Self {
            voxel_count: n,
            speckle_count: speckle,
            mean_hu: mean,
            sd_hu: sd,
            fat_fraction: (base * fat(t.hu) + sf * fat(t.speckle_hu)) / nf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureTruth {
    pub labels: Vec<u32>,
    pub analytic_volume_mm3: f64,
    pub voxel_volume_mm3: f64,
    pub tissue: TissueTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTruth {
    pub slice: usize,
    pub area_mm2: f64,
    pub tissue: TissueTruth,
}

/// Ground truth written next to every phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub amplitude_mm: f64,
    pub period_mm: f64,
    /// `10 · (2/π) · amplitude`: the lobularity of a pure sinusoid about its
    /// centerline.
    pub sinusoid_psl: f64,
    pub structures: BTreeMap<Structure, StructureTruth>,
    pub levels: BTreeMap<String, LevelTruth>,
    /// Every biomarker except `psl_median`, in closed form.
    pub features: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: Volume,
    pub mask: LabelMask,
    pub schema: LabelSchema,
    pub truth: PhantomTruth,
}

enum Solid<'a> {
    Pancreas(&'a PancreasShape),
    Other(&'a Shape),
}

impl Solid<'_> {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Solid::Pancreas(s) => s.contains(p),
            Solid::Other(s) => s.contains(p),
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Solid::Pancreas(s) => s.bounds(),
            Solid::Other(s) => s.bounds(),
        }
    }
}

/// Volume of a solid measured on a grid `SUPERSAMPLE` times finer than the
/// image. Voxels whose eight corners agree are taken as wholly inside or
/// outside.
fn supersampled_volume(solid: &Solid, spacing: [f64; 3]) -> f64 {
    let (lo, hi) = solid.bounds();
    let range = |a: usize| {
        let first = (lo[a] / spacing[a]).floor() as i64 - 1;
        let last = (hi[a] / spacing[a]).ceil() as i64 + 1;
        first..=last
    };
    let (xs, ys) = (range(0), range(1));
    let m = SUPERSAMPLE;
    let sub = |i: i64, k: usize, a: usize| (i as f64 - 0.5 + (k as f64 + 0.5) / m as f64) * spacing[a];
    let voxel = spacing.iter().product::<f64>();
    let counted: f64 = range(2)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|z| {
            let mut filled = 0.0;
            for y in ys.clone() {
                for x in xs.clone() {
                    let mut inside = 0;
                    for corner in 0..8 {
                        let c = [x, y, z];
                        let p: [f64; 3] = std::array::from_fn(|a| (c[a] as f64 + if corner >> a & 1 == 1 { 0.5 } else { -0.5 }) * spacing[a]);
                        inside += solid.contains(p) as usize;
                    }
                    if inside == 8 {
                        filled += 1.0;
                    } else if inside > 0 {
                        let mut hits = 0usize;
                        for kz in 0..m {
                            for ky in 0..m {
                                for kx in 0..m {
                                    hits += solid.contains([sub(x, kx, 0), sub(y, ky, 1), sub(z, kz, 2)]) as usize;
                                }
                            }
                        }
                        filled += hits as f64 / (m * m * m) as f64;
                    }
                }
            }
            filled
        })
        .sum();
    counted * voxel
}

/// Rasterize the phantom, plant fat speckle, and derive the ground truth.
pub fn make_pancreas_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let schema = spec.schema();
    let dims = spec.dims;
    let sp = spec.spacing;
    let mut mask = LabelMask::filled(dims, sp, 0).expect("validated dims");
    let mut tissue_of: BTreeMap<u32, Tissue> = BTreeMap::new();

    let label = |s: Structure| schema.label(s).expect("standard schema covers every structure");
    let paint = |mask: &mut LabelMask, solid: &Solid, label_at: &dyn Fn(f64) -> u32| -> Result<()> {
        let (lo, hi) = solid.bounds();
        let idx = |a: usize, v: f64, up: bool| {
            let r = v / sp[a];
            (if up { r.floor() } else { r.ceil() }).clamp(0.0, (dims[a] - 1) as f64) as usize
        };
        for z in idx(2, lo[2], false)..=idx(2, hi[2], true) {
            for y in idx(1, lo[1], false)..=idx(1, hi[1], true) {
                for x in idx(0, lo[0], false)..=idx(0, hi[0], true) {
                    let p = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                    if solid.contains(p) {
                        if *mask.get(x, y, z) != 0 {
                            return Err(PhantomError::InvalidSpec(format!("structures overlap at voxel {x},{y},{z}")));
                        }
                        mask.set(x, y, z, label_at(p[0]));
                    }
                }
            }
        }
        Ok(())
    };

    let pancreas = &spec.pancreas;
    paint(&mut mask, &Solid::Pancreas(pancreas), &|x| label(pancreas.structure_at(x)))?;
    for s in schema.resolve(Structure::Pancreas) {
        tissue_of.insert(s, pancreas.tissue);
    }
    for p in &spec.structures {
        let l = label(p.structure);
        paint(&mut mask, &Solid::Other(&p.shape), &|_| l)?;
        tissue_of.insert(l, p.tissue);
    }

    // Speckle is drawn in storage order from one seeded stream.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut speckled = vec![false; mask.len()];
    let ct_data: Vec<f64> = mask
        .data()
        .iter()
        .zip(speckled.iter_mut())
        .map(|(&l, sp)| match tissue_of.get(&l) {
            None => BACKGROUND_HU,
            Some(t) => {
                if rng.random::<f64>() < t.speckle_fraction {
                    *sp = true;
                    t.speckle_hu
                } else {
                    t.hu
                }
            }
        })
        .collect();
    let ct = Volume::new(dims, sp, ct_data).expect("same shape as mask");

    let count = |labels: &[u32], z: Option<usize>| {
        let plane = dims[0] * dims[1];
        let range = match z {
            Some(z) => z * plane..(z + 1) * plane,
            None => 0..mask.len(),
        };
        let mut n = 0;
        let mut s = 0;
        for i in range {
            if labels.contains(&mask.data()[i]) {
                n += 1;
                s += speckled[i] as usize;
            }
        }
        (n, s)
    };

    let voxel = mask.voxel_volume();
    let mut structures = BTreeMap::new();
    let mut solids: Vec<(Structure, Solid, Tissue)> = vec![(Structure::Pancreas, Solid::Pancreas(pancreas), pancreas.tissue)];
    solids.extend(spec.structures.iter().map(|p| (p.structure, Solid::Other(&p.shape), p.tissue)));
    for (s, solid, tissue) in &solids {
        let labels = schema.resolve(*s);
        let (n, speckle) = count(&labels, None);
        if n == 0 {
            return Err(PhantomError::InvalidSpec(format!("{s:?} covers no voxel centers")));
        }
        structures.insert(
            *s,
            StructureTruth {
                labels,
                analytic_volume_mm3: match solid {
                    Solid::Other(shape) => shape.volume(),
                    Solid::Pancreas(_) => supersampled_volume(solid, sp),
                },
                voxel_volume_mm3: n as f64 * voxel,
                tissue: TissueTruth::from_counts(n, speckle, tissue),
            },
        );
    }

    let median_slice = |labels: &[u32]| {
        let per: Vec<usize> = (0..dims[2]).map(|z| count(labels, Some(z)).0).collect();
        let target = (per.iter().sum::<usize>() - 1) / 2;
        let mut seen = 0;
        per.iter().position(|&c| {
            seen += c;
            seen > target
        })
    };
    let mut levels = BTreeMap::new();
    for (name, structure, vertebra) in [
        ("muscle_l3", Structure::Muscle, Structure::VertebraL3),
        ("visceral_fat_l1", Structure::VisceralFat, Structure::VertebraL1),
        ("subcutaneous_fat_l1", Structure::SubcutaneousFat, Structure::VertebraL1),
    ] {
        let (Some(level), Some(placement)) = (
            structures.get(&vertebra).and_then(|v| median_slice(&v.labels)),
            spec.structures.iter().find(|p| p.structure == structure),
        ) else {
            continue;
        };
        let labels = schema.resolve(structure);
        let (n, speckle) = count(&labels, Some(level));
        if n > 0 {
            levels.insert(
                name.to_string(),
                LevelTruth {
                    slice: level,
                    area_mm2: n as f64 * sp[0] * sp[1],
                    tissue: TissueTruth::from_counts(n, speckle, &placement.tissue),
                },
            );
        }
    }

    let mut features = BiomarkerRecord::new("");
    for (prefix, s) in [("liver", Structure::Liver), ("spleen", Structure::Spleen), ("pancreas", Structure::Pancreas)] {
        let t = structures.get(&s);
        features.set(&format!("{prefix}_volume_mm3"), t.map(|t| t.voxel_volume_mm3));
        features.set(&format!("{prefix}_attenuation_mean_hu"), t.map(|t| t.tissue.mean_hu));
        features.set(&format!("{prefix}_attenuation_sd_hu"), t.map(|t| t.tissue.sd_hu));
        features.set(&format!("{prefix}_fat_fraction"), t.map(|t| t.tissue.fat_fraction));
        if prefix != "spleen" {
            features.set(&format!("{prefix}_fat_volume_mm3"), t.map(|t| t.tissue.fat_fraction * t.voxel_volume_mm3));
        }
    }
    for prefix in ["muscle_l3", "visceral_fat_l1", "subcutaneous_fat_l1"] {
        let l = levels.get(prefix);
        features.set(&format!("{prefix}_area_mm2"), l.map(|l| l.area_mm2));
        features.set(&format!("{prefix}_attenuation_mean_hu"), l.map(|l| l.tissue.mean_hu));
        features.set(&format!("{prefix}_attenuation_sd_hu"), l.map(|l| l.tissue.sd_hu));
        features.set(&format!("{prefix}_fat_fraction"), l.map(|l| l.tissue.fat_fraction));
    }
    let mut features = features.features;
    features.remove("psl_median");

    Ok(Phantom {
        ct,
        mask,
        schema,
        truth: PhantomTruth {
            amplitude_mm: pancreas.amplitude,
            period_mm: pancreas.period,
            sinusoid_psl: 10.0 * 2.0 / PI * pancreas.amplitude,
            structures,
            levels,
            features,
        },
    })
}

/// Feature means and standard deviations of the non-diabetic class, with
/// lower bounds applied after sampling.
const BASE_FEATURES: [(&str, f64, f64, f64); 25] = [
    ("liver_volume_mm3", 1.6e6, 3.0e5, 1.0e5),
    ("liver_attenuation_mean_hu", 55.0, 10.0, -100.0),
    ("liver_attenuation_sd_hu", 20.0, 4.0, 1.0),
    ("liver_fat_fraction", 0.02, 0.01, 0.0),
    ("spleen_volume_mm3", 2.0e5, 5.0e4, 1.0e4),
    ("spleen_attenuation_mean_hu", 50.0, 8.0, -100.0),
    ("spleen_attenuation_sd_hu", 18.0, 4.0, 1.0),
    ("spleen_fat_fraction", 0.01, 0.005, 0.0),
    ("pancreas_volume_mm3", 7.0e4, 1.5e4, 5.0e3),
    ("pancreas_attenuation_mean_hu", 45.0, 10.0, -100.0),
    ("pancreas_attenuation_sd_hu", 25.0, 5.0, 1.0),
    ("pancreas_fat_fraction", 0.08, 0.04, 0.0),
    ("muscle_l3_area_mm2", 1.5e4, 3.0e3, 1.0e3),
    ("muscle_l3_attenuation_mean_hu", 40.0, 8.0, -100.0),
    ("muscle_l3_attenuation_sd_hu", 25.0, 5.0, 1.0),
    ("muscle_l3_fat_fraction", 0.08, 0.03, 0.0),
    ("visceral_fat_l1_area_mm2", 1.2e4, 5.0e3, 5.0e2),
    ("visceral_fat_l1_attenuation_mean_hu", -95.0, 8.0, -190.0),
    ("visceral_fat_l1_attenuation_sd_hu", 20.0, 4.0, 1.0),
    ("visceral_fat_l1_fat_fraction", 0.9, 0.05, 0.0),
    ("subcutaneous_fat_l1_area_mm2", 2.0e4, 7.0e3, 5.0e2),
    ("subcutaneous_fat_l1_attenuation_mean_hu", -100.0, 8.0, -190.0),
    ("subcutaneous_fat_l1_attenuation_sd_hu", 18.0, 4.0, 1.0),
    ("subcutaneous_fat_l1_fat_fraction", 0.92, 0.04, 0.0),
    ("psl_median", 3.2, 1.5, 0.0),
];

/// Diabetic-class shifts in units of the non-diabetic standard deviation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectSizes(pub BTreeMap<String, f64>);

impl EffectSizes {
    pub fn none() -> Self {
        Self::default()
    }

    /// Higher lobularity, smaller and fattier pancreas; no clinical signal.
    pub fn strong() -> Self {
        Self(
            [
                ("psl_median", 1.5),
                ("pancreas_volume_mm3", -1.5),
                ("pancreas_fat_fraction", 1.5),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }

    fn get(&self, name: &str) -> f64 {
        self.0.get(name).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub records: Vec<PatientRecord>,
    pub biomarkers: Vec<BiomarkerRecord>,
}

/// One in four patients is diabetic. Features are independent Gaussians per
/// class; dates are drawn so every patient satisfies its class's labeling
/// rules.
pub fn make_synthetic_cohort(n: usize, effects: &EffectSizes, seed: u64) -> Result<SyntheticCohort> {
    if n < MIN_COHORT {
        return Err(PhantomError::InvalidSpec(format!("cohort size {n} is below {MIN_COHORT}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let epoch = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");
    let mut records = Vec::with_capacity(n);
    let mut biomarkers = Vec::with_capacity(n);
    for i in 0..n {
        let diabetic = i % 4 == 0;
        let id = format!("S{i:04}");
        let draw = |name: &str, mean: f64, sd: f64, lower: f64, rng: &mut ChaCha8Rng| {
            let shift = if diabetic { effects.get(name) } else { 0.0 };
            (mean + sd * (shift + std.sample(rng))).max(lower)
        };
        let age = draw("age", 55.0, 12.0, 18.0, &mut rng);
        let bmi = draw("bmi", 28.0, 5.0, 15.0, &mut rng);
        let mut rec = BiomarkerRecord::new(id.clone());
        for (name, mean, sd, lower) in BASE_FEATURES {
            let mut v = draw(name, mean, sd, lower, &mut rng);
            if name.ends_with("fat_fraction") {
                v = v.min(1.0);
            }
            rec.set(name, Some(v));
        }
        for organ in ["liver", "pancreas"] {
            let fat = rec.get(&format!("{organ}_fat_fraction")).zip(rec.get(&format!("{organ}_volume_mm3")));
            rec.set(&format!("{organ}_fat_volume_mm3"), fat.map(|(f, v)| f * v));
        }

        let ct = epoch + Duration::days(rng.random_range(0..3650));
        let (hba1c, hba1c_date, diagnosis, confirm) = if diabetic {
            (
                6.5 + rng.random_range(0.0..3.0),
                ct - Duration::days(rng.random_range(0..60)),
                Some(ct - Duration::days(rng.random_range(30..2000))),
                None,
            )
        } else {
            (
                rng.random_range(4.6..5.7),
                ct - Duration::days(rng.random_range(1..365)),
                None,
                Some(ct.checked_add_months(Months::new(48)).expect("in range") + Duration::days(rng.random_range(30..1500))),
            )
        };
        let round = |v: f64, d: i32| (v * 10f64.powi(d)).round() / 10f64.powi(d);
        records.push(PatientRecord {
            patient_id: id,
            age: round(age, 1),
            bmi: round(bmi, 1),
            hba1c: Some(round(hba1c, 1)),
            hba1c_date: Some(hba1c_date),
            ct_date: Some(ct),
            t2dm_diagnosis_date: diagnosis,
            confirm_date: confirm,
            ct_path: None,
            mask_path: None,
            biomarkers: None,
        });
        biomarkers.push(rec);
    }
    Ok(SyntheticCohort { records, biomarkers })
}
