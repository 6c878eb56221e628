//! Dense 3D voxel grids shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("dimensions must be positive, got {0:?}")]
    ZeroDimension([usize; 3]),
    #[error("spacing must be finite and positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("voxel count {actual} does not match dimensions {dims:?}")]
    LengthMismatch { dims: [usize; 3], actual: usize },
}

/// Orientation of the voxel axes relative to the patient.
///
/// `Canonical` means +x points to patient-left, +y to patient-posterior and
/// +z to patient-superior, so the anterior side of an axial slice is row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Canonical,
    Unknown,
}

/// A 3D grid stored x-fastest: `index = x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: [usize; 3],
    spacing: [f64; 3],
    orientation: Orientation,
    data: Vec<T>,
}

/// CT attenuation in Hounsfield units.
pub type Volume = Grid<f64>;
/// One integer label per voxel, zero for background.
pub type LabelMask = Grid<u32>;
pub type BinaryMask = Grid<bool>;

fn check_geometry(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<(), GridError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(GridError::ZeroDimension(dims));
    }
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(GridError::BadSpacing(spacing));
    }
    if dims[0] * dims[1] * dims[2] != len {
        return Err(GridError::LengthMismatch { dims, actual: len });
    }
    Ok(())
}

impl<T> Grid<T> {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self, GridError> {
        check_geometry(dims, spacing, data.len())?;
        Ok(Self {
            dims,
            spacing,
            orientation: Orientation::Canonical,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self, GridError>
    where
        T: Clone,
    {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![value; n])
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// The contiguous voxels of axial slice `z`, row-major (`y` rows of `x`).
    pub fn slice_z(&self, z: usize) -> &[T] {
        let n = self.dims[0] * self.dims[1];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.dims == other.dims
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            orientation: self.orientation,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Reverse the y axis in place (anterior-down datasets).
    pub fn flip_y(&mut self) {
        let [nx, ny, nz] = self.dims;
        for z in 0..nz {
            for y in 0..ny / 2 {
                let a = nx * (y + ny * z);
                let b = nx * (ny - 1 - y + ny * z);
                for x in 0..nx {
                    self.data.swap(a + x, b + x);
                }
            }
        }
    }
}

impl LabelMask {
    /// Foreground wherever the voxel carries any of `labels`.
    pub fn select(&self, labels: &[u32]) -> BinaryMask {
        self.map(|v| labels.contains(v))
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
