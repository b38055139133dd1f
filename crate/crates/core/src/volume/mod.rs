//! Geometry-aware dense 3D volumes and NIfTI-1 input/output.
//!
//! Every downstream module works on [`VoxelGrid`] (binary masks) and
//! [`IntensityVolume`] (Hounsfield units). Data are stored x-fastest, so the
//! linear index of `(x, y, z)` is `x + nx * (y + ny * z)`.

mod nifti;

pub use nifti::{read_mask, read_volume, write_mask, write_volume};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("non-finite voxel value at index {0}")]
    NonFinite(usize),
}

/// Grid dimensions plus voxel spacing in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidGeometry(format!(
                "all dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidGeometry(format!(
                "all spacing components must be > 0, got {spacing:?}"
            )));
        }
        Ok(Geometry { dims, spacing })
    }

    /// Unit spacing.
    pub fn isotropic(dims: [usize; 3]) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Two volumes are aligned when dims and spacing match element-wise.
    pub fn is_aligned(&self, other: &Geometry) -> bool {
        self == other
    }

    /// Physical distance between two voxel centers.
    pub fn distance_mm(&self, a: [usize; 3], b: [usize; 3]) -> f64 {
        let mut acc = 0.0;
        for ax in 0..3 {
            let d = (a[ax] as f64 - b[ax] as f64) * self.spacing[ax];
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// Array axis; `X` varies fastest in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(format!("unknown axis '{other}', expected x, y or z")),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Orientation fields carried through from the source header so that
/// written files keep their world placement. Metrics never look at them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub qfac: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation {
            qfac: 1.0,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
        }
    }
}

/// Dense 3D array with geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    geometry: Geometry,
    data: Vec<T>,
    orientation: Orientation,
}

/// Binary mask (prediction or ground truth).
pub type VoxelGrid = Grid<bool>;

/// Scalar volume in Hounsfield units.
pub type IntensityVolume = Grid<f64>;

impl<T> Grid<T> {
    pub fn from_vec(geometry: Geometry, data: Vec<T>) -> Result<Self, VolumeError> {
        if data.len() != geometry.len() {
            return Err(VolumeError::DimensionMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                geometry.dims[0],
                geometry.dims[1],
                geometry.dims[2]
            )));
        }
        Ok(Grid {
            geometry,
            data,
            orientation: Orientation::default(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
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

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn is_aligned<U>(&self, other: &Grid<U>) -> bool {
        self.geometry.is_aligned(&other.geometry)
    }

    /// Same geometry and orientation, new payload.
    pub(crate) fn with_data<U>(&self, data: Vec<U>) -> Grid<U> {
        debug_assert_eq!(data.len(), self.data.len());
        Grid {
            geometry: self.geometry,
            data,
            orientation: self.orientation,
        }
    }

    pub(crate) fn from_parts(geometry: Geometry, data: Vec<T>, orientation: Orientation) -> Self {
        debug_assert_eq!(data.len(), geometry.len());
        Grid {
            geometry,
            data,
            orientation,
        }
    }
}

impl<T: Copy> Grid<T> {
    pub fn filled(geometry: Geometry, value: T) -> Self {
        Grid {
            geometry,
            data: vec![value; geometry.len()],
            orientation: Orientation::default(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.geometry.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.geometry.index(x, y, z);
        self.data[i] = v;
    }

    /// Reverses the data along each axis whose flag is set.
    pub fn flipped_axes(&self, axes: [bool; 3]) -> Self {
        let [nx, ny, nz] = self.dims();
        let mut data = Vec::with_capacity(self.data.len());
        for z in 0..nz {
            let sz = if axes[2] { nz - 1 - z } else { z };
            for y in 0..ny {
                let sy = if axes[1] { ny - 1 - y } else { y };
                let row = nx * (sy + ny * sz);
                if axes[0] {
                    data.extend(self.data[row..row + nx].iter().rev());
                } else {
                    data.extend_from_slice(&self.data[row..row + nx]);
                }
            }
        }
        self.with_data(data)
    }

    /// Reverses the data along `axis`; geometry is unchanged.
    pub fn flipped(&self, axis: Axis) -> Self {
        let mut axes = [false; 3];
        axes[axis.index()] = true;
        self.flipped_axes(axes)
    }
}

impl Grid<bool> {
    pub fn empty(geometry: Geometry) -> Self {
        Self::filled(geometry, false)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_all_background(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Linear indices of foreground voxels in scan order.
    pub fn foreground_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    /// Voxel-wise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &VoxelGrid) -> bool {
        self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

impl Grid<f64> {
    pub fn check_finite(&self) -> Result<(), VolumeError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(VolumeError::NonFinite(i)),
            None => Ok(()),
        }
    }
}
