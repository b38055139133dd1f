//! Voxel-lattice algorithms: component labeling, exact anisotropic distance
//! transform and topology-preserving thinning.

mod distance;
mod labeling;
mod thinning;

pub use distance::{distance_transform, DistanceField};
pub use labeling::{component_count, connected_components, largest_component, LabelGrid};
pub use thinning::skeletonize;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MorphologyError {
    #[error("mask has no foreground voxels")]
    EmptyMask,
}

/// Voxel adjacency used by labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &FACE_OFFSETS,
            Connectivity::TwentySix => &NEIGHBOR_OFFSETS_26,
        }
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

pub(crate) const FACE_OFFSETS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

pub(crate) const NEIGHBOR_OFFSETS_26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut k = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[k] = [dx, dy, dz];
                    k += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};
