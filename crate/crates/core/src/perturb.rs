//! Robustness variants of a scan: axis flips, additive Gaussian noise and
//! slice dropping along z. Masks go through the same flips and slice
//! selection as their images; noise applies to intensities only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::volume::{Axis, Geometry, Grid, IntensityVolume};

/// Default noise standard deviation in HU.
pub const DEFAULT_SIGMA_HU: f64 = 50.0;

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("ratio {0} is out of range")]
    RatioOutOfRange(f64),
    #[error("sigma {0} must be a finite non-negative number")]
    InvalidSigma(f64),
    #[error("need at least 2 slices along z, got {0}")]
    TooFewSlices(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbKind {
    Flip(Axis),
    Noise {
        sigma_hu: f64,
    },
    /// `None` draws a ratio in [0.5, 1] from the seed.
    Downsample {
        ratio: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn new(kind: PerturbKind, seed: u64) -> Result<Self, PerturbError> {
        match kind {
            PerturbKind::Noise { sigma_hu } if !(sigma_hu.is_finite() && sigma_hu > 0.0) => {
                return Err(PerturbError::InvalidSigma(sigma_hu))
            }
            PerturbKind::Downsample { ratio: Some(r) } if !(0.5..=1.0).contains(&r) => {
                return Err(PerturbError::RatioOutOfRange(r))
            }
            _ => {}
        }
        Ok(PerturbSpec { kind, seed })
    }

    pub fn kind_name(&self) -> String {
        match self.kind {
            PerturbKind::Flip(a) => format!("flip{a}"),
            PerturbKind::Noise { .. } => "noise".into(),
            PerturbKind::Downsample { .. } => "downsample".into(),
        }
    }

    /// Parameters as a short `key=value` string for manifests.
    pub fn params(&self) -> String {
        match self.kind {
            PerturbKind::Flip(a) => format!("axis={a}"),
            PerturbKind::Noise { sigma_hu } => format!("sigma_hu={sigma_hu}"),
            PerturbKind::Downsample { ratio } => format!("ratio={}", self.resolved_ratio_of(ratio)),
        }
    }

    fn resolved_ratio_of(&self, ratio: Option<f64>) -> f64 {
        ratio.unwrap_or_else(|| random_ratio(self.seed))
    }

    /// Downsampling ratio after resolving a seeded draw.
    pub fn ratio(&self) -> Option<f64> {
        match self.kind {
            PerturbKind::Downsample { ratio } => Some(self.resolved_ratio_of(ratio)),
            _ => None,
        }
    }

    /// Applies the perturbation to an image.
    pub fn apply_image(&self, vol: &IntensityVolume) -> Result<IntensityVolume, PerturbError> {
        match self.kind {
            PerturbKind::Flip(a) => Ok(flip(vol, a)),
            PerturbKind::Noise { sigma_hu } => add_noise(vol, sigma_hu, self.seed),
            PerturbKind::Downsample { ratio } => downsample_z(vol, self.resolved_ratio_of(ratio)),
        }
    }

    /// Applies the matching geometric change to a mask; noise leaves it as is.
    pub fn apply_mask<T: Copy>(&self, mask: &Grid<T>) -> Result<Grid<T>, PerturbError> {
        match self.kind {
            PerturbKind::Flip(a) => Ok(flip(mask, a)),
            PerturbKind::Noise { .. } => Ok(mask.clone()),
            PerturbKind::Downsample { ratio } => downsample_z(mask, self.resolved_ratio_of(ratio)),
        }
    }
}

pub fn flip<T: Copy>(grid: &Grid<T>, axis: Axis) -> Grid<T> {
    grid.flipped(axis)
}

/// Adds i.i.d. N(0, sigma²) noise from a ChaCha8 stream seeded by `seed`.
pub fn add_noise(
    vol: &IntensityVolume,
    sigma_hu: f64,
    seed: u64,
) -> Result<IntensityVolume, PerturbError> {
    if !(sigma_hu.is_finite() && sigma_hu >= 0.0) {
        return Err(PerturbError::InvalidSigma(sigma_hu));
    }
    if sigma_hu == 0.0 {
        return Ok(vol.clone());
    }
    let normal = Normal::new(0.0, sigma_hu).map_err(|_| PerturbError::InvalidSigma(sigma_hu))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vol.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Ratio in [0.5, 1] drawn from `seed`.
pub fn random_ratio(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random_range(0.5..=1.0)
}

/// Original slice indices kept when reducing `nz` slices by `ratio`.
pub fn slice_selection(nz: usize, ratio: f64) -> Result<Vec<usize>, PerturbError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(PerturbError::RatioOutOfRange(ratio));
    }
    if nz < 2 {
        return Err(PerturbError::TooFewSlices(nz));
    }
    let m = ((ratio * nz as f64).round() as usize).clamp(2, nz);
    let mut idx: Vec<usize> = (0..m)
        .map(|i| (i as f64 * (nz - 1) as f64 / (m - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    Ok(idx)
}

/// Keeps evenly spaced z slices; z spacing grows by `nz / m`.
pub fn downsample_z<T: Copy>(grid: &Grid<T>, ratio: f64) -> Result<Grid<T>, PerturbError> {
    let [nx, ny, nz] = grid.dims();
    let keep = slice_selection(nz, ratio)?;
    if keep.len() == nz {
        return Ok(grid.clone());
    }
    let plane = nx * ny;
    let mut data = Vec::with_capacity(plane * keep.len());
    for &z in &keep {
        data.extend_from_slice(&grid.data()[z * plane..(z + 1) * plane]);
    }
    let g = grid.geometry();
    let mut spacing = g.spacing;
    spacing[2] *= nz as f64 / keep.len() as f64;
    let geometry = Geometry::new([nx, ny, keep.len()], spacing).expect("derived geometry is valid");
    Ok(Grid::from_parts(geometry, data, *grid.orientation()))
}
