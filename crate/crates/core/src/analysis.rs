//! Residual projection maps and imaging biomarkers: airway-to-lung volume
//! ratio, first-order intensity statistics and simple shape descriptors.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen};
use thiserror::Error;

use crate::tree::{AirwayTree, SizeClass};
use crate::volume::{Axis, IntensityVolume, VoxelGrid};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("grids are not aligned")]
    GeometryMismatch,
    #[error("lung mask is empty")]
    EmptyLungMask,
    #[error("region of interest is empty")]
    EmptyRoi,
}

/// Histogram range and bin width (HU) used for entropy.
pub const HIST_MIN_HU: f64 = -1024.0;
pub const HIST_MAX_HU: f64 = 400.0;
pub const HIST_BIN_HU: f64 = 25.0;

/// Signed projection of `gt − pred`, row-major over the two remaining axes
/// (the lower-numbered axis varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub width: usize,
    pub height: usize,
    pub axis: Axis,
    pub values: Vec<i64>,
}

impl HeatmapGrid {
    pub fn get(&self, u: usize, v: usize) -> i64 {
        self.values[u + self.width * v]
    }

    pub fn total(&self) -> i64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> i64 {
        self.values.iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|u| self.get(u, v).to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary 8-bit PGM; 128 is zero, scaled symmetrically by the largest
    /// magnitude so that ±max map to 255 and 1.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let m = self.max_abs();
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| {
                if m == 0 {
                    128
                } else {
                    (128.0 + 127.0 * v as f64 / m as f64)
                        .round()
                        .clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        out.write_all(&bytes)
    }
}

pub fn residual_heatmap(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    axis: Axis,
) -> Result<HeatmapGrid, AnalysisError> {
    if !pred.is_aligned(gt) {
        return Err(AnalysisError::GeometryMismatch);
    }
    let dims = gt.dims();
    let (a, b) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let (width, height) = (dims[a], dims[b]);
    let mut values = vec![0i64; width * height];
    let geom = gt.geometry();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if p != g {
            let c = geom.coords(i);
            values[c[a] + width * c[b]] += g as i64 - p as i64;
        }
    }
    Ok(HeatmapGrid {
        width,
        height,
        axis,
        values,
    })
}

fn volume_ml(mask: &VoxelGrid) -> f64 {
    mask.count() as f64 * mask.geometry().voxel_volume_mm3() / 1000.0
}

/// Airway volume over lung volume.
pub fn compute_tav(airway: &VoxelGrid, lung: &VoxelGrid) -> Result<f64, AnalysisError> {
    if !airway.is_aligned(lung) {
        return Err(AnalysisError::GeometryMismatch);
    }
    let lung_ml = volume_ml(lung);
    if lung_ml == 0.0 {
        return Err(AnalysisError::EmptyLungMask);
    }
    Ok(volume_ml(airway) / lung_ml)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrder {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
    pub skewness: f64,
    /// Non-excess (normal = 3).
    pub kurtosis: f64,
    pub energy: f64,
    /// Shannon entropy in bits of the fixed-bin histogram.
    pub entropy: f64,
}

impl FirstOrder {
    pub const NAMES: [&'static str; 9] = [
        "mean", "median", "min", "max", "std", "skewness", "kurtosis", "energy", "entropy",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.mean,
            self.median,
            self.min,
            self.max,
            self.std,
            self.skewness,
            self.kurtosis,
            self.energy,
            self.entropy,
        ]
    }
}

/// Statistics of a sample; degenerate spreads give zero skewness and kurtosis.
pub fn first_order(samples: &[f64]) -> Result<FirstOrder, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyRoi);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0
    };
    let bins = ((HIST_MAX_HU - HIST_MIN_HU) / HIST_BIN_HU).ceil() as usize;
    let mut hist = vec![0usize; bins];
    for &x in samples {
        let b = ((x - HIST_MIN_HU) / HIST_BIN_HU).floor();
        hist[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let entropy = -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    Ok(FirstOrder {
        mean,
        median,
        min: sorted[0],
        max: sorted[k - 1],
        std: m2.sqrt(),
        skewness,
        kurtosis,
        energy: samples.iter().map(|x| x * x).sum(),
        entropy: entropy.max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFeatures {
    pub volume_ml: f64,
    /// Area of voxel faces between the region and the outside.
    pub surface_area_mm2: f64,
    /// Square root of the largest over the smallest principal variance.
    pub elongation: f64,
}

pub fn shape_features(roi: &VoxelGrid) -> Result<ShapeFeatures, AnalysisError> {
    if roi.is_all_background() {
        return Err(AnalysisError::EmptyRoi);
    }
    let g = roi.geometry();
    let s = g.spacing;
    let face_area = [s[1] * s[2], s[0] * s[2], s[0] * s[1]];
    let mut area = 0.0;
    let mut n = 0.0;
    let mut sum = [0.0; 3];
    let mut sum2 = Matrix3::<f64>::zeros();
    for i in roi.foreground_indices() {
        let c = g.coords(i);
        for axis in 0..3 {
            for step in [-1i64, 1] {
                let mut q = [c[0] as i64, c[1] as i64, c[2] as i64];
                q[axis] += step;
                let outside =
                    !g.contains(q) || !roi.get(q[0] as usize, q[1] as usize, q[2] as usize);
                if outside {
                    area += face_area[axis];
                }
            }
        }
        let p = [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]];
        n += 1.0;
        for a in 0..3 {
            sum[a] += p[a];
            for b in 0..3 {
                sum2[(a, b)] += p[a] * p[b];
            }
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            cov[(a, b)] = sum2[(a, b)] / n - (sum[a] / n) * (sum[b] / n);
        }
        // each voxel is a uniform box, not a point
        cov[(a, a)] += s[a] * s[a] / 12.0;
    }
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(ShapeFeatures {
        volume_ml: volume_ml(roi),
        surface_area_mm2: area,
        elongation: (hi / lo.max(f64::MIN_POSITIVE)).sqrt(),
    })
}

/// First-order statistics of `vol` over `roi`, plus the shape of `roi`.
pub fn radiomics_lite(
    vol: &IntensityVolume,
    roi: &VoxelGrid,
) -> Result<(FirstOrder, ShapeFeatures), AnalysisError> {
    if !vol.is_aligned(roi) {
        return Err(AnalysisError::GeometryMismatch);
    }
    let samples: Vec<f64> = roi.foreground_indices().map(|i| vol.data()[i]).collect();
    Ok((first_order(&samples)?, shape_features(roi)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerSet {
    pub tav: Option<f64>,
    pub airway_volume_ml: f64,
    pub lung_volume_ml: Option<f64>,
    pub total_length_mm: f64,
    pub branch_count: usize,
    pub per_size_counts: BTreeMap<SizeClass, usize>,
    pub firstorder: Option<FirstOrder>,
    pub shape: ShapeFeatures,
}

/// Biomarkers of an airway mask; TAV needs a lung mask, intensity
/// statistics need the image.
pub fn biomarkers(
    airway: &VoxelGrid,
    tree: &AirwayTree,
    lung: Option<&VoxelGrid>,
    image: Option<&IntensityVolume>,
) -> Result<BiomarkerSet, AnalysisError> {
    let tav = lung.map(|l| compute_tav(airway, l)).transpose()?;
    let firstorder = match image {
        Some(img) => Some(radiomics_lite(img, airway)?.0),
        None => None,
    };
    let counts = tree.count_by_size();
    Ok(BiomarkerSet {
        tav,
        airway_volume_ml: volume_ml(airway),
        lung_volume_ml: lung.map(volume_ml),
        total_length_mm: tree.total_length_mm,
        branch_count: tree.branch_count(),
        per_size_counts: SizeClass::ALL
            .iter()
            .map(|c| (*c, counts.get(c).copied().unwrap_or(0)))
            .collect(),
        firstorder,
        shape: shape_features(airway)?,
    })
}

pub fn biomarker_csv_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "case_id",
        "tav",
        "airway_volume_ml",
        "lung_volume_ml",
        "total_length_mm",
        "branch_count",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(SizeClass::ALL.iter().map(|c| format!("branches_{c}")));
    h.extend(FirstOrder::NAMES.iter().map(|n| format!("firstorder_{n}")));
    h.extend(
        [
            "shape_volume_ml",
            "shape_surface_area_mm2",
            "shape_elongation",
        ]
        .map(String::from),
    );
    h
}

pub fn biomarker_csv_row(case_id: &str, b: &BiomarkerSet) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut row = vec![
        case_id.to_string(),
        opt(b.tav),
        format!("{:.6}", b.airway_volume_ml),
        opt(b.lung_volume_ml),
        format!("{:.6}", b.total_length_mm),
        b.branch_count.to_string(),
    ];
    row.extend(
        SizeClass::ALL
            .iter()
            .map(|c| b.per_size_counts[c].to_string()),
    );
    match &b.firstorder {
        Some(f) => row.extend(f.values().iter().map(|v| format!("{v:.6}"))),
        None => row.extend(std::iter::repeat_n(String::new(), FirstOrder::NAMES.len())),
    }
    row.extend(
        [
            b.shape.volume_ml,
            b.shape.surface_area_mm2,
            b.shape.elongation,
        ]
        .iter()
        .map(|v| format!("{v:.6}")),
    );
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Grid};
    use approx::assert_abs_diff_eq;

    fn mask(
        dims: [usize; 3],
        spacing: [f64; 3],
        on: impl Fn(usize, usize, usize) -> bool,
    ) -> VoxelGrid {
        let g = Geometry::new(dims, spacing).unwrap();
        let mut m = VoxelGrid::empty(g);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    m.set(x, y, z, on(x, y, z));
                }
            }
        }
        m
    }

    #[test]
    fn heatmap_cases() {
        let gt = mask([4, 3, 5], [1.0; 3], |x, y, z| x == 1 && y < 2 && z > 0);
        assert!(residual_heatmap(&gt, &gt, Axis::Z)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0));
        let mut pred = gt.clone();
        pred.set(1, 1, 3, false);
        let h = residual_heatmap(&pred, &gt, Axis::Z).unwrap();
        assert_eq!((h.width, h.height), (4, 3));
        assert_eq!(h.get(1, 1), 1);
        assert_eq!(h.total(), 1);
        let back = residual_heatmap(&gt, &pred, Axis::Z).unwrap();
        assert!(h.values.iter().zip(&back.values).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn pgm_scaling() {
        let h = HeatmapGrid {
            width: 3,
            height: 1,
            axis: Axis::Z,
            values: vec![-2, 0, 2],
        };
        let mut buf = Vec::new();
        h.write_pgm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 1\n255\n");
        assert_eq!(&buf[11..], &[1, 128, 255]);
    }

    #[test]
    fn tav_ratio_and_scale() {
        let lung = mask([10, 10, 10], [1.0; 3], |_, _, _| true);
        let airway = mask([10, 10, 10], [1.0; 3], |x, y, _| x < 5 && y == 0);
        assert_abs_diff_eq!(compute_tav(&airway, &lung).unwrap(), 0.05, epsilon = 1e-15);
        assert_eq!(compute_tav(&lung, &lung).unwrap(), 1.0);
        let lung_h = mask([10, 10, 10], [0.5; 3], |_, _, _| true);
        let airway_h = mask([10, 10, 10], [0.5; 3], |x, y, _| x < 5 && y == 0);
        assert_abs_diff_eq!(
            compute_tav(&airway_h, &lung_h).unwrap(),
            0.05,
            epsilon = 1e-15
        );
        let empty = mask([10, 10, 10], [1.0; 3], |_, _, _| false);
        assert_eq!(
            compute_tav(&airway, &empty),
            Err(AnalysisError::EmptyLungMask)
        );
    }

    #[test]
    fn degenerate_distribution() {
        let f = first_order(&[-700.0; 10]).unwrap();
        assert_eq!(
            (f.std, f.skewness, f.kurtosis, f.entropy),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(f.median, -700.0);
    }

    #[test]
    fn single_voxel_shape() {
        let m = mask([3, 3, 3], [1.0; 3], |x, y, z| (x, y, z) == (1, 1, 1));
        let s = shape_features(&m).unwrap();
        assert_abs_diff_eq!(s.volume_ml, 0.001, epsilon = 1e-15);
        assert_eq!(s.surface_area_mm2, 6.0);
        assert_abs_diff_eq!(s.elongation, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn box_surface_area_with_spacing() {
        let sp = [0.5, 0.8, 1.5];
        let m = mask([8, 8, 8], sp, |x, y, z| {
            (1..4).contains(&x) && (2..7).contains(&y) && (1..3).contains(&z)
        });
        let (a, b, c) = (3.0, 5.0, 2.0);
        let expect = 2.0 * (a * b * sp[0] * sp[1] + b * c * sp[1] * sp[2] + a * c * sp[0] * sp[2]);
        assert_abs_diff_eq!(
            shape_features(&m).unwrap().surface_area_mm2,
            expect,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rod_is_elongated() {
        let m = mask([20, 5, 5], [1.0; 3], |_, y, z| y == 2 && z == 2);
        let s = shape_features(&m).unwrap();
        // variance along x: (20² − 1)/12 + 1/12, across: 1/12
        assert_abs_diff_eq!(s.elongation, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn radiomics_needs_alignment_and_roi() {
        let m = mask([3, 3, 3], [1.0; 3], |_, _, _| false);
        let v: IntensityVolume = Grid::filled(*m.geometry(), 0.0);
        assert_eq!(radiomics_lite(&v, &m).unwrap_err(), AnalysisError::EmptyRoi);
        let other = mask([3, 3, 4], [1.0; 3], |_, _, _| true);
        assert_eq!(
            radiomics_lite(&v, &other).unwrap_err(),
            AnalysisError::GeometryMismatch
        );
    }

    #[test]
    fn entropy_of_two_equal_bins() {
        let f = first_order(&[-1000.0, -1000.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(f.entropy, 1.0, epsilon = 1e-15);
        // values outside the range clip into the end bins
        let g = first_order(&[-3000.0, 5000.0]).unwrap();
        assert_abs_diff_eq!(g.entropy, 1.0, epsilon = 1e-15);
    }
}
