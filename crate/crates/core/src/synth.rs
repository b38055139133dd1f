//! Seeded synthetic airway-like trees with known topology, and controlled
//! corruptions of them.
//!
//! A tree of depth `d` is a trunk that bifurcates `d` times; it has
//! `2^(d+1) - 1` branches and `2^d - 1` junctions. Tubes are rasterized in
//! voxel-index space: a voxel is foreground when its center lies within the
//! branch radius of the branch's centerline segment, which gives rounded
//! caps at every segment end.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::volume::{write_mask, Geometry, VolumeError, VoxelGrid};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("branch {branch} leaves the grid")]
    OutOfBounds { branch: usize },
    #[error("invalid tree spec: {0}")]
    InvalidSpec(String),
    #[error("no room for a leak blob of radius {0}")]
    NoRoom(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    pub seed: u64,
    pub depth: usize,
    /// Trunk length in voxels.
    pub trunk_length: f64,
    /// Child length as a fraction of its parent's.
    pub length_decay: f64,
    /// Each child's length is scaled by a uniform factor in `1 ± length_jitter`.
    pub length_jitter: f64,
    /// Trunk radius in voxels.
    pub trunk_radius: f64,
    pub radius_decay: f64,
    pub min_radius: f64,
    /// Angle between each child and its parent's direction.
    pub bifurcation_angle_deg: f64,
    /// Uniform jitter added to the bifurcation angle.
    pub angle_jitter_deg: f64,
    /// Turn only about coordinate axes, so with 45° bifurcations every
    /// branch runs along an axis or a face diagonal of the lattice.
    pub lattice_turns: bool,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            seed: 0,
            depth: 2,
            trunk_length: 30.0,
            length_decay: 0.75,
            length_jitter: 0.0,
            trunk_radius: 3.0,
            radius_decay: 0.75,
            min_radius: 1.0,
            bifurcation_angle_deg: 35.0,
            angle_jitter_deg: 5.0,
            lattice_turns: false,
            dims: [96, 96, 96],
            spacing: [1.0, 1.0, 1.0],
        }
    }
}

impl TreeSpec {
    pub fn expected_branches(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    pub fn expected_junctions(&self) -> usize {
        (1 << self.depth) - 1
    }
}

/// Ground-truth branch record; coordinates are voxel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBranch {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius_vox: f64,
    pub length_vox: f64,
    pub length_mm: f64,
}

impl SynthBranch {
    pub fn is_terminal(&self, all: &[SynthBranch]) -> bool {
        !all.iter().any(|b| b.parent == Some(self.id))
    }

    /// Squared distance from `p` to the centerline segment, plus the
    /// segment parameter of the closest point.
    fn segment_distance(&self, p: [f64; 3]) -> (f64, f64) {
        let d = sub(self.end, self.start);
        let len2 = dot(d, d);
        let t = if len2 == 0.0 {
            0.0
        } else {
            (dot(sub(p, self.start), d) / len2).clamp(0.0, 1.0)
        };
        let q = [
            self.start[0] + t * d[0],
            self.start[1] + t * d[1],
            self.start[2] + t * d[2],
        ];
        let r = sub(p, q);
        (dot(r, r), t)
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.segment_distance(p).0 <= self.radius_vox * self.radius_vox
    }

    fn bounding_box(&self, pad: f64, dims: [usize; 3]) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let lo = self.start[a].min(self.end[a]) - self.radius_vox - pad;
            let hi = self.start[a].max(self.end[a]) + self.radius_vox + pad;
            out[a] = (
                lo.floor().max(0.0) as usize,
                (hi.ceil().max(0.0) as usize).min(dims[a] - 1),
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SynthTree {
    pub spec: TreeSpec,
    pub mask: VoxelGrid,
    pub branches: Vec<SynthBranch>,
}

impl SynthTree {
    pub fn junction_count(&self) -> usize {
        self.branches
            .iter()
            .filter(|b| !b.is_terminal(&self.branches))
            .count()
    }

    pub fn total_length_mm(&self) -> f64 {
        self.branches.iter().map(|b| b.length_mm).sum()
    }

    fn covered_by_others(&self, skip: usize, p: [f64; 3]) -> bool {
        self.branches.iter().any(|b| b.id != skip && b.contains(p))
    }

    /// Writes `<name>.nii.gz` and `<name>_branches.csv` into `dir`.
    pub fn write_fixture(&self, dir: impl AsRef<Path>, name: &str) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_mask(&self.mask, dir.join(format!("{name}.nii.gz")))?;
        let mut w = csv::Writer::from_path(dir.join(format!("{name}_branches.csv")))?;
        w.write_record([
            "id",
            "parent",
            "depth",
            "start_x",
            "start_y",
            "start_z",
            "end_x",
            "end_y",
            "end_z",
            "radius_vox",
            "length_vox",
            "length_mm",
        ])?;
        for b in &self.branches {
            let mut row = vec![
                b.id.to_string(),
                b.parent.map(|p| p.to_string()).unwrap_or_default(),
                b.depth.to_string(),
            ];
            row.extend(b.start.iter().chain(&b.end).map(|v| format!("{v:.6}")));
            row.push(format!("{:.6}", b.radius_vox));
            row.push(format!("{:.6}", b.length_vox));
            row.push(format!("{:.6}", b.length_mm));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rodrigues rotation of `v` about unit `axis`.
fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kxv = cross(axis, v);
    let kdv = dot(axis, v);
    [
        v[0] * c + kxv[0] * s + axis[0] * kdv * (1.0 - c),
        v[1] * c + kxv[1] * s + axis[1] * kdv * (1.0 - c),
        v[2] * c + kxv[2] * s + axis[2] * kdv * (1.0 - c),
    ]
}

/// Some unit vector perpendicular to `d`.
fn perpendicular(d: [f64; 3]) -> [f64; 3] {
    let helper = if d[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    normalize(cross(d, helper))
}

/// Rasterizes the tree described by `spec`.
pub fn generate_tree(spec: &TreeSpec) -> Result<SynthTree, SynthError> {
    if spec.min_radius < 1.0 || spec.trunk_radius < spec.min_radius {
        return Err(SynthError::InvalidSpec(
            "radii must be at least 1 voxel".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.length_jitter) {
        return Err(SynthError::InvalidSpec(
            "length jitter must lie in [0, 1)".into(),
        ));
    }
    if !(spec.trunk_length > 0.0 && spec.length_decay > 0.0 && spec.radius_decay > 0.0) {
        return Err(SynthError::InvalidSpec(
            "lengths and decays must be positive".into(),
        ));
    }
    let geom = Geometry::new(spec.dims, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let margin = spec.trunk_radius + 2.0;
    let top = [
        (spec.dims[0] as f64 - 1.0) / 2.0,
        (spec.dims[1] as f64 - 1.0) / 2.0,
        spec.dims[2] as f64 - 1.0 - margin,
    ];
    let mut branches: Vec<SynthBranch> = Vec::new();
    // (parent id, start point, direction, length, radius, depth)
    let mut pending = vec![(
        None,
        top,
        [0.0, 0.0, -1.0],
        spec.trunk_length,
        spec.trunk_radius,
        0usize,
    )];
    while let Some((parent, start, dir, length, radius, depth)) = pending.pop() {
        let end = [
            start[0] + dir[0] * length,
            start[1] + dir[1] * length,
            start[2] + dir[2] * length,
        ];
        let id = branches.len();
        let length_mm = {
            let d = sub(end, start);
            (0..3)
                .map(|a| (d[a] * spec.spacing[a]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for p in [start, end] {
            for a in 0..3 {
                if p[a] - radius < 1.0 || p[a] + radius > spec.dims[a] as f64 - 2.0 {
                    return Err(SynthError::OutOfBounds { branch: id });
                }
            }
        }
        branches.push(SynthBranch {
            id,
            parent,
            depth,
            start,
            end,
            radius_vox: radius,
            length_vox: length,
            length_mm,
        });
        if depth < spec.depth {
            let axis = if spec.lattice_turns {
                let options: Vec<[f64; 3]> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
                    .into_iter()
                    .filter(|a| dot(*a, dir).abs() < 1e-9)
                    .collect();
                if options.is_empty() {
                    return Err(SynthError::InvalidSpec(
                        "lattice turns need axis or face-diagonal branch directions".into(),
                    ));
                }
                options[rng.random_range(0..options.len())]
            } else {
                let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
                rotate(perpendicular(dir), dir, azimuth)
            };
            let child_radius = (radius * spec.radius_decay).max(spec.min_radius);
            let mut children = Vec::with_capacity(2);
            for sign in [1.0, -1.0] {
                let jitter = if spec.angle_jitter_deg > 0.0 {
                    rng.random_range(-spec.angle_jitter_deg..=spec.angle_jitter_deg)
                } else {
                    0.0
                };
                let scale = if spec.length_jitter > 0.0 {
                    1.0 + rng.random_range(-spec.length_jitter..=spec.length_jitter)
                } else {
                    1.0
                };
                let child_length = length * spec.length_decay * scale;
                let angle = (spec.bifurcation_angle_deg + jitter).to_radians() * sign;
                let child_dir = normalize(rotate(dir, axis, angle));
                children.push((
                    Some(id),
                    end,
                    child_dir,
                    child_length,
                    child_radius,
                    depth + 1,
                ));
            }
            // pop order: first child first
            pending.extend(children.into_iter().rev());
        }
    }

    let mut mask = VoxelGrid::empty(geom);
    for b in &branches {
        let [(x0, x1), (y0, y1), (z0, z1)] = b.bounding_box(1.0, spec.dims);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if b.contains([x as f64, y as f64, z as f64]) {
                        mask.set(x, y, z, true);
                    }
                }
            }
        }
    }

    Ok(SynthTree {
        spec: spec.clone(),
        mask,
        branches,
    })
}

/// Spec of the standard fixture trees: 45° bifurcations about coordinate
/// axes, so every branch runs along an axis or a face diagonal.
pub fn fixture_spec(seed: u64, depth: usize) -> TreeSpec {
    TreeSpec {
        seed,
        depth,
        trunk_length: 56.0,
        length_decay: 0.85,
        length_jitter: 0.1,
        trunk_radius: 2.0,
        radius_decay: 0.75,
        min_radius: 1.0,
        bifurcation_angle_deg: 45.0,
        angle_jitter_deg: 0.0,
        lattice_turns: true,
        dims: [208, 208, 200],
        spacing: [1.0, 1.0, 1.0],
    }
}

/// The first `count` fixture trees, cycling depth through 0..=3 and
/// skipping seeds whose tree leaves the grid.
pub fn fixture_suite(count: usize) -> Vec<SynthTree> {
    let mut out = Vec::with_capacity(count);
    let mut seed = 0u64;
    while out.len() < count {
        let depth = (seed % 4) as usize;
        match generate_tree(&fixture_spec(seed, depth)) {
            Ok(t) => out.push(t),
            Err(SynthError::OutOfBounds { .. }) => {}
            Err(e) => panic!("fixture spec is invalid: {e}"),
        }
        seed += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptMode {
    /// Remove one terminal branch's tube, keeping voxels shared with other tubes.
    EraseBranch,
    /// Add a ball of the given radius (voxels) that does not touch the tree.
    AddLeakBlob { radius: f64 },
    /// Zero a slab of the given fraction of a branch's length around its midpoint.
    BreakSegment { fraction: f64 },
}

#[derive(Debug, Clone)]
pub struct Corruption {
    pub mask: VoxelGrid,
    /// Branch affected by erase/break.
    pub branch: Option<usize>,
    /// Voxels added (leak) or removed (erase/break).
    pub changed_voxels: usize,
}

/// Applies a seeded corruption to a generated tree.
pub fn corrupt(tree: &SynthTree, mode: CorruptMode, seed: u64) -> Result<Corruption, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = *tree.mask.geometry();
    let mut mask = tree.mask.clone();
    match mode {
        CorruptMode::EraseBranch => {
            let terminals: Vec<&SynthBranch> = tree
                .branches
                .iter()
                .filter(|b| b.is_terminal(&tree.branches))
                .collect();
            let target = terminals[rng.random_range(0..terminals.len())];
            let mut removed = 0;
            let [(x0, x1), (y0, y1), (z0, z1)] = target.bounding_box(1.0, geom.dims);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let p = [x as f64, y as f64, z as f64];
                        if mask.get(x, y, z)
                            && target.contains(p)
                            && !tree.covered_by_others(target.id, p)
                        {
                            mask.set(x, y, z, false);
                            removed += 1;
                        }
                    }
                }
            }
            Ok(Corruption {
                mask,
                branch: Some(target.id),
                changed_voxels: removed,
            })
        }
        CorruptMode::BreakSegment { fraction } => {
            let target = &tree.branches[rng.random_range(0..tree.branches.len())];
            let (lo, hi) = (0.5 - fraction / 2.0, 0.5 + fraction / 2.0);
            let mut removed = 0;
            let [(x0, x1), (y0, y1), (z0, z1)] = target.bounding_box(1.0, geom.dims);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let p = [x as f64, y as f64, z as f64];
                        let (d2, t) = target.segment_distance(p);
                        if mask.get(x, y, z)
                            && d2 <= target.radius_vox * target.radius_vox
                            && (lo..=hi).contains(&t)
                            && !tree.covered_by_others(target.id, p)
                        {
                            mask.set(x, y, z, false);
                            removed += 1;
                        }
                    }
                }
            }
            Ok(Corruption {
                mask,
                branch: Some(target.id),
                changed_voxels: removed,
            })
        }
        CorruptMode::AddLeakBlob { radius } => {
            let r = radius.max(0.0);
            let reach = r.ceil() as i64 + 2;
            for _ in 0..10_000 {
                let c = [
                    rng.random_range(0..geom.dims[0]) as i64,
                    rng.random_range(0..geom.dims[1]) as i64,
                    rng.random_range(0..geom.dims[2]) as i64,
                ];
                if (0..3).any(|a| c[a] - reach < 0 || c[a] + reach >= geom.dims[a] as i64) {
                    continue;
                }
                let mut ball = Vec::new();
                let mut clear = true;
                'scan: for dz in -reach..=reach {
                    for dy in -reach..=reach {
                        for dx in -reach..=reach {
                            let p = [
                                (c[0] + dx) as usize,
                                (c[1] + dy) as usize,
                                (c[2] + dz) as usize,
                            ];
                            let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                            // the ball plus a one-voxel shell must be background
                            if d2 <= (r + 1.75).powi(2) && mask.get(p[0], p[1], p[2]) {
                                clear = false;
                                break 'scan;
                            }
                            if d2 <= r * r {
                                ball.push(p);
                            }
                        }
                    }
                }
                if clear {
                    for p in &ball {
                        mask.set(p[0], p[1], p[2], true);
                    }
                    return Ok(Corruption {
                        mask,
                        branch: None,
                        changed_voxels: ball.len(),
                    });
                }
            }
            Err(SynthError::NoRoom(radius))
        }
    }
}
