//! Branch graph extracted from a thin skeleton.
//!
//! Skeleton voxels are classified by their number of 26-neighbors inside the
//! skeleton: 1 is an endpoint, 2 a path voxel, 3 or more a junction voxel.
//! Adjacent junction voxels merge into one junction node. A branch is the
//! maximal run of non-junction voxels between two nodes; endpoint voxels
//! belong to their branch, junction voxels to their node.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use thiserror::Error;

use crate::morphology::{distance_transform, DistanceField, NEIGHBOR_OFFSETS_26};
use crate::volume::{Geometry, VoxelGrid};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("skeleton has no foreground voxels")]
    EmptySkeleton,
    #[error("skeleton is not thin: voxel {0:?} is interior")]
    NotThin([usize; 3]),
    #[error("skeleton and mask geometries differ")]
    GeometryMismatch,
    #[error("skeleton voxel {0:?} lies outside the mask")]
    SkeletonOutsideMask([usize; 3]),
    #[error("negative radius {0}")]
    NegativeRadius(String),
}

/// Radius bands in mm: `[0,2)`, `[2,4)`, `[4,8)`, `[8,∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Terminal,
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [
        SizeClass::Terminal,
        SizeClass::Small,
        SizeClass::Medium,
        SizeClass::Large,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Terminal => "terminal",
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

impl std::fmt::Display for SizeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Boundary radii go to the larger class.
pub fn classify_size(radius_mm: f64) -> Result<SizeClass, TreeError> {
    if radius_mm.is_nan() || radius_mm < 0.0 {
        return Err(TreeError::NegativeRadius(radius_mm.to_string()));
    }
    Ok(if radius_mm < 2.0 {
        SizeClass::Terminal
    } else if radius_mm < 4.0 {
        SizeClass::Small
    } else if radius_mm < 8.0 {
        SizeClass::Medium
    } else {
        SizeClass::Large
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Endpoint,
    Junction,
    /// Single-voxel skeleton component.
    Isolated,
    /// Synthetic anchor for a closed curve without junctions.
    Loop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    /// Junction cluster voxels; for other kinds the single anchoring voxel.
    pub voxels: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    /// Ordered centerline voxels owned by this branch (junction voxels excluded).
    pub voxels: Vec<[usize; 3]>,
    /// Length attributed to each voxel; sums to `length_mm`.
    pub weights: Vec<f64>,
    pub length_mm: f64,
    pub radius_mm: f64,
    pub size_class: SizeClass,
    pub endpoints: [usize; 2],
    /// First and last points of the measured path, junction anchors included.
    pub path_ends: [[usize; 3]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirwayTree {
    pub geometry: Geometry,
    pub branches: Vec<Branch>,
    pub nodes: Vec<Node>,
    pub total_length_mm: f64,
}

impl AirwayTree {
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn junction_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Junction)
            .count()
    }

    pub fn count_by_size(&self) -> HashMap<SizeClass, usize> {
        let mut out = HashMap::new();
        for b in &self.branches {
            *out.entry(b.size_class).or_insert(0) += 1;
        }
        out
    }

    /// Branch table CSV: id, length, radius, class, path end coordinates.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "length_mm",
            "radius_mm",
            "size_class",
            "start_x",
            "start_y",
            "start_z",
            "end_x",
            "end_y",
            "end_z",
        ])?;
        for b in &self.branches {
            let [s, e] = b.path_ends;
            w.write_record([
                b.id.to_string(),
                format!("{:.6}", b.length_mm),
                format!("{:.6}", b.radius_mm),
                b.size_class.to_string(),
                s[0].to_string(),
                s[1].to_string(),
                s[2].to_string(),
                e[0].to_string(),
                e[1].to_string(),
                e[2].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    /// Endpoint-to-junction branches with fewer voxels than this are removed
    /// as thinning burrs before extraction. 0 or 1 disables pruning.
    pub prune_voxels: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { prune_voxels: 2 }
    }
}

struct Skeleton {
    geometry: Geometry,
    voxels: HashSet<usize>,
}

impl Skeleton {
    fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.geometry.coords(idx);
        NEIGHBOR_OFFSETS_26.iter().filter_map(move |o| {
            let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
            if !self.geometry.contains(p) {
                return None;
            }
            let j = self
                .geometry
                .index(p[0] as usize, p[1] as usize, p[2] as usize);
            self.voxels.contains(&j).then_some(j)
        })
    }

    fn degree(&self, idx: usize) -> usize {
        self.neighbors(idx).count()
    }

    /// Walks from an endpoint along degree-2 voxels; returns the run and
    /// whether it stopped at a junction voxel.
    fn run_from_endpoint(&self, start: usize, limit: usize) -> (Vec<usize>, bool) {
        let mut run = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        loop {
            let next: Vec<usize> = self.neighbors(cur).filter(|&n| n != prev).collect();
            if next.len() != 1 {
                return (run, false);
            }
            let n = next[0];
            match self.degree(n) {
                2 if run.len() < limit => {
                    run.push(n);
                    prev = cur;
                    cur = n;
                }
                d if d >= 3 => return (run, true),
                _ => return (run, false),
            }
        }
    }

    fn prune_burrs(&mut self, min_voxels: usize) {
        if min_voxels < 2 {
            return;
        }
        loop {
            let endpoints: Vec<usize> = self
                .voxels
                .iter()
                .copied()
                .filter(|&v| self.degree(v) == 1)
                .collect();
            let mut doomed = Vec::new();
            for e in endpoints {
                let (run, hit_junction) = self.run_from_endpoint(e, min_voxels);
                if hit_junction && run.len() < min_voxels {
                    doomed.extend(run);
                }
            }
            if doomed.is_empty() {
                return;
            }
            let before = self.voxels.len();
            for v in doomed {
                self.voxels.remove(&v);
            }
            if self.voxels.len() == before {
                return;
            }
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Builds the branch graph of a thin skeleton; branch radii come from the
/// distance transform of `mask`.
pub fn build_tree(
    skeleton: &VoxelGrid,
    mask: &VoxelGrid,
    options: TreeOptions,
) -> Result<AirwayTree, TreeError> {
    if !skeleton.is_aligned(mask) {
        return Err(TreeError::GeometryMismatch);
    }
    let edt = distance_transform(mask);
    build_tree_with_distance(skeleton, mask, &edt, options)
}

/// As [`build_tree`] with a precomputed distance field of the mask.
pub fn build_tree_with_distance(
    skeleton: &VoxelGrid,
    mask: &VoxelGrid,
    edt: &DistanceField,
    options: TreeOptions,
) -> Result<AirwayTree, TreeError> {
    if !skeleton.is_aligned(mask) || edt.geometry != *mask.geometry() {
        return Err(TreeError::GeometryMismatch);
    }
    let geom = *skeleton.geometry();
    let mut skel = Skeleton {
        geometry: geom,
        voxels: HashSet::new(),
    };
    for i in skeleton.foreground_indices() {
        if !mask.data()[i] {
            return Err(TreeError::SkeletonOutsideMask(geom.coords(i)));
        }
        skel.voxels.insert(i);
    }
    if skel.voxels.is_empty() {
        return Err(TreeError::EmptySkeleton);
    }
    for &i in &skel.voxels {
        let c = geom.coords(i);
        let interior = crate::morphology::FACE_OFFSETS.iter().all(|o| {
            let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
            geom.contains(p)
                && skel
                    .voxels
                    .contains(&geom.index(p[0] as usize, p[1] as usize, p[2] as usize))
        });
        if interior {
            return Err(TreeError::NotThin(c));
        }
    }

    skel.prune_burrs(options.prune_voxels);

    let mut order: Vec<usize> = skel.voxels.iter().copied().collect();
    order.sort_unstable();
    let degree: HashMap<usize, usize> = order.iter().map(|&v| (v, skel.degree(v))).collect();

    // junction clusters
    let mut node_of: HashMap<usize, usize> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    for &v in &order {
        if degree[&v] < 3 || node_of.contains_key(&v) {
            continue;
        }
        let id = nodes.len();
        let mut cluster = Vec::new();
        let mut queue = VecDeque::from([v]);
        node_of.insert(v, id);
        while let Some(u) = queue.pop_front() {
            cluster.push(u);
            for w in skel.neighbors(u) {
                if degree[&w] >= 3 && !node_of.contains_key(&w) {
                    node_of.insert(w, id);
                    queue.push_back(w);
                }
            }
        }
        cluster.sort_unstable();
        nodes.push(Node {
            id,
            kind: NodeKind::Junction,
            voxels: cluster.iter().map(|&u| geom.coords(u)).collect(),
        });
    }
    // degree-2 voxels wedged between two voxels of one junction cluster
    for &v in &order {
        if degree[&v] != 2 || node_of.contains_key(&v) {
            continue;
        }
        let owners: Vec<Option<usize>> = skel
            .neighbors(v)
            .map(|w| node_of.get(&w).copied())
            .collect();
        if let [Some(a), Some(b)] = owners[..] {
            if a == b {
                node_of.insert(v, a);
                nodes[a].voxels.push(geom.coords(v));
            }
        }
    }

    let is_junction = |v: usize| node_of.contains_key(&v);
    let mut owned: HashSet<usize> = HashSet::new();
    let mut raw_branches: Vec<(Vec<usize>, Option<usize>, Option<usize>, bool)> = Vec::new();
    let mut endpoint_node: HashMap<usize, usize> = HashMap::new();

    let mut endpoint_id = |v: usize, kind: NodeKind, nodes: &mut Vec<Node>| -> usize {
        *endpoint_node.entry(v).or_insert_with(|| {
            let id = nodes.len();
            nodes.push(Node {
                id,
                kind,
                voxels: vec![geom.coords(v)],
            });
            id
        })
    };

    // Walk a branch starting at `first` (a non-junction voxel) having come
    // from `prev` (a junction voxel, or usize::MAX at an endpoint).
    let walk =
        |first: usize, prev: usize, owned: &mut HashSet<usize>| -> (Vec<usize>, Option<usize>) {
            let mut path = vec![first];
            owned.insert(first);
            let mut prev = prev;
            let mut cur = first;
            loop {
                let mut next_free = None;
                let mut next_junction = None;
                for w in skel.neighbors(cur) {
                    if w == prev {
                        continue;
                    }
                    if is_junction(w) {
                        next_junction.get_or_insert(w);
                    } else if !owned.contains(&w) {
                        next_free = Some(w);
                    }
                }
                if let Some(w) = next_free {
                    path.push(w);
                    owned.insert(w);
                    prev = cur;
                    cur = w;
                    continue;
                }
                return (path, next_junction);
            }
        };

    // from junctions
    for &v in &order {
        if !is_junction(v) {
            continue;
        }
        for w in skel.neighbors(v).collect::<Vec<_>>() {
            if is_junction(w) || owned.contains(&w) {
                continue;
            }
            let (path, end) = walk(w, v, &mut owned);
            raw_branches.push((path, Some(v), end, false));
        }
    }
    // endpoint-to-endpoint components and isolated voxels
    for &v in &order {
        if owned.contains(&v) || is_junction(v) {
            continue;
        }
        match degree[&v] {
            0 => {
                owned.insert(v);
                raw_branches.push((vec![v], None, None, false));
            }
            1 => {
                let (path, end) = walk(v, usize::MAX, &mut owned);
                raw_branches.push((path, None, end, false));
            }
            _ => {}
        }
    }
    // closed curves without junctions
    for &v in &order {
        if owned.contains(&v) || is_junction(v) {
            continue;
        }
        let (path, _) = walk(v, usize::MAX, &mut owned);
        raw_branches.push((path, None, None, true));
    }

    let mut branches = Vec::with_capacity(raw_branches.len());
    for (path, start_anchor, end_anchor, closed) in raw_branches {
        let first = path[0];
        let last = *path.last().unwrap();
        let start_node = match start_anchor {
            Some(j) => node_of[&j],
            None if closed => endpoint_id(first, NodeKind::Loop, &mut nodes),
            None if path.len() == 1 && end_anchor.is_none() && degree[&first] == 0 => {
                endpoint_id(first, NodeKind::Isolated, &mut nodes)
            }
            None => endpoint_id(first, NodeKind::Endpoint, &mut nodes),
        };
        let end_node = match end_anchor {
            Some(j) => node_of[&j],
            None if closed => start_node,
            None if path.len() == 1 && degree[&first] == 0 => start_node,
            None => endpoint_id(last, NodeKind::Endpoint, &mut nodes),
        };

        // measured polyline
        let mut points: Vec<[usize; 3]> = Vec::with_capacity(path.len() + 2);
        if let Some(j) = start_anchor {
            points.push(geom.coords(j));
        }
        points.extend(path.iter().map(|&v| geom.coords(v)));
        if let Some(j) = end_anchor {
            points.push(geom.coords(j));
        }
        if closed && path.len() > 2 {
            points.push(geom.coords(first));
        }
        let offset = usize::from(start_anchor.is_some());
        let mut weights = vec![0.0; path.len()];
        let mut length = 0.0;
        for s in 0..points.len().saturating_sub(1) {
            let d = geom.distance_mm(points[s], points[s + 1]);
            length += d;
            // segment s joins points s and s+1; map to path slots
            let a = s.checked_sub(offset).filter(|&k| k < path.len());
            let b = (s + 1).checked_sub(offset).filter(|&k| k < path.len());
            let b = if closed && s + 1 == points.len() - 1 && path.len() > 2 {
                Some(0)
            } else {
                b
            };
            match (a, b) {
                (Some(a), Some(b)) => {
                    weights[a] += 0.5 * d;
                    weights[b] += 0.5 * d;
                }
                (Some(a), None) => weights[a] += d,
                (None, Some(b)) => weights[b] += d,
                (None, None) => {}
            }
        }

        let mut radii: Vec<f64> = path.iter().map(|&v| edt.at(v)).collect();
        let radius_mm = median(&mut radii);
        branches.push(Branch {
            id: branches.len(),
            voxels: path.iter().map(|&v| geom.coords(v)).collect(),
            weights,
            length_mm: length,
            radius_mm,
            size_class: classify_size(radius_mm)?,
            endpoints: [start_node, end_node],
            path_ends: [points[0], *points.last().unwrap()],
        });
    }

    let total_length_mm = branches.iter().map(|b| b.length_mm).sum();
    Ok(AirwayTree {
        geometry: geom,
        branches,
        nodes,
        total_length_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_grid(len: usize) -> VoxelGrid {
        let g = Geometry::isotropic([len + 4, 5, 5]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for x in 2..2 + len {
            m.set(x, 2, 2, true);
        }
        m
    }

    fn draw(m: &mut VoxelGrid, pts: &[[usize; 3]]) {
        for p in pts {
            m.set(p[0], p[1], p[2], true);
        }
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify_size(1.5).unwrap(), SizeClass::Terminal);
        assert_eq!(classify_size(0.0).unwrap(), SizeClass::Terminal);
        assert_eq!(classify_size(2.0).unwrap(), SizeClass::Small);
        assert_eq!(classify_size(3.0).unwrap(), SizeClass::Small);
        assert_eq!(classify_size(4.0).unwrap(), SizeClass::Medium);
        assert_eq!(classify_size(8.0).unwrap(), SizeClass::Large);
        assert_eq!(classify_size(9.3).unwrap(), SizeClass::Large);
        assert!(matches!(
            classify_size(-0.1),
            Err(TreeError::NegativeRadius(_))
        ));
    }

    #[test]
    fn straight_line_is_one_branch() {
        let m = line_grid(20);
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert_eq!(t.branch_count(), 1);
        assert_eq!(t.branches[0].length_mm, 19.0);
        assert_eq!(t.total_length_mm, 19.0);
        assert_eq!(t.branches[0].voxels.len(), 20);
        let endpoints = t
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Endpoint)
            .count();
        assert_eq!(endpoints, 2);
        let w: f64 = t.branches[0].weights.iter().sum();
        assert!((w - 19.0).abs() < 1e-12);
    }

    #[test]
    fn t_junction_gives_three_branches() {
        let g = Geometry::isotropic([21, 21, 3]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for x in 0..21 {
            m.set(x, 10, 1, true);
        }
        for y in 11..21 {
            m.set(10, y, 1, true);
        }
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert_eq!(t.branch_count(), 3);
        assert_eq!(t.junction_count(), 1);
        let owned: usize = t.branches.iter().map(|b| b.voxels.len()).sum::<usize>()
            + t.nodes
                .iter()
                .filter(|n| n.kind == NodeKind::Junction)
                .map(|n| n.voxels.len())
                .sum::<usize>();
        assert_eq!(owned, m.count());
        let mut lengths: Vec<f64> = t.branches.iter().map(|b| b.length_mm).collect();
        lengths.sort_by(f64::total_cmp);
        // the four voxels around the crossing form one junction node
        assert_eq!(lengths, vec![9.0, 9.0, 9.0]);
    }

    fn diagonal_y() -> VoxelGrid {
        let g = Geometry::isotropic([21, 21, 3]).unwrap();
        let mut m = VoxelGrid::empty(g);
        m.set(10, 10, 1, true);
        for k in 1..9 {
            draw(
                &mut m,
                &[[10 - k, 10, 1], [10 + k, 10 + k, 1], [10 + k, 10 - k, 1]],
            );
        }
        m
    }

    #[test]
    fn diagonal_y_has_three_equal_arms() {
        let m = diagonal_y();
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert_eq!(t.branch_count(), 3);
        assert_eq!(t.junction_count(), 1);
        assert_eq!(
            t.nodes
                .iter()
                .find(|n| n.kind == NodeKind::Junction)
                .unwrap()
                .voxels,
            vec![[10, 10, 1]]
        );
    }

    #[test]
    fn one_voxel_burr_is_pruned() {
        let mut m = diagonal_y();
        // spur hanging off the first voxel of the upper arm
        m.set(10, 12, 1, true);
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert_eq!(t.branch_count(), 3);
        let t = build_tree(&m, &m, TreeOptions { prune_voxels: 0 }).unwrap();
        assert_eq!(t.branch_count(), 4);
    }

    #[test]
    fn closed_ring_is_a_loop_branch() {
        // octagon: straight runs joined diagonally so every voxel has two neighbors
        let g = Geometry::isotropic([8, 8, 3]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for i in 2..6 {
            draw(&mut m, &[[i, 1, 1], [i, 6, 1], [1, i, 1], [6, i, 1]]);
        }
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert_eq!(t.branch_count(), 1);
        let b = &t.branches[0];
        assert_eq!(b.endpoints[0], b.endpoints[1]);
        assert_eq!(b.voxels.len(), m.count());
        let expected = 12.0 + 4.0 * 2f64.sqrt();
        assert!((b.length_mm - expected).abs() < 1e-12);
        let w: f64 = b.weights.iter().sum();
        assert!((w - expected).abs() < 1e-12);
    }

    #[test]
    fn isolated_voxel_is_a_zero_length_branch() {
        let g = Geometry::isotropic([3, 3, 3]).unwrap();
        let mut m = VoxelGrid::empty(g);
        m.set(1, 1, 1, true);
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert_eq!(t.branch_count(), 1);
        assert_eq!(t.branches[0].length_mm, 0.0);
        assert_eq!(t.branches[0].radius_mm, 1.0);
    }

    #[test]
    fn errors() {
        let m = line_grid(5);
        let empty = VoxelGrid::empty(*m.geometry());
        assert_eq!(
            build_tree(&empty, &m, TreeOptions::default()),
            Err(TreeError::EmptySkeleton)
        );
        assert!(matches!(
            build_tree(&m, &empty, TreeOptions::default()),
            Err(TreeError::SkeletonOutsideMask(_))
        ));
        let other = VoxelGrid::empty(Geometry::isotropic([3, 3, 3]).unwrap());
        assert_eq!(
            build_tree(&m, &other, TreeOptions::default()),
            Err(TreeError::GeometryMismatch)
        );
        let solid = VoxelGrid::filled(Geometry::isotropic([3, 3, 3]).unwrap(), true);
        assert!(matches!(
            build_tree(&solid, &solid, TreeOptions::default()),
            Err(TreeError::NotThin(_))
        ));
    }

    #[test]
    fn anisotropic_length() {
        let g = Geometry::new([3, 3, 6], [0.7, 0.7, 1.25]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for z in 0..5 {
            m.set(1, 1, z, true);
        }
        let t = build_tree(&m, &m, TreeOptions::default()).unwrap();
        assert!((t.total_length_mm - 5.0).abs() < 1e-12);
    }
}
