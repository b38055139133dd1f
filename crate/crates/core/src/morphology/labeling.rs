use crate::volume::{Geometry, Grid, VoxelGrid};

use super::{Connectivity, MorphologyError};

/// Component labels, 0 for background and `1..=K` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub geometry: Geometry,
    pub labels: Vec<u32>,
    pub count: u32,
}

impl LabelGrid {
    /// Voxel count per label; index 0 is background.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count as usize + 1];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn mask_of(&self, label: u32) -> VoxelGrid {
        let data = self.labels.iter().map(|&l| l == label && l != 0).collect();
        Grid::from_vec(self.geometry, data).expect("label grid length matches geometry")
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 unused so provisional labels start at 1
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        // keep the smaller (earlier) provisional id as root
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop as usize] = keep;
        keep
    }
}

/// Two-pass union-find labeling. Final labels follow first-encounter scan
/// order.
pub fn connected_components(grid: &VoxelGrid, connectivity: Connectivity) -> LabelGrid {
    let geom = *grid.geometry();
    let [nx, ny, nz] = geom.dims;
    let data = grid.data();
    // neighbors already visited in scan order
    let back: Vec<[i64; 3]> = connectivity
        .offsets()
        .iter()
        .copied()
        .filter(|o| (o[2], o[1], o[0]) < (0, 0, 0))
        .collect();

    let mut provisional = vec![0u32; data.len()];
    let mut sets = DisjointSet::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = geom.index(x, y, z);
                if !data[i] {
                    continue;
                }
                let mut label = 0u32;
                for o in &back {
                    let (qx, qy, qz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 {
                        continue;
                    }
                    let j = geom.index(qx as usize, qy as usize, qz as usize);
                    let lj = provisional[j];
                    if lj == 0 {
                        continue;
                    }
                    label = if label == 0 {
                        lj
                    } else {
                        sets.union(label, lj)
                    };
                }
                provisional[i] = if label == 0 { sets.make() } else { label };
            }
        }
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    let labels = provisional
        .iter()
        .map(|&p| {
            if p == 0 {
                return 0;
            }
            let r = sets.find(p) as usize;
            if final_of_root[r] == 0 {
                count += 1;
                final_of_root[r] = count;
            }
            final_of_root[r]
        })
        .collect();

    LabelGrid {
        geometry: geom,
        labels,
        count,
    }
}

pub fn component_count(grid: &VoxelGrid, connectivity: Connectivity) -> u32 {
    connected_components(grid, connectivity).count
}

/// Keeps the component with the most voxels; ties go to the lowest label.
pub fn largest_component(
    grid: &VoxelGrid,
    connectivity: Connectivity,
) -> Result<VoxelGrid, MorphologyError> {
    let labeled = connected_components(grid, connectivity);
    if labeled.count == 0 {
        return Err(MorphologyError::EmptyMask);
    }
    let sizes = labeled.sizes();
    let mut best = 1u32;
    for l in 2..=labeled.count {
        if sizes[l as usize] > sizes[best as usize] {
            best = l;
        }
    }
    let data = labeled.labels.iter().map(|&l| l == best).collect();
    Ok(grid.with_data(data))
}
