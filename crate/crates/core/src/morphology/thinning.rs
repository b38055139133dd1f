//! Directional parallel thinning on the voxel lattice.
//!
//! Each pass sweeps the six face directions. In a sweep, border voxels open
//! toward that direction are collected if they are simple and not curve
//! endpoints, then deleted one at a time, subfield by subfield (eight parity
//! classes), with both tests repeated against the current image. Passes
//! repeat until nothing changes.
//!
//! Simple points use (26, 6) adjacency: the foreground neighbors of p form a
//! single 26-component, and the background voxels of the 18-neighborhood
//! that touch p through a face form a single 6-component.

use std::sync::OnceLock;

use crate::volume::VoxelGrid;

use super::{MorphologyError, FACE_OFFSETS};

const CENTER: usize = 13;

#[inline]
fn cube_index(dx: i64, dy: i64, dz: i64) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

struct Tables {
    /// For each cube position, 26-adjacent positions inside the cube, center excluded.
    adj26: [u32; 27],
    /// For each N18 position, 6-adjacent positions inside N18.
    adj6_n18: [u32; 27],
    n26: u32,
    n18: u32,
    faces: u32,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = Tables {
            adj26: [0; 27],
            adj6_n18: [0; 27],
            n26: 0,
            n18: 0,
            faces: 0,
        };
        let pos = |i: usize| {
            [
                (i % 3) as i64 - 1,
                ((i / 3) % 3) as i64 - 1,
                (i / 9) as i64 - 1,
            ]
        };
        let nonzero = |p: [i64; 3]| p.iter().filter(|&&c| c != 0).count();
        for i in 0..27 {
            let p = pos(i);
            match nonzero(p) {
                0 => {}
                1 => {
                    t.faces |= 1 << i;
                    t.n18 |= 1 << i;
                    t.n26 |= 1 << i;
                }
                2 => {
                    t.n18 |= 1 << i;
                    t.n26 |= 1 << i;
                }
                _ => t.n26 |= 1 << i,
            }
        }
        for i in 0..27 {
            if i == CENTER {
                continue;
            }
            let p = pos(i);
            for j in 0..27 {
                if j == i || j == CENTER {
                    continue;
                }
                let q = pos(j);
                let d: Vec<i64> = (0..3).map(|a| (p[a] - q[a]).abs()).collect();
                if d.iter().all(|&c| c <= 1) {
                    t.adj26[i] |= 1 << j;
                    let manhattan: i64 = d.iter().sum();
                    if manhattan == 1 && (t.n18 >> i) & 1 == 1 && (t.n18 >> j) & 1 == 1 {
                        t.adj6_n18[i] |= 1 << j;
                    }
                }
            }
        }
        t
    })
}

/// Grows the component containing `seed` within `allowed`.
#[inline]
fn flood(seed: u32, allowed: u32, adj: &[u32; 27]) -> u32 {
    let mut comp = seed;
    let mut frontier = seed;
    while frontier != 0 {
        let mut next = 0u32;
        let mut f = frontier;
        while f != 0 {
            let i = f.trailing_zeros() as usize;
            f &= f - 1;
            next |= adj[i];
        }
        next &= allowed & !comp;
        comp |= next;
        frontier = next;
    }
    comp
}

/// `cube` is the 3×3×3 neighborhood bitmask (bit 13 is the voxel itself).
pub(crate) fn is_simple(cube: u32) -> bool {
    let t = tables();
    let fg = cube & t.n26;
    if fg == 0 {
        return false;
    }
    let seed = 1u32 << fg.trailing_zeros();
    if flood(seed, fg, &t.adj26) != fg {
        return false;
    }
    let bg = !cube & t.n18;
    let bg_faces = bg & t.faces;
    if bg_faces == 0 {
        return false;
    }
    let seed = 1u32 << bg_faces.trailing_zeros();
    let comp = flood(seed, bg, &t.adj6_n18);
    comp & bg_faces == bg_faces
}

struct Padded {
    dims: [usize; 3],
    data: Vec<u8>,
    offsets: [isize; 27],
}

impl Padded {
    fn new(grid: &VoxelGrid) -> Self {
        let [nx, ny, nz] = grid.dims();
        let dims = [nx + 2, ny + 2, nz + 2];
        let mut data = vec![0u8; dims[0] * dims[1] * dims[2]];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if grid.get(x, y, z) {
                        data[(x + 1) + dims[0] * ((y + 1) + dims[1] * (z + 1))] = 1;
                    }
                }
            }
        }
        let mut offsets = [0isize; 27];
        for (i, o) in offsets.iter_mut().enumerate() {
            let dx = (i % 3) as isize - 1;
            let dy = ((i / 3) % 3) as isize - 1;
            let dz = (i / 9) as isize - 1;
            *o = dx + dims[0] as isize * (dy + dims[1] as isize * dz);
        }
        Padded {
            dims,
            data,
            offsets,
        }
    }

    #[inline]
    fn cube(&self, idx: usize) -> u32 {
        let mut m = 0u32;
        for (k, &o) in self.offsets.iter().enumerate() {
            if self.data[(idx as isize + o) as usize] != 0 {
                m |= 1 << k;
            }
        }
        m
    }

    /// Subfield of `idx`: voxels sharing a parity class are never 26-adjacent.
    #[inline]
    fn parity(&self, idx: usize) -> usize {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        (x & 1) | (y & 1) << 1 | (z & 1) << 2
    }

    fn foreground(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0).then_some(i))
            .collect()
    }

    fn unpad(&self, like: &VoxelGrid) -> VoxelGrid {
        let [nx, ny, nz] = like.dims();
        let mut out = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(
                        self.data[(x + 1) + self.dims[0] * ((y + 1) + self.dims[1] * (z + 1))] != 0,
                    );
                }
            }
        }
        like.with_data(out)
    }
}

#[inline]
fn is_curve_end(cube: u32) -> bool {
    (cube & tables().n26).count_ones() <= 1
}

#[inline]
fn deletable(cube: u32) -> bool {
    !is_curve_end(cube) && is_simple(cube)
}

/// Thins a mask to a one-voxel-wide curve skeleton that keeps the number of
/// 26-connected components (and tunnels/cavities) of the input.
pub fn skeletonize(grid: &VoxelGrid) -> Result<VoxelGrid, MorphologyError> {
    if grid.is_all_background() {
        return Err(MorphologyError::EmptyMask);
    }
    let mut img = Padded::new(grid);
    let mut live = img.foreground();
    let face_bits: Vec<usize> = FACE_OFFSETS
        .iter()
        .map(|o| cube_index(o[0], o[1], o[2]))
        .collect();

    let mut candidates = Vec::new();
    loop {
        let mut removed_any = false;
        for &face in &face_bits {
            candidates.clear();
            candidates.extend(live.iter().copied().filter(|&idx| {
                let cube = img.cube(idx);
                (cube >> face) & 1 == 0 && deletable(cube)
            }));
            candidates.sort_by_key(|&idx| (img.parity(idx), idx));
            for &idx in &candidates {
                if deletable(img.cube(idx)) {
                    img.data[idx] = 0;
                    removed_any = true;
                }
            }
            if !candidates.is_empty() {
                live.retain(|&idx| img.data[idx] != 0);
            }
        }
        if !removed_any {
            break;
        }
    }
    Ok(img.unpad(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn cube_from(points: &[[i64; 3]]) -> u32 {
        let mut m = 1 << CENTER;
        for p in points {
            m |= 1 << cube_index(p[0], p[1], p[2]);
        }
        m
    }

    #[test]
    fn simple_point_cases() {
        // isolated voxel: not simple
        assert!(!is_simple(cube_from(&[])));
        // end of a line: simple
        assert!(is_simple(cube_from(&[[1, 0, 0]])));
        // middle of a line: removal splits, not simple
        assert!(!is_simple(cube_from(&[[1, 0, 0], [-1, 0, 0]])));
        // interior of a full cube: removal creates a cavity
        let all: Vec<[i64; 3]> = (0..27)
            .filter(|&i| i != CENTER)
            .map(|i| {
                [
                    (i % 3) as i64 - 1,
                    ((i / 3) % 3) as i64 - 1,
                    (i / 9) as i64 - 1,
                ]
            })
            .collect();
        assert!(!is_simple(cube_from(&all)));
        // corner of an L bend where both arms stay connected through each other
        assert!(is_simple(cube_from(&[[1, 0, 0], [1, 1, 0]])));
    }

    #[test]
    fn straight_line_is_unchanged() {
        let g = Geometry::isotropic([24, 5, 5]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for x in 2..22 {
            m.set(x, 2, 2, true);
        }
        assert_eq!(skeletonize(&m).unwrap(), m);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = Geometry::isotropic([4, 4, 4]).unwrap();
        assert_eq!(
            skeletonize(&VoxelGrid::empty(g)),
            Err(MorphologyError::EmptyMask)
        );
    }

    #[test]
    fn solid_block_collapses_to_a_single_component() {
        let g = Geometry::isotropic([9, 9, 9]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for z in 2..7 {
            for y in 2..7 {
                for x in 2..7 {
                    m.set(x, y, z, true);
                }
            }
        }
        let s = skeletonize(&m).unwrap();
        assert!(s.count() >= 1 && s.count() < 10);
        assert!(s.is_subset_of(&m));
        assert_eq!(
            super::super::component_count(&s, super::super::Connectivity::TwentySix),
            1
        );
    }

    #[test]
    fn hollow_box_keeps_its_cavity() {
        let g = Geometry::isotropic([7, 7, 7]).unwrap();
        let mut m = VoxelGrid::empty(g);
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    let inner = (2..5).contains(&x) && (2..5).contains(&y) && (2..5).contains(&z);
                    m.set(x, y, z, !inner);
                }
            }
        }
        let s = skeletonize(&m).unwrap();
        // the cavity is bounded, so a closed shell must survive
        let bg = VoxelGrid::from_vec(*g_ref(&s), s.data().iter().map(|v| !v).collect()).unwrap();
        assert_eq!(
            super::super::component_count(&bg, super::super::Connectivity::Six),
            2
        );
    }

    fn g_ref(g: &VoxelGrid) -> &Geometry {
        g.geometry()
    }
}
