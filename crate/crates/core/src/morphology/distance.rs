use crate::volume::{Geometry, VoxelGrid};

/// Euclidean distance (mm) from each foreground voxel center to the nearest
/// background voxel center. Zero on background.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub geometry: Geometry,
    pub dist: Vec<f64>,
}

impl DistanceField {
    pub fn at(&self, idx: usize) -> f64 {
        self.dist[idx]
    }
}

/// Lower envelope of parabolas along one line, squared distances.
///
/// `line` holds f(i) for i in 0..n; positions -1 and n act as background
/// sites (f = 0) so the grid border behaves as if padded with background.
struct Envelope {
    sites: Vec<f64>,
    values: Vec<f64>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n + 2),
            values: Vec::with_capacity(n + 2),
            bounds: Vec::with_capacity(n + 3),
        }
    }

    fn transform(&mut self, line: &mut [f64], w2: f64) {
        let n = line.len();
        self.sites.clear();
        self.values.clear();
        self.bounds.clear();
        self.bounds.push(f64::NEG_INFINITY);

        let candidates = std::iter::once((-1.0, 0.0))
            .chain(line.iter().enumerate().map(|(i, &f)| (i as f64, f)))
            .chain(std::iter::once((n as f64, 0.0)));
        for (q, fq) in candidates {
            if !fq.is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.sites.last() else {
                    break;
                };
                let fv = *self.values.last().unwrap();
                let s = ((fq + w2 * q * q) - (fv + w2 * v * v)) / (2.0 * w2 * (q - v));
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.values.pop();
                    self.bounds.pop();
                } else {
                    self.bounds.push(s);
                    break;
                }
            }
            self.sites.push(q);
            self.values.push(fq);
        }
        self.bounds.push(f64::INFINITY);

        let mut k = 0;
        for (p, out) in line.iter_mut().enumerate() {
            let p = p as f64;
            while self.bounds[k + 1] < p {
                k += 1;
            }
            let d = p - self.sites[k];
            *out = w2 * d * d + self.values[k];
        }
    }
}

/// Exact anisotropic Euclidean distance transform (separable lower-envelope
/// method). Voxels outside the grid count as background.
pub fn distance_transform(grid: &VoxelGrid) -> DistanceField {
    let geom = *grid.geometry();
    let [nx, ny, _] = geom.dims;
    let mut sq: Vec<f64> = grid
        .data()
        .iter()
        .map(|&v| if v { f64::INFINITY } else { 0.0 })
        .collect();

    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = geom.dims[axis];
        let w2 = geom.spacing[axis] * geom.spacing[axis];
        let stride = strides[axis];
        let mut env = Envelope::with_capacity(n);
        let mut line = vec![0.0; n];
        // iterate over all lines parallel to `axis`
        let (oa, ob) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..geom.dims[ob] {
            for a in 0..geom.dims[oa] {
                let mut start = [0usize; 3];
                start[oa] = a;
                start[ob] = b;
                let base = geom.index(start[0], start[1], start[2]);
                for (k, v) in line.iter_mut().enumerate() {
                    *v = sq[base + k * stride];
                }
                env.transform(&mut line, w2);
                for (k, v) in line.iter().enumerate() {
                    sq[base + k * stride] = *v;
                }
            }
        }
    }

    let dist = sq
        .into_iter()
        .zip(grid.data())
        .map(|(d, &fg)| if fg { d.sqrt() } else { 0.0 })
        .collect();
    DistanceField {
        geometry: geom,
        dist,
    }
}
