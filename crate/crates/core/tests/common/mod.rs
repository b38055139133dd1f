#![allow(dead_code)]

use airway_core::morphology::Connectivity;
use airway_core::volume::{Geometry, Grid, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random mask of up to 12³ voxels with random anisotropic spacing.
pub fn random_grid(seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        rng.random_range(1..=12),
        rng.random_range(1..=12),
        rng.random_range(1..=12),
    ];
    let spacing = [
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..2.0),
        rng.random_range(0.5..2.5),
    ];
    let density = rng.random_range(0.05..0.95);
    let geom = Geometry::new(dims, spacing).unwrap();
    let data = (0..geom.len()).map(|_| rng.random_bool(density)).collect();
    Grid::from_vec(geom, data).unwrap()
}

/// Second mask on the same geometry as `a`.
pub fn random_like(a: &VoxelGrid, seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = rng.random_range(0.05..0.95);
    let data = (0..a.data().len())
        .map(|_| rng.random_bool(density))
        .collect();
    Grid::from_vec(*a.geometry(), data).unwrap()
}

/// (tp, fp, fn) by visiting every voxel.
pub fn exhaustive_counts(pred: &VoxelGrid, gt: &VoxelGrid) -> (u64, u64, u64) {
    let [nx, ny, nz] = gt.dims();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                match (pred.get(x, y, z), gt.get(x, y, z)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
    }
    (tp, fp, fn_)
}

/// Component id per voxel by stack flood fill; background is `None`.
pub fn flood_fill(grid: &VoxelGrid, conn: Connectivity) -> (Vec<Option<usize>>, usize) {
    let g = *grid.geometry();
    let mut comp = vec![None; g.len()];
    let mut count = 0;
    for start in 0..g.len() {
        if !grid.data()[start] || comp[start].is_some() {
            continue;
        }
        comp[start] = Some(count);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let c = g.coords(i);
            for o in conn.offsets() {
                let p = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
                if g.contains(p) {
                    let j = g.index(p[0] as usize, p[1] as usize, p[2] as usize);
                    if grid.data()[j] && comp[j].is_none() {
                        comp[j] = Some(count);
                        stack.push(j);
                    }
                }
            }
        }
        count += 1;
    }
    (comp, count)
}

/// Distance to the nearest background voxel center, with everything
/// outside the grid counting as background.
pub fn brute_edt(grid: &VoxelGrid) -> Vec<f64> {
    let g = *grid.geometry();
    let s = g.spacing;
    let bg: Vec<[usize; 3]> = (0..g.len())
        .filter(|&i| !grid.data()[i])
        .map(|i| g.coords(i))
        .collect();
    (0..g.len())
        .map(|i| {
            if !grid.data()[i] {
                return 0.0;
            }
            let c = g.coords(i);
            let mut best = f64::INFINITY;
            for a in 0..3 {
                best = best
                    .min((c[a] + 1) as f64 * s[a])
                    .min((g.dims[a] - c[a]) as f64 * s[a]);
            }
            for b in &bg {
                let d2: f64 = (0..3)
                    .map(|a| ((c[a] as f64 - b[a] as f64) * s[a]).powi(2))
                    .sum();
                best = best.min(d2.sqrt());
            }
            best
        })
        .collect()
}

/// AUC as the fraction of concordant positive/negative pairs, ties one half.
pub fn pairwise_auc(probs: &[f64], labels: &[u8]) -> f64 {
    let mut hit = 0.0;
    let mut pairs = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &q) in probs.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if p > q {
                hit += 1.0;
            } else if p == q {
                hit += 0.5;
            }
        }
    }
    hit / pairs
}

/// Breslow log partial likelihood written directly from the risk-set definition.
pub fn naive_cox_ll(times: &[f64], events: &[bool], x: &[f64], beta: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let denom: f64 = (0..times.len())
            .filter(|&j| times[j] >= times[i])
            .map(|j| (beta * x[j]).exp())
            .sum();
        ll += beta * x[i] - denom.ln();
    }
    ll
}

pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

/// Maximizer of the naive likelihood on a 0.01 grid over [-10, 10],
/// refined on a 1e-5 grid around the coarse winner.
pub fn grid_search_beta(times: &[f64], events: &[bool], x: &[f64]) -> f64 {
    let grid = |lo: f64, step: f64, n: usize| {
        (0..=n)
            .map(|k| lo + k as f64 * step)
            .map(|b| (naive_cox_ll(times, events, x, b), b))
            .fold((f64::MIN, 0.0), |m, v| if v.0 > m.0 { v } else { m })
    };
    let coarse = grid(-10.0, 0.01, 2000);
    grid(coarse.1 - 0.01, 1e-5, 2000).1
}

pub fn cox_records(
    times: &[f64],
    events: &[bool],
    x: &[f64],
) -> Vec<airway_core::survival::SurvivalRecord> {
    times
        .iter()
        .zip(events)
        .zip(x)
        .enumerate()
        .map(|(i, ((&t, &e), &v))| {
            airway_core::survival::SurvivalRecord::new(format!("p{i}"), t, e).with("x", v)
        })
        .collect()
}

/// Signed-rank statistic and two-sided p by visiting all 2ⁿ sign patterns.
/// `None` when every difference is zero.
pub fn enumerated_wilcoxon(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| *v != 0.0)
        .collect();
    if d.is_empty() {
        return None;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let less = d.iter().filter(|w| w.abs() < v.abs()).count() as f64;
            let eq = d.iter().filter(|w| w.abs() == v.abs()).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect();
    let w: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let n = d.len();
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if (s - mean).abs() >= (w - mean).abs() - 1e-9 {
            hits += 1;
        }
    }
    Some((w, hits as f64 / (1u64 << n) as f64))
}
