//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

mod common;

use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use airway_core::cls_metrics::{auc, roc_curve, trapezoid_area, PredictionSet};
use airway_core::morphology::{
    component_count, connected_components, distance_transform, skeletonize, Connectivity,
};
use airway_core::perturb::{PerturbKind, PerturbSpec};
use airway_core::ranking::{rank_teams, TeamResult};
use airway_core::seg_metrics::{case_metrics, ovacc, overlap_metrics, CaseMetrics};
use airway_core::survival::{
    cox_fit, cox_log_likelihood, wilcoxon_signed_rank, CoxOptions, SurvivalRecord, Ties,
    WilcoxonMode,
};
use airway_core::synth::{
    corrupt, fixture_suite, generate_tree, CorruptMode, SynthBranch, SynthTree, TreeSpec,
};
use airway_core::tree::{build_tree, TreeOptions};
use airway_core::volume::{
    read_mask, read_volume, write_mask, write_volume, Axis, Grid, IntensityVolume,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Team, IoU, DLR, DBR, precision, ALR, AMR, OvAcc, seconds per scan.
const TABLE: [(&str, [f64; 8]); 10] = [
    (
        "MedibotTeam",
        [
            0.9049, 0.9365, 0.9051, 0.9276, 0.0786, 0.0259, 0.9185, 43.79,
        ],
    ),
    (
        "IMR",
        [
            0.8770, 0.9510, 0.9312, 0.9014, 0.1089, 0.0299, 0.9152, 62.98,
        ],
    ),
    (
        "Infervision",
        [
            0.9016, 0.9201, 0.8825, 0.9399, 0.0639, 0.0425, 0.9110, 87.93,
        ],
    ),
    (
        "Sanmed_AI",
        [
            0.8903, 0.8838, 0.8354, 0.9203, 0.0854, 0.0404, 0.8825, 92.78,
        ],
    ),
    (
        "Gexing",
        [
            0.9087, 0.8603, 0.7765, 0.9518, 0.0499, 0.0466, 0.8743, 356.04,
        ],
    ),
    (
        "DJ_92",
        [
            0.8967, 0.8466, 0.7504, 0.9619, 0.0397, 0.0686, 0.8639, 223.66,
        ],
    ),
    (
        "Riipl",
        [
            0.9003, 0.8560, 0.7672, 0.9584, 0.0423, 0.0620, 0.8705, 531.52,
        ],
    ),
    (
        "earthlis1flatten",
        [
            0.8221, 0.6986, 0.6043, 0.9325, 0.0906, 0.1538, 0.7644, 155.36,
        ],
    ),
    (
        "dolphins",
        [
            0.8838, 0.8556, 0.7627, 0.9365, 0.0682, 0.0580, 0.8597, 1500.12,
        ],
    ),
    (
        "Junqiangmler",
        [
            0.7488, 0.7853, 0.6853, 0.8200, 0.2188, 0.1313, 0.7599, 316.89,
        ],
    ),
];

const FIXTURES: usize = 30;

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn composite_matches_table() -> Outcome {
    let mut worst: f64 = 0.0;
    for (team, r) in TABLE {
        let got = ovacc(r[0], r[3], r[2], r[1]);
        let err = (got - r[6]).abs();
        ensure!(err <= 5e-4, "{team}: {got:.6} vs {}", r[6]);
        worst = worst.max(err);
    }
    let medibot = ovacc(TABLE[0].1[0], TABLE[0].1[3], TABLE[0].1[2], TABLE[0].1[1]);
    ensure!(
        (medibot - 0.918525).abs() < 1e-12,
        "MedibotTeam composite {medibot}"
    );
    Ok(format!("10 rows, max |error| {worst:.2e}"))
}

fn ranking_matches_table() -> Outcome {
    let teams: Vec<TeamResult> = TABLE
        .iter()
        .map(|(t, r)| TeamResult::new(*t, r[6], r[7]))
        .collect();
    let board = rank_teams(&teams).map_err(|e| e.to_string())?;
    let got: Vec<&str> = board.iter().map(|e| e.team.as_str()).collect();
    let want: Vec<&str> = TABLE.iter().map(|(t, _)| *t).collect();
    ensure!(got == want, "order {got:?}");
    Ok("reference order reproduced".into())
}

fn leakage_definitions_are_consistent() -> Outcome {
    let r = TABLE[0].1;
    let (iou, precision) = (r[0], r[3]);
    // normalise TP = 1: TP + FP = 1/precision, TP + FP + FN = 1/IoU
    let fp = 1.0 / precision - 1.0;
    let fn_ = 1.0 / iou - 1.0 / precision;
    let y = 1.0 + fn_;
    let (alr, amr) = (fp / y, fn_ / y);
    ensure!((alr - r[4]).abs() <= 0.005, "ALR {alr:.4} vs {}", r[4]);
    ensure!((amr - r[5]).abs() <= 0.005, "AMR {amr:.4} vs {}", r[5]);
    Ok(format!(
        "ALR {alr:.4} (|d| {:.4}), AMR {amr:.4} (|d| {:.4})",
        (alr - r[4]).abs(),
        (amr - r[5]).abs()
    ))
}

fn oracles_agree() -> Outcome {
    let grids = 200u64;
    for seed in 0..grids {
        let gt = random_grid(seed);
        let pred = random_like(&gt, seed ^ 0xa5a5);
        let (tp, fp, fn_) = exhaustive_counts(&pred, &gt);
        match overlap_metrics(&pred, &gt) {
            Ok(m) => ensure!(
                (m.counts.tp, m.counts.fp, m.counts.fn_) == (tp, fp, fn_)
                    && m.iou == tp as f64 / (tp + fp + fn_) as f64
                    && m.alr == fp as f64 / (tp + fn_) as f64
                    && m.amr == fn_ as f64 / (tp + fn_) as f64,
                "grid {seed}: overlap mismatch"
            ),
            Err(_) => ensure!(tp + fn_ == 0, "grid {seed}: unexpected error"),
        }
        for conn in [Connectivity::Six, Connectivity::TwentySix] {
            let labels = connected_components(&gt, conn);
            let (comp, count) = flood_fill(&gt, conn);
            ensure!(
                labels.count as usize == count,
                "grid {seed}: {} vs {count} components",
                labels.count
            );
            let mut map = vec![0u32; count];
            for (i, c) in comp.iter().enumerate() {
                let l = labels.labels[i];
                match c {
                    None => ensure!(l == 0, "grid {seed}: background labelled"),
                    Some(c) => {
                        ensure!(
                            l != 0 && (map[*c] == 0 || map[*c] == l),
                            "grid {seed}: split component"
                        );
                        map[*c] = l;
                    }
                }
            }
            map.sort_unstable();
            map.dedup();
            ensure!(map.len() == count, "grid {seed}: merged components");
        }
        let field = distance_transform(&gt);
        for (i, want) in brute_edt(&gt).into_iter().enumerate() {
            ensure!(
                (field.at(i) - want).abs() <= 1e-9,
                "grid {seed} voxel {i}: {} vs {want}",
                field.at(i)
            );
        }
    }
    Ok(format!("{grids} grids, both connectivities"))
}

fn point_segment_distance(p: [f64; 3], b: &SynthBranch) -> f64 {
    let d: Vec<f64> = (0..3).map(|a| b.end[a] - b.start[a]).collect();
    let len2: f64 = d.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((0..3).map(|a| (p[a] - b.start[a]) * d[a]).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    (0..3)
        .map(|a| (p[a] - b.start[a] - t * d[a]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_topology(t: &SynthTree) -> Result<f64, String> {
    let seed = t.spec.seed;
    let skel = skeletonize(&t.mask).map_err(|e| e.to_string())?;
    ensure!(
        skel.is_subset_of(&t.mask),
        "seed {seed}: skeleton leaves the mask"
    );
    ensure!(
        component_count(&skel, Connectivity::TwentySix)
            == component_count(&t.mask, Connectivity::TwentySix),
        "seed {seed}: component count changed"
    );
    ensure!(
        skeletonize(&skel).map_err(|e| e.to_string())? == skel,
        "seed {seed}: not idempotent"
    );
    let tree = build_tree(&skel, &t.mask, TreeOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        tree.branch_count() == t.branches.len(),
        "seed {seed}: {} branches vs {}",
        tree.branch_count(),
        t.branches.len()
    );
    // match each measured branch to the generated segment its voxels hug
    let mut seen = vec![false; t.branches.len()];
    let mut worst: f64 = 0.0;
    for b in &tree.branches {
        let (gi, _) = t
            .branches
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mean = b
                    .voxels
                    .iter()
                    .map(|v| point_segment_distance([v[0] as f64, v[1] as f64, v[2] as f64], g))
                    .sum::<f64>()
                    / b.voxels.len().max(1) as f64;
                (i, mean)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        ensure!(
            !seen[gi],
            "seed {seed}: two branches match generated branch {gi}"
        );
        seen[gi] = true;
        let want = t.branches[gi].length_mm;
        let rel = (b.length_mm - want).abs() / want;
        ensure!(
            rel <= 0.10,
            "seed {seed} branch {gi}: {:.2} mm vs {want:.2} mm",
            b.length_mm
        );
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn topology_suite(suite: &[SynthTree]) -> Outcome {
    let results = par_map(suite, check_topology);
    let mut worst: f64 = 0.0;
    for r in results {
        worst = worst.max(r?);
    }
    let branches: usize = suite.iter().map(|t| t.branches.len()).sum();
    Ok(format!(
        "{} trees, {branches} branches, max length error {:.1}%",
        suite.len(),
        worst * 100.0
    ))
}

fn check_deltas(t: &SynthTree) -> Result<(), String> {
    let seed = t.spec.seed;
    let base = case_metrics(&t.mask, &t.mask).map_err(|e| e.to_string())?;
    let y = t.mask.count() as f64;

    let leak =
        corrupt(t, CorruptMode::AddLeakBlob { radius: 3.0 }, seed).map_err(|e| e.to_string())?;
    let m = case_metrics(&leak.mask, &t.mask).map_err(|e| e.to_string())?;
    let want_alr = leak.changed_voxels as f64 / y;
    ensure!(
        (m.alr - base.alr - want_alr).abs() <= 1e-9,
        "seed {seed}: leak ALR delta {}",
        m.alr - base.alr
    );
    ensure!(
        (m.dbr - base.dbr).abs() <= 1e-9,
        "seed {seed}: leak moved DBR"
    );
    ensure!(
        (m.dlr - base.dlr).abs() <= 1e-9,
        "seed {seed}: leak moved DLR"
    );
    ensure!(
        (m.amr - base.amr).abs() <= 1e-9,
        "seed {seed}: leak moved AMR"
    );
    ensure!(
        m.precision < base.precision,
        "seed {seed}: leak kept precision"
    );

    let erase = corrupt(t, CorruptMode::EraseBranch, seed).map_err(|e| e.to_string())?;
    let m = case_metrics(&erase.mask, &t.mask).map_err(|e| e.to_string())?;
    let b = base.gt_branches as f64;
    let target = &t.branches[erase.branch.expect("erase names its branch")];
    let share = target.length_mm / t.total_length_mm();
    ensure!(
        (m.dbr - base.dbr + 1.0 / b).abs() <= 1e-9,
        "seed {seed}: erase DBR delta {}",
        m.dbr - base.dbr
    );
    let d_dlr = m.dlr - base.dlr;
    ensure!(
        (d_dlr + share).abs() <= share,
        "seed {seed}: erase DLR delta {d_dlr:.4}, branch share {share:.4}"
    );
    ensure!(
        (m.alr - base.alr).abs() <= 1e-9,
        "seed {seed}: erase moved ALR"
    );
    ensure!(
        (m.amr - base.amr - erase.changed_voxels as f64 / y).abs() <= 1e-9,
        "seed {seed}: erase AMR delta {}",
        m.amr - base.amr
    );
    Ok(())
}

fn metric_deltas(suite: &[SynthTree]) -> Outcome {
    for r in par_map(suite, check_deltas) {
        r?;
    }
    Ok(format!("{} trees, leak and erase", suite.len()))
}

fn metrics_close(a: &CaseMetrics, b: &CaseMetrics) -> bool {
    let fields = |m: &CaseMetrics| [m.iou, m.precision, m.alr, m.amr, m.dlr, m.dbr, m.ovacc];
    fields(a)
        .iter()
        .zip(fields(b))
        .all(|(x, y)| (x - y).abs() <= 1e-12)
        && a.per_size_dbr.len() == b.per_size_dbr.len()
        && a.per_size_dbr
            .iter()
            .zip(&b.per_size_dbr)
            .all(|((ka, va), (kb, vb))| ka == kb && (va - vb).abs() <= 1e-12)
        && a.counts == b.counts
        && a.empty_prediction == b.empty_prediction
        && a.gt_branches == b.gt_branches
        && a.detected_branches == b.detected_branches
}

fn check_flips(item: &(usize, &SynthTree)) -> Result<(), String> {
    let (i, t) = *item;
    let modes = [
        CorruptMode::EraseBranch,
        CorruptMode::AddLeakBlob { radius: 3.0 },
        CorruptMode::BreakSegment { fraction: 0.3 },
    ];
    let pred = corrupt(t, modes[i % 3], t.spec.seed)
        .map_err(|e| e.to_string())?
        .mask;
    let base = case_metrics(&pred, &t.mask).map_err(|e| e.to_string())?;
    for axes in [
        [true, false, false],
        [false, true, false],
        [false, false, true],
        [true, true, true],
    ] {
        let m = case_metrics(&pred.flipped_axes(axes), &t.mask.flipped_axes(axes))
            .map_err(|e| e.to_string())?;
        ensure!(
            metrics_close(&m, &base),
            "seed {}: flip {axes:?} changed metrics",
            t.spec.seed
        );
    }
    Ok(())
}

fn flip_equivariance(suite: &[SynthTree]) -> Outcome {
    let items: Vec<(usize, &SynthTree)> = suite.iter().enumerate().collect();
    for r in par_map(&items, check_flips) {
        r?;
    }
    Ok(format!("{} trees x 4 flips", suite.len()))
}

fn simulated_cohort(rng: &mut ChaCha8Rng, n: usize, beta: f64) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let censor = Exp::new(0.3).unwrap();
    let (mut t, mut e, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let xi: f64 = normal.sample(rng);
        let event_time = Exp::new((beta * xi).exp()).unwrap().sample(rng);
        let c = censor.sample(rng);
        t.push((event_time.min(c) * 20.0).ceil());
        e.push(event_time <= c);
        x.push(xi);
    }
    (t, e, x)
}

fn cox_checks() -> Outcome {
    let names = vec!["x".to_string()];
    let opts = CoxOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_grid: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    let mut done = 0;
    while done < 25 {
        let n = rng.random_range(8..=30);
        let beta = rng.random_range(-1.5..1.5);
        let (t, e, x) = simulated_cohort(&mut rng, n, beta);
        if e.iter().filter(|&&v| v).count() < 2 {
            continue;
        }
        let recs = cox_records(&t, &e, &x);
        let fit = cox_fit(&recs, &names, &opts).map_err(|err| format!("dataset {done}: {err}"))?;
        let b = fit.coefs[0].beta;
        let oracle = grid_search_beta(&t, &e, &x);
        ensure!(
            (b - oracle).abs() < 1e-3,
            "dataset {done}: beta {b} vs grid {oracle}"
        );
        worst_grid = worst_grid.max((b - oracle).abs());

        for c in [0.01, 0.5, 3.0, 250.0] {
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let scaled =
                cox_fit(&cox_records(&t, &e, &xs), &names, &opts).map_err(|err| err.to_string())?;
            let err = (scaled.coefs[0].beta * c - b).abs();
            ensure!(
                err <= 1e-9 * (1.0 + b.abs()),
                "dataset {done}, c = {c}: scaled beta off by {err:e}"
            );
            worst_scale = worst_scale.max(err);
        }

        let null: f64 = (0..n)
            .filter(|&i| e[i])
            .map(|i| -((0..n).filter(|&j| t[j] >= t[i]).count() as f64).ln())
            .sum();
        let at_zero = cox_log_likelihood(&recs, &names, &[0.0], Ties::Breslow)
            .map_err(|err| err.to_string())?;
        ensure!(
            (fit.null_log_partial_likelihood - null).abs() <= 1e-12 * null.abs().max(1.0)
                && (at_zero - null).abs() <= 1e-12 * null.abs().max(1.0),
            "dataset {done}: null likelihood {} vs {null}",
            fit.null_log_partial_likelihood
        );
        done += 1;
    }

    let (t, e, x) = simulated_cohort(&mut ChaCha8Rng::seed_from_u64(63), 200, 0.8);
    let recs: Vec<SurvivalRecord> = cox_records(&t, &e, &x);
    let fit = cox_fit(&recs, &names, &opts).map_err(|err| err.to_string())?;
    let c = &fit.coefs[0];
    ensure!(
        c.hr > 1.0 && c.p < 0.05,
        "cohort HR {:.3}, p {:.2e}",
        c.hr,
        c.p
    );
    Ok(format!(
        "25 datasets, grid |d| <= {worst_grid:.1e}, scaling |d| <= {worst_scale:.1e}; cohort HR {:.2}, p {:.1e}",
        c.hr, c.p
    ))
}

fn wilcoxon_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..100 {
        let n = rng.random_range(1..=12);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=4) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=4) as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b, WilcoxonMode::Exact).map_err(|e| e.to_string())?;
        match enumerated_wilcoxon(&a, &b) {
            None => ensure!(r.all_zero && r.p == 1.0, "sample {k}: all-zero case"),
            Some((w, p)) => {
                ensure!(r.statistic == w, "sample {k}: W {} vs {w}", r.statistic);
                ensure!((r.p - p).abs() <= 1e-12, "sample {k}: p {} vs {p}", r.p);
            }
        }
    }
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], WilcoxonMode::Exact)
        .map_err(|e| e.to_string())?;
    ensure!((r.p - 0.0625).abs() < 1e-15, "{{1..5}}: p {}", r.p);
    Ok("100 samples match enumeration; {1..5} gives p = 0.0625".into())
}

fn auc_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = rng.random_range(2..=60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse scores so ties are common
        let levels = rng.random_range(2..=20);
        let probs: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..=levels) as f64 / levels as f64)
            .collect();
        let set = PredictionSet::from_scores(&probs, &labels).map_err(|e| e.to_string())?;
        let area = trapezoid_area(&roc_curve(&set).map_err(|e| e.to_string())?);
        let want = pairwise_auc(&probs, &labels);
        let got = auc(&set).map_err(|e| e.to_string())?;
        ensure!(
            (area - want).abs() <= 1e-12 && (got - want).abs() <= 1e-12,
            "set {k}: {area} vs {want}"
        );
        worst = worst.max((area - want).abs());
    }
    let set = PredictionSet::from_scores(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])
        .map_err(|e| e.to_string())?;
    let a = auc(&set).map_err(|e| e.to_string())?;
    ensure!((a - 0.75).abs() <= 1e-12, "worked case {a}");
    Ok(format!("100 sets, max |d| {worst:.1e}; worked case 0.75"))
}

fn image_of(mask: &Grid<bool>) -> IntensityVolume {
    let data = mask
        .data()
        .iter()
        .map(|&v| if v { -950.0 } else { 40.0 })
        .collect();
    Grid::from_vec(*mask.geometry(), data).unwrap()
}

fn io_checks(suite: &[SynthTree]) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let results = par_map(&suite.iter().enumerate().collect::<Vec<_>>(), |(i, t)| {
        let path = dir.path().join(format!("fixture_{i}.nii.gz"));
        write_mask(&t.mask, &path).map_err(|e| e.to_string())?;
        let back = read_mask(&path).map_err(|e| e.to_string())?;
        ensure!(back == t.mask, "fixture {i}: round trip changed the mask");
        Ok(())
    });
    for r in results {
        r?;
    }

    let t = &suite[0];
    let plain = dir.path().join("plain.nii");
    let packed = dir.path().join("packed.nii.gz");
    write_mask(&t.mask, &plain).map_err(|e| e.to_string())?;
    write_mask(&t.mask, &packed).map_err(|e| e.to_string())?;
    let mut unpacked = Vec::new();
    flate2::read::GzDecoder::new(std::fs::File::open(&packed).map_err(|e| e.to_string())?)
        .read_to_end(&mut unpacked)
        .map_err(|e| e.to_string())?;
    ensure!(
        unpacked == std::fs::read(&plain).map_err(|e| e.to_string())?,
        "gzip payload differs from plain file"
    );
    ensure!(
        read_mask(&plain).map_err(|e| e.to_string())?
            == read_mask(&packed).map_err(|e| e.to_string())?,
        "plain and gzip reads differ"
    );

    let image = image_of(&t.mask);
    let kinds = [
        PerturbKind::Flip(Axis::X),
        PerturbKind::Flip(Axis::Y),
        PerturbKind::Flip(Axis::Z),
        PerturbKind::Noise { sigma_hu: 50.0 },
        PerturbKind::Downsample { ratio: None },
    ];
    for kind in kinds {
        let spec = PerturbSpec::new(kind, 77).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for run in 0..2 {
            let img = dir
                .path()
                .join(format!("{}_{run}.nii.gz", spec.kind_name()));
            let msk = dir
                .path()
                .join(format!("{}_{run}_mask.nii.gz", spec.kind_name()));
            write_volume(&spec.apply_image(&image).map_err(|e| e.to_string())?, &img)
                .map_err(|e| e.to_string())?;
            write_mask(&spec.apply_mask(&t.mask).map_err(|e| e.to_string())?, &msk)
                .map_err(|e| e.to_string())?;
            bytes.push((std::fs::read(&img).unwrap(), std::fs::read(&msk).unwrap()));
            read_volume(&img).map_err(|e| e.to_string())?;
        }
        ensure!(
            bytes[0] == bytes[1],
            "{} output differs between runs",
            spec.kind_name()
        );
    }
    Ok(format!(
        "{} fixtures round-trip; gzip transparent; 5 perturbations reproducible",
        suite.len()
    ))
}

fn throughput() -> Outcome {
    let spec = TreeSpec {
        seed: 3,
        depth: 3,
        trunk_length: 80.0,
        length_decay: 0.8,
        length_jitter: 0.1,
        trunk_radius: 4.0,
        radius_decay: 0.75,
        min_radius: 1.0,
        bifurcation_angle_deg: 40.0,
        angle_jitter_deg: 5.0,
        lattice_turns: false,
        dims: [256, 256, 256],
        spacing: [0.7, 0.7, 0.8],
    };
    let t = generate_tree(&spec).map_err(|e| e.to_string())?;
    let pred = corrupt(&t, CorruptMode::AddLeakBlob { radius: 4.0 }, 1)
        .map_err(|e| e.to_string())?
        .mask;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (gp, pp) = (dir.path().join("gt.nii.gz"), dir.path().join("pred.nii.gz"));
    write_mask(&t.mask, &gp).map_err(|e| e.to_string())?;
    write_mask(&pred, &pp).map_err(|e| e.to_string())?;

    let start = Instant::now();
    let gt = read_mask(&gp).map_err(|e| e.to_string())?;
    let pred = read_mask(&pp).map_err(|e| e.to_string())?;
    let m = case_metrics(&pred, &gt).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(
        took < Duration::from_secs(30),
        "took {:.1} s",
        took.as_secs_f64()
    );
    ensure!(
        m.gt_branches == t.branches.len(),
        "{} branches vs {}",
        m.gt_branches,
        t.branches.len()
    );
    Ok(format!(
        "256^3 case evaluated in {:.2} s (OvAcc {:.4})",
        took.as_secs_f64(),
        m.ovacc
    ))
}

fn run(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("exceeded {} s", l.as_secs())),
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!(
        "criterion {id:>2} {tag} [{:>7.2} s] {name}: {detail}",
        took.as_secs_f64()
    );
    outcome.is_ok()
}

fn main() {
    let secs = Duration::from_secs;
    let start = Instant::now();
    let suite = fixture_suite(FIXTURES);
    println!(
        "built {} fixture trees in {:.1} s",
        suite.len(),
        start.elapsed().as_secs_f64()
    );

    let results = [
        run(
            1,
            "composite accuracy",
            Some(secs(1)),
            composite_matches_table,
        ),
        run(2, "leaderboard order", Some(secs(1)), ranking_matches_table),
        run(
            3,
            "leakage/miss definitions",
            None,
            leakage_definitions_are_consistent,
        ),
        run(4, "oracle equivalence", Some(secs(60)), oracles_agree),
        run(5, "topology suite", Some(secs(300)), || {
            topology_suite(&suite)
        }),
        run(6, "corruption deltas", None, || metric_deltas(&suite)),
        run(7, "flip equivariance", None, || flip_equivariance(&suite)),
        run(8, "cox regression", None, cox_checks),
        run(9, "wilcoxon signed-rank", None, wilcoxon_checks),
        run(10, "roc auc", None, auc_checks),
        run(11, "io determinism", None, || io_checks(&suite)),
        run(12, "throughput", Some(secs(30)), throughput),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
