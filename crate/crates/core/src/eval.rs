//! Design metrics: pooled sequence entropy, energy gap to a reference,
//! rank-aggregated top-1 selection and Pareto-front extraction.

use std::cmp::Ordering;

use serde::Serialize;

use crate::energy::EnergyReport;
use crate::model::{Design, NUM_TYPES};
use crate::scalar::Real;

/// Entropy in bits of an empirical distribution given by counts.
pub fn entropy_bits<F: Real>(counts: &[usize]) -> F {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return F::zero();
    }
    let n = F::lit(total as f64);
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = F::lit(c as f64) / n;
            -p * p.log2()
        })
        .fold(F::zero(), |a, b| a + b)
}

/// Entropy (bits) of residue types pooled over all positions and designs.
pub fn sequence_entropy(designs: &[Design]) -> f64 {
    let mut counts = [0usize; NUM_TYPES];
    for d in designs {
        for r in &d.cdr.residues {
            counts[r.aa.index()] += 1;
        }
    }
    entropy_bits(&counts)
}

/// Mean absolute difference over `{e_intra, dg_proxy, e_att, e_rep}`.
pub fn energy_gap<F: Real>(design: &EnergyReport<F>, reference: &EnergyReport<F>) -> F {
    let diffs = [
        design.e_intra - reference.e_intra,
        design.dg_proxy - reference.dg_proxy,
        design.e_att_total - reference.e_att_total,
        design.e_rep_total - reference.e_rep_total,
    ];
    diffs.iter().fold(F::zero(), |s, d| s + d.abs()) / F::lit(4.0)
}

/// Component-wise mean of energy totals. Per-residue arrays are averaged
/// when all reports share a length.
pub fn mean_report<F: Real>(reports: &[EnergyReport<F>]) -> EnergyReport<F> {
    let n = F::lit(reports.len().max(1) as f64);
    let m = reports.first().map_or(0, |r| r.e_att_per_res.len());
    let mut out = EnergyReport::zero(m);
    let same_len = reports.iter().all(|r| r.e_att_per_res.len() == m);
    for r in reports {
        out.e_att_total = out.e_att_total + r.e_att_total / n;
        out.e_rep_total = out.e_rep_total + r.e_rep_total / n;
        out.e_intra = out.e_intra + r.e_intra / n;
        out.dg_proxy = out.dg_proxy + r.dg_proxy / n;
        if same_len {
            for j in 0..m {
                out.e_att_per_res[j] = out.e_att_per_res[j] + r.e_att_per_res[j] / n;
                out.e_rep_per_res[j] = out.e_rep_per_res[j] + r.e_rep_per_res[j] / n;
            }
        }
    }
    out
}

/// 1-based ranks in ascending order; ties share their average rank.
pub fn average_ranks<F: Real>(values: &[F]) -> Vec<F> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![F::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank mean((i+1)..=(j+1))
        let avg = F::lit((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Candidate for top-1 selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankEntry<F = f64> {
    pub e_intra: F,
    pub dg_proxy: F,
    pub seed: u64,
}

/// Index of the entry with the smallest rank sum over `e_intra` and
/// `dg_proxy`; ties broken by lower `dg_proxy`, then lower seed.
pub fn rank_top_index<F: Real>(entries: &[RankEntry<F>]) -> Option<usize> {
    if entries.is_empty() {
        return None;
    }
    let intra: Vec<F> = entries.iter().map(|e| e.e_intra).collect();
    let dg: Vec<F> = entries.iter().map(|e| e.dg_proxy).collect();
    let ri = average_ranks(&intra);
    let rd = average_ranks(&dg);
    (0..entries.len()).min_by(|&a, &b| {
        let sa = ri[a] + rd[a];
        let sb = ri[b] + rd[b];
        sa.partial_cmp(&sb)
            .unwrap_or(Ordering::Equal)
            .then(entries[a].dg_proxy.partial_cmp(&entries[b].dg_proxy).unwrap_or(Ordering::Equal))
            .then(entries[a].seed.cmp(&entries[b].seed))
    })
}

/// Top-1 design by aggregated rank; designs must carry energies.
pub fn rank_top(designs: &[Design]) -> Option<&Design> {
    let entries: Vec<RankEntry> = designs
        .iter()
        .map(|d| {
            let e = d.energies.as_ref().expect("rank_top needs designs with energies");
            RankEntry {
                e_intra: e.e_intra,
                dg_proxy: e.dg_proxy,
                seed: d.seed,
            }
        })
        .collect();
    rank_top_index(&entries).map(|i| &designs[i])
}

/// Indices (in input order) of points not dominated under minimisation of
/// both coordinates.
pub fn pareto_front<F: Real>(points: &[(F, F)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .partial_cmp(&points[b].0)
            .unwrap_or(Ordering::Equal)
            .then(points[a].1.partial_cmp(&points[b].1).unwrap_or(Ordering::Equal))
    });
    let mut keep = vec![false; points.len()];
    // min y over points with strictly smaller x
    let mut best_y_before: Option<F> = None;
    let mut i = 0;
    while i < order.len() {
        let x = points[order[i]].0;
        let mut j = i;
        while j + 1 < order.len() && points[order[j + 1]].0 == x {
            j += 1;
        }
        // group sorted by y; its minimum is the first entry
        let group_min = points[order[i]].1;
        for &k in &order[i..=j] {
            let y = points[k].1;
            let dominated_left = best_y_before.is_some_and(|b| b <= y);
            let dominated_same_x = group_min < y;
            keep[k] = !(dominated_left || dominated_same_x);
        }
        best_y_before = Some(match best_y_before {
            Some(b) if b <= group_min => b,
            _ => group_min,
        });
        i = j + 1;
    }
    (0..points.len()).filter(|&k| keep[k]).collect()
}

/// True when no point dominates another by more than `tol_frac` times the
/// coordinate range in the improving direction.
pub fn mutually_nondominated<F: Real>(points: &[(F, F)], tol_frac: F) -> bool {
    if points.len() < 2 {
        return true;
    }
    let range = |f: &dyn Fn(&(F, F)) -> F| {
        let lo = points.iter().map(f).fold(F::infinity(), F::min);
        let hi = points.iter().map(f).fold(F::neg_infinity(), F::max);
        hi - lo
    };
    let tol_x = tol_frac * range(&|p| p.0);
    let tol_y = tol_frac * range(&|p| p.1);
    for (a, p) in points.iter().enumerate() {
        for (b, q) in points.iter().enumerate() {
            if a == b {
                continue;
            }
            let weakly = p.0 <= q.0 && p.1 <= q.1;
            let beyond = (q.0 - p.0) > tol_x || (q.1 - p.1) > tol_y;
            if weakly && beyond {
                return false;
            }
        }
    }
    true
}

/// Per-complex metric row mirroring a Top/Avg results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub method_label: String,
    pub complex_id: String,
    pub top_e_intra: f64,
    pub avg_e_intra: f64,
    pub top_dg: f64,
    pub avg_dg: f64,
    pub top_e_att: f64,
    pub avg_e_att: f64,
    pub top_e_rep: f64,
    pub avg_e_rep: f64,
    pub top_gap: f64,
    pub avg_gap: f64,
    pub entropy: f64,
}

pub const METRIC_HEADER: &str = "method_label,complex_id,top_e_intra,avg_e_intra,top_dg,avg_dg,top_e_att,avg_e_att,top_e_rep,avg_e_rep,top_gap,avg_gap,entropy";

impl MetricRow {
    /// Metrics for one complex. `avg_gap` is the gap of the mean energies.
    pub fn compute(method_label: &str, complex_id: &str, designs: &[Design], reference: &EnergyReport) -> Option<Self> {
        let top = rank_top(designs)?;
        let top_e = top.energies.clone().expect("energies present");
        let reports: Vec<EnergyReport> = designs.iter().filter_map(|d| d.energies.clone()).collect();
        let avg = mean_report(&reports);
        Some(MetricRow {
            method_label: method_label.to_string(),
            complex_id: complex_id.to_string(),
            top_e_intra: top_e.e_intra,
            avg_e_intra: avg.e_intra,
            top_dg: top_e.dg_proxy,
            avg_dg: avg.dg_proxy,
            top_e_att: top_e.e_att_total,
            avg_e_att: avg.e_att_total,
            top_e_rep: top_e.e_rep_total,
            avg_e_rep: avg.e_rep_total,
            top_gap: energy_gap(&top_e, reference),
            avg_gap: energy_gap(&avg, reference),
            entropy: sequence_entropy(designs),
        })
    }

    pub fn csv_line(&self) -> String {
        let f = |v: f64| format!("{v:.6}");
        [
            self.method_label.clone(),
            self.complex_id.clone(),
            f(self.top_e_intra),
            f(self.avg_e_intra),
            f(self.top_dg),
            f(self.avg_dg),
            f(self.top_e_att),
            f(self.avg_e_att),
            f(self.top_e_rep),
            f(self.avg_e_rep),
            f(self.top_gap),
            f(self.avg_gap),
            f(self.entropy),
        ]
        .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use crate::model::{AminoAcid, CdrState, ResidueState};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn design_of(seq: &[usize]) -> Design {
        Design::new(
            "c",
            CdrState::new(
                seq.iter()
                    .map(|&a| ResidueState::new(AminoAcid::new(a).unwrap(), [0.0; 3], Rotation::identity()))
                    .collect(),
            ),
            0,
        )
    }

    #[test]
    fn entropy_extremes() {
        assert_eq!(sequence_entropy(&[design_of(&[4, 4, 4]), design_of(&[4, 4])]), 0.0);
        let all: Vec<usize> = (0..20).collect();
        let h = sequence_entropy(&[design_of(&all), design_of(&all)]);
        assert!((h - 20f64.log2()).abs() < 1e-12);
        assert!((h - 4.3219).abs() < 1e-4);
        // natural CDR-H3 corpora sit near 3.95 bits, below the uniform bound
        assert!(3.95 < h);
    }

    fn report(vals: [f64; 4]) -> EnergyReport {
        let mut r = EnergyReport::zero(0);
        r.e_intra = vals[0];
        r.dg_proxy = vals[1];
        r.e_att_total = vals[2];
        r.e_rep_total = vals[3];
        r
    }

    #[test]
    fn gap_cases() {
        let a = report([1.0, -2.0, -3.0, 4.0]);
        assert_eq!(energy_gap(&a, &a), 0.0);
        let b = report([5.0, 2.0, 1.0, 0.0]);
        assert_eq!(energy_gap(&b, &a), 4.0);
    }

    #[test]
    fn gap_of_published_ablation_row() {
        // Reference and w/o-alignment rows of the published ablation table
        let reference = report([-11.03, 16.75, -12.45, 15.77]);
        let no_align = report([128.10, 235.82, -14.31, 479.00]);
        assert!((energy_gap(&no_align, &reference) - 205.82).abs() < 0.005);
        let dpo = report([113.59, 183.19, -19.98, 352.15]);
        assert!((energy_gap(&dpo, &reference) - 158.74).abs() < 0.005);
    }

    #[test]
    fn gap_matches_spreadsheet_recomputation() {
        let mut rng = crate::rng::from_seed(31);
        for _ in 0..10 {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
            let a = report([v[0], v[1], v[2], v[3]]);
            let b = report([v[4], v[5], v[6], v[7]]);
            let cols = [(v[0], v[4]), (v[1], v[5]), (v[2], v[6]), (v[3], v[7])];
            let mut total = 0.0;
            for (x, y) in cols {
                total += if x > y { x - y } else { y - x };
            }
            assert!((energy_gap(&a, &b) - total / 4.0).abs() < 1e-12);
        }
    }

    fn entry(e_intra: f64, dg_proxy: f64, seed: u64) -> RankEntry {
        RankEntry { e_intra, dg_proxy, seed }
    }

    #[test]
    fn rank_top_simple_cases() {
        assert_eq!(rank_top_index::<f64>(&[]), None);
        assert_eq!(rank_top_index(&[entry(3.0, 1.0, 0)]), Some(0));
        let e = [entry(3.0, 2.0, 0), entry(-1.0, -5.0, 1), entry(0.0, 0.0, 2)];
        assert_eq!(rank_top_index(&e), Some(1));
    }

    /// Exhaustive rank-sum: for each candidate count strictly-better and tied
    /// entries directly.
    fn brute_rank_top(e: &[RankEntry]) -> usize {
        let rank = |vals: &[f64], i: usize| {
            let less = vals.iter().filter(|&&v| v < vals[i]).count() as f64;
            let eq = vals.iter().filter(|&&v| v == vals[i]).count() as f64;
            less + (eq + 1.0) / 2.0
        };
        let a: Vec<f64> = e.iter().map(|x| x.e_intra).collect();
        let b: Vec<f64> = e.iter().map(|x| x.dg_proxy).collect();
        let mut best = 0;
        for i in 1..e.len() {
            let si = rank(&a, i) + rank(&b, i);
            let sb = rank(&a, best) + rank(&b, best);
            let better = si < sb
                || (si == sb && (e[i].dg_proxy < e[best].dg_proxy
                    || (e[i].dg_proxy == e[best].dg_proxy && e[i].seed < e[best].seed)));
            if better {
                best = i;
            }
        }
        best
    }

    #[test]
    fn rank_top_crossing_fixture() {
        // ranks: e_intra -> [1,2,3,4,5]; dg -> [5,1,2,3,4]
        let e = [
            entry(-10.0, 5.0, 4),
            entry(-8.0, -9.0, 3),
            entry(-6.0, -7.0, 2),
            entry(-4.0, -5.0, 1),
            entry(-2.0, -3.0, 0),
        ];
        assert_eq!(rank_top_index(&e), Some(brute_rank_top(&e)));
        assert_eq!(rank_top_index(&e), Some(1));
        // ties on both ranks and dg fall to lower seed
        let t = [entry(1.0, 1.0, 9), entry(1.0, 1.0, 3)];
        assert_eq!(rank_top_index(&t), Some(1));
    }

    #[test]
    fn rank_top_matches_brute_force_random() {
        let mut rng = crate::rng::from_seed(90);
        for _ in 0..200 {
            let n = rng.random_range(1..9);
            let e: Vec<RankEntry> = (0..n)
                .map(|s| entry(rng.random_range(0..4) as f64, rng.random_range(0..4) as f64, s as u64))
                .collect();
            assert_eq!(rank_top_index(&e), Some(brute_rank_top(&e)));
        }
    }

    fn brute_front(p: &[(f64, f64)]) -> Vec<usize> {
        (0..p.len())
            .filter(|&i| {
                !(0..p.len()).any(|j| {
                    j != i && p[j].0 <= p[i].0 && p[j].1 <= p[i].1 && (p[j].0 < p[i].0 || p[j].1 < p[i].1)
                })
            })
            .collect()
    }

    #[test]
    fn pareto_small_cases() {
        assert_eq!(pareto_front(&[(3.0, 4.0)]), vec![0]);
        assert_eq!(pareto_front(&[(0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]), vec![0, 1]);
        assert_eq!(pareto_front(&[(1.0, 1.0), (1.0, 1.0)]), vec![0, 1]);
    }

    #[test]
    fn pareto_matches_brute_force_on_cloud() {
        let mut rng = crate::rng::from_seed(5);
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        assert_eq!(pareto_front(&pts), brute_front(&pts));
        let grid: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(0..6) as f64, rng.random_range(0..6) as f64))
            .collect();
        assert_eq!(pareto_front(&grid), brute_front(&grid));
    }

    #[test]
    fn tolerant_nondominance() {
        assert!(mutually_nondominated(&[(0.0, 1.0), (1.0, 0.0)], 0.05));
        assert!(!mutually_nondominated(&[(0.0, 0.0), (1.0, 1.0)], 0.05));
        // within tolerance on both axes counts as a tie
        assert!(mutually_nondominated(&[(0.0, 1.0), (1.0, 0.0), (0.99, 0.01)], 0.05));
    }

    proptest! {
        #[test]
        fn pareto_idempotent_and_subset_monotone(pts in prop::collection::vec((0u8..10, 0u8..10), 1..40)) {
            let p: Vec<(f64, f64)> = pts.iter().map(|&(a, b)| (a as f64, b as f64)).collect();
            let front = pareto_front(&p);
            prop_assert_eq!(&front, &brute_front(&p));
            let fp: Vec<(f64, f64)> = front.iter().map(|&i| p[i]).collect();
            prop_assert_eq!(pareto_front(&fp).len(), fp.len());
            // remove one dominated point: front unchanged
            if let Some(d) = (0..p.len()).find(|i| !front.contains(i)) {
                let reduced: Vec<(f64, f64)> = p.iter().enumerate().filter(|&(i, _)| i != d).map(|(_, &q)| q).collect();
                let rf: Vec<(f64, f64)> = pareto_front(&reduced).iter().map(|&i| reduced[i]).collect();
                prop_assert_eq!(rf, fp);
            }
        }

        #[test]
        fn rank_top_invariant_under_monotone_transform(vals in prop::collection::vec((-20i32..20, -20i32..20), 1..12)) {
            let e: Vec<RankEntry> = vals.iter().enumerate().map(|(s, &(a, b))| entry(a as f64, b as f64, s as u64)).collect();
            let g: Vec<RankEntry> = e.iter().map(|x| entry(x.e_intra.powi(3) + 2.0 * x.e_intra, (x.dg_proxy / 7.0).exp(), x.seed)).collect();
            prop_assert_eq!(rank_top_index(&e), rank_top_index(&g));
        }

        #[test]
        fn entropy_in_bounds(seq in prop::collection::vec(0usize..20, 1..200)) {
            let h = sequence_entropy(&[design_of(&seq)]);
            prop_assert!(h >= 0.0 && h <= 20f64.log2() + 1e-12);
        }
    }
}
