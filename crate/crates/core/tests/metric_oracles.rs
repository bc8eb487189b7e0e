use dockgame::eval::{
    centroid_distance, ligand_rmsd, percentile, residue_accuracy, summarize, ComplexMetrics, DistanceSummary,
};
use dockgame::geom::Point;
use dockgame::objectives::distance_map;
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Oracles below go through nalgebra matrices rather than the crate's own
// point helpers.

fn as_matrix(p: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(p.len(), 3, |i, k| p[i][k])
}

fn rmsd_oracle(a: &[Point], b: &[Point]) -> f64 {
    let d = as_matrix(a) - as_matrix(b);
    (d.norm_squared() / a.len() as f64).sqrt()
}

fn centroid_oracle(a: &[Point], b: &[Point]) -> f64 {
    let ca = as_matrix(a).row_mean();
    let cb = as_matrix(b).row_mean();
    (ca - cb).norm()
}

fn dist_map_oracle(a: &[Point], r: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * r.len());
    for x in a {
        for y in r {
            out.push((Vector3::from(*x) - Vector3::from(*y)).norm());
        }
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), n)
}

fn pair() -> impl Strategy<Value = (Vec<Point>, Vec<Point>)> {
    (1usize..40).prop_flat_map(|n| (cloud(n..n + 1), cloud(n..n + 1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rmsd_and_centroid_match_oracles((a, b) in pair()) {
        let rmsd = ligand_rmsd(&a, &b).unwrap();
        let cd = centroid_distance(&a, &b).unwrap();
        prop_assert!(close(rmsd, rmsd_oracle(&a, &b)), "{rmsd} vs {}", rmsd_oracle(&a, &b));
        prop_assert!(close(cd, centroid_oracle(&a, &b)));
        prop_assert!(cd <= rmsd * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn distance_map_matches_oracle(a in cloud(1..12), r in cloud(1..12)) {
        let d = distance_map(&a, &r);
        prop_assert_eq!(d.shape(), (a.len(), r.len()));
        for (x, y) in d.data().iter().zip(dist_map_oracle(&a, &r)) {
            prop_assert!(close(*x, y));
        }
    }

    #[test]
    fn rmsd_ignores_matched_permutations((a, b) in pair(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..a.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pa: Vec<Point> = idx.iter().map(|&i| a[i]).collect();
        let pb: Vec<Point> = idx.iter().map(|&i| b[i]).collect();
        let (x, y) = (ligand_rmsd(&a, &b).unwrap(), ligand_rmsd(&pa, &pb).unwrap());
        prop_assert!(close(x, y));
    }

    #[test]
    fn summary_ignores_complex_order(vals in prop::collection::vec((0.0f64..12.0, 0.0f64..1.0, 0.0f64..100.0), 1..30)) {
        let metrics: Vec<ComplexMetrics> = vals
            .iter()
            .enumerate()
            .map(|(i, &(r, f, acc))| ComplexMetrics {
                id: format!("c{i:03}"),
                ligand_rmsd: r,
                centroid_distance: r * f,
                pocket_accuracy: acc,
                pocket_rmsd: r * 0.5,
                runtime_s: Some(0.1 * i as f64),
            })
            .collect();
        let mut rev = metrics.clone();
        rev.reverse();
        let (a, b) = (summarize(&metrics).unwrap(), summarize(&rev).unwrap());
        prop_assert_eq!(a, b);
        let s = a.ligand_rmsd;
        prop_assert!(s.p25 <= s.p50 && s.p50 <= s.p75);
        for pct in [s.pct_below_2a, s.pct_below_5a, a.pocket_accuracy] {
            prop_assert!((0.0..=100.0).contains(&pct));
        }
    }

    #[test]
    fn nearest_rank_matches_counting(vals in prop::collection::vec(-5.0f64..5.0, 1..50), p in 0.0f64..=100.0) {
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        let v = percentile(&sorted, p);
        // smallest value with at least p% of the sample at or below it
        let n = sorted.len() as f64;
        let want = sorted
            .iter()
            .copied()
            .find(|&x| sorted.iter().filter(|&&y| y <= x).count() as f64 >= ((p / 100.0) * n).max(1.0))
            .unwrap();
        prop_assert_eq!(v, want);
    }
}

#[test]
fn summary_examples() {
    let one = DistanceSummary::of(&[3.5]).unwrap();
    assert_eq!((one.p25, one.p50, one.p75, one.mean), (3.5, 3.5, 3.5, 3.5));
    let four = DistanceSummary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((four.p25, four.p50, four.p75), (1.0, 2.0, 3.0));
    assert_eq!((four.pct_below_2a, four.pct_below_5a), (25.0, 100.0));
    assert_eq!(residue_accuracy(&[true; 4], &[true; 4]).unwrap(), 100.0);
    assert_eq!(residue_accuracy(&[true, false], &[false, true]).unwrap(), 0.0);
    let sel = [true, true, true, false, false, false, false, false, true, false];
    let tru = [true, true, true, false, false, false, false, false, false, true];
    assert_eq!(residue_accuracy(&sel, &tru).unwrap(), 80.0);
}
