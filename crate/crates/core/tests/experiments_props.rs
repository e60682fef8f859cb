use proptest::prelude::*;

use maskpos_core::experiments::{diagonal_normalize, quantile_clip};
use maskpos_core::io::{matrix_to_csv, parse_matrix_csv, read_matrix_csv, write_matrix_csv};
use maskpos_core::{Matrix, ScoreMatrix};

fn score_strategy() -> impl Strategy<Value = ScoreMatrix> {
    (1usize..=10, any::<bool>()).prop_flat_map(|(n, masked)| {
        prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
            let mut entries = Matrix::from_vec(n, n, v).unwrap();
            if masked {
                for i in 0..n {
                    for j in i + 1..n {
                        entries[(i, j)] = 0.0;
                    }
                }
            }
            ScoreMatrix { entries, masked }
        })
    })
}

fn diagonal_means(a: &ScoreMatrix) -> Vec<f64> {
    let n = a.n() as isize;
    let mut out = Vec::new();
    for offset in -(n - 1)..n {
        let cells: Vec<f64> = (0..n)
            .filter_map(|i| {
                let j = i - offset;
                (0..n).contains(&j).then_some((i as usize, j as usize))
            })
            .filter(|&(i, j)| a.is_valid(i, j))
            .map(|(i, j)| a.entries[(i, j)])
            .collect();
        if !cells.is_empty() {
            out.push(cells.iter().sum::<f64>() / cells.len() as f64);
        }
    }
    out
}

proptest! {
    #[test]
    fn diagonal_normalize_zeroes_every_diagonal(a in score_strategy()) {
        let z = diagonal_normalize(&a);
        for mean in diagonal_means(&z) {
            prop_assert!(mean.abs() < 1e-12);
        }
        for i in 0..a.n() {
            for j in 0..a.n() {
                if !a.is_valid(i, j) {
                    prop_assert_eq!(z.entries[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn diagonal_normalize_is_idempotent(a in score_strategy()) {
        let once = diagonal_normalize(&a);
        let twice = diagonal_normalize(&once);
        prop_assert!(once.entries.max_abs_diff(&twice.entries).unwrap() < 1e-12);
    }

    #[test]
    fn quantile_clip_stays_within_data_range(a in score_strategy(), lo in 0.0f64..0.5, width in 0.01f64..0.5) {
        let clipped = quantile_clip(&a, lo, lo + width).unwrap();
        let valid: Vec<(usize, usize)> = (0..a.n())
            .flat_map(|i| (0..a.n()).map(move |j| (i, j)))
            .filter(|&(i, j)| a.is_valid(i, j))
            .collect();
        let min = valid.iter().map(|&c| a.entries[c]).fold(f64::INFINITY, f64::min);
        let max = valid.iter().map(|&c| a.entries[c]).fold(f64::NEG_INFINITY, f64::max);
        for &c in &valid {
            prop_assert!(clipped.entries[c] >= min && clipped.entries[c] <= max);
        }
    }

    #[test]
    fn csv_round_trip_is_lossless(
        rows in 1usize..6,
        cols in 1usize..6,
        bits in prop::collection::vec(any::<u64>(), 36),
    ) {
        let values: Vec<f64> = bits
            .iter()
            .take(rows * cols)
            .map(|&b| f64::from_bits(b))
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        let m = Matrix::from_vec(rows, cols, values).unwrap();
        let back = parse_matrix_csv(&matrix_to_csv(&m), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(
            m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let m = Matrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) - 1e-300);
    write_matrix_csv(&path, &m).unwrap();
    assert_eq!(read_matrix_csv(&path).unwrap(), m);
    assert!(read_matrix_csv(&dir.path().join("missing.csv")).is_err());
}
