//! Nearest-neighbour search against a brute-force integer oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqplace::retrieval::{IndexEntry, PlaceIndex};

// Small integer coordinates give exact f32 distances and frequent ties.
fn oracle(rows: &[Vec<i64>], starts: &[u32], q: &[i64]) -> (u32, i64) {
    let mut best: Option<(i64, u32)> = None;
    for (row, &s) in rows.iter().zip(starts) {
        let d: i64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|b| (d, s) < b) {
            best = Some((d, s));
        }
    }
    let (d, s) = best.unwrap();
    (s, d)
}

#[test]
fn index_agrees_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ties = 0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=9);
        let len = rng.random_range(1..=120);
        let span = rng.random_range(1..=3i64);
        let rows: Vec<Vec<i64>> = (0..len)
            .map(|_| (0..dim).map(|_| rng.random_range(-span..=span)).collect())
            .collect();
        let mut starts: Vec<u32> = (0..len as u32).map(|i| i * 3 + 1).collect();
        starts.shuffle(&mut rng);
        let mut index = PlaceIndex::new(dim);
        for (row, &s) in rows.iter().zip(&starts) {
            let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            index
                .push(&v, IndexEntry { start_frame_id: s, place_ids: vec![s] })
                .unwrap();
        }
        let q: Vec<i64> = (0..dim).map(|_| rng.random_range(-span - 1..=span + 1)).collect();
        let (want_start, want_d) = oracle(&rows, &starts, &q);
        let dmin = want_d;
        let tied = rows
            .iter()
            .filter(|r| r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<i64>() == dmin)
            .count();
        if tied > 1 {
            ties += 1;
        }
        let qf: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        let got = index.query(&qf).unwrap();
        assert_eq!(got.start_frame_id, want_start);
        assert_eq!(got.sq_distance, want_d as f32);
        assert_eq!(index.entries()[got.entry].start_frame_id, want_start);
    }
    assert!(ties > 100, "only {ties} cases exercised ties");
}

#[test]
fn index_roundtrips_through_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut index = PlaceIndex::new(5);
    for i in 0..40u32 {
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        index
            .push(&v, IndexEntry { start_frame_id: i, place_ids: vec![i, i + 1] })
            .unwrap();
    }
    let back = PlaceIndex::from_bytes(&index.to_bytes()).unwrap();
    assert_eq!(back, index);
}
