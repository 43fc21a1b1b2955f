//! Brute-force oracles for the randomized and retraining-based selectors.

use driftbench_core::active::{select_badge, select_coreset, select_eap, EapEval, QueryInput};
use driftbench_core::corpus::{Label, SparseVector};
use driftbench_core::detector::{self, TrainConfig};

fn dense(rows: &[&[f64]]) -> Vec<SparseVector> {
    rows.iter().map(|r| SparseVector::from_dense(r).unwrap()).collect()
}

/// Gradient embedding written out densely.
fn embed(x: &[f64], f: f64) -> Vec<f64> {
    let y1 = if f > 0.5 { 1.0 } else { 0.0 };
    let (g0, g1) = ((1.0 - f) - (1.0 - y1), f - y1);
    x.iter().map(|v| g0 * v).chain(x.iter().map(|v| g1 * v)).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn badge_matches_exact_d2_sequence_probabilities() {
    let rows: [&[f64]; 5] = [&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[2.0, 0.5], &[0.5, 2.0]];
    let scores = [0.2, 0.45, 0.55, 0.9, 0.7];
    let pool = dense(&rows);
    let refs: Vec<&SparseVector> = pool.iter().collect();
    let emb: Vec<Vec<f64>> = rows.iter().zip(scores).map(|(r, f)| embed(r, f)).collect();

    // Exact probability of every ordered triple under D² seeding.
    let n = 5;
    let mut exact = std::collections::HashMap::new();
    for a in 0..n {
        for b in (0..n).filter(|&b| b != a) {
            let d1: Vec<f64> = (0..n).map(|i| if i == a { 0.0 } else { sq(&emb[i], &emb[a]) }).collect();
            let p_b = d1[b] / d1.iter().sum::<f64>();
            for c in (0..n).filter(|&c| c != a && c != b) {
                let d2: Vec<f64> = (0..n)
                    .map(|i| if i == a || i == b { 0.0 } else { d1[i].min(sq(&emb[i], &emb[b])) })
                    .collect();
                let p_c = d2[c] / d2.iter().sum::<f64>();
                exact.insert(vec![a, b, c], p_b * p_c / n as f64);
            }
        }
    }
    let total: f64 = exact.values().sum();
    assert!((total - 1.0).abs() < 1e-12);

    let runs = 40_000u64;
    let mut counts = std::collections::HashMap::new();
    for seed in 0..runs {
        *counts.entry(select_badge(&refs, &scores, 3, seed).selected).or_insert(0u64) += 1;
    }
    for seq in counts.keys() {
        assert!(exact.contains_key(seq), "impossible sequence {seq:?}");
    }
    for (seq, &p) in &exact {
        let freq = *counts.get(seq).unwrap_or(&0) as f64 / runs as f64;
        let sd = (p * (1.0 - p) / runs as f64).sqrt();
        assert!((freq - p).abs() <= 5.0 * sd + 1e-4, "{seq:?}: {freq} vs {p}");
    }
}

#[test]
fn coreset_matches_exhaustive_farthest_first() {
    // Brute-force farthest-first: at each round scan every unchosen point
    // for the largest distance to the chosen set, ties by lowest index.
    let rows: [&[f64]; 7] = [&[0.0, 0.0], &[3.0, 0.0], &[0.0, 4.0], &[1.0, 1.0], &[5.0, 5.0], &[2.0, 3.0], &[4.0, 1.0]];
    let labeled_rows: [&[f64]; 1] = [&[1.0, 0.0]];
    let pool = dense(&rows);
    let lab = dense(&labeled_rows);
    let refs: Vec<&SparseVector> = pool.iter().collect();
    let lrefs: Vec<&SparseVector> = lab.iter().collect();
    let got = select_coreset(&refs, &lrefs, 4).selected;

    let mut centers: Vec<&[f64]> = labeled_rows.to_vec();
    let mut want = Vec::new();
    for _ in 0..4 {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, r) in rows.iter().enumerate() {
            if want.contains(&i) {
                continue;
            }
            let d = centers.iter().map(|c| sq(r, c)).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        want.push(best.1);
        centers.push(rows[best.1]);
    }
    assert_eq!(got, want);
}

fn ap_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let pos = labels.iter().filter(|y| y.is_malware()).count();
    let mut hits = 0;
    let mut sum = 0.0;
    for (r, &i) in order.iter().enumerate() {
        if labels[i].is_malware() {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / pos as f64
}

#[test]
fn eap_holdout_matches_retrain_and_score_loop() {
    use driftbench_core::active::eap_holdout_mask;
    let lab_x: Vec<f64> = (0..16).map(|i| i as f64 / 4.0 - 2.0).collect();
    let lab_y: Vec<Label> = (0..16).map(|i| Label::from_bool(i % 3 != 0 && i > 5)).collect();
    let pool_x = [-1.5, -0.25, 0.3, 1.1, 2.4];
    let lab = dense(&lab_x.iter().map(std::slice::from_ref).collect::<Vec<_>>());
    let pool = dense(&pool_x.iter().map(std::slice::from_ref).collect::<Vec<_>>());
    let labeled: Vec<(&SparseVector, Label)> = lab.iter().zip(lab_y.iter().copied()).collect();
    let refs: Vec<&SparseVector> = pool.iter().collect();
    let scores = [0.1, 0.35, 0.5, 0.8, 0.95];
    let train = TrainConfig::default();

    let mut seed = 0;
    let mask = loop {
        let m = eap_holdout_mask(labeled.len(), seed);
        let held: Vec<Label> = labeled.iter().zip(&m).filter(|(_, &h)| h).map(|(e, _)| e.1).collect();
        if held.iter().any(|y| y.is_malware()) && held.iter().any(|y| !y.is_malware()) {
            break m;
        }
        seed += 1;
    };
    let input = QueryInput {
        pool: &refs,
        scores: &scores,
        labeled: &labeled,
        train: &train,
    };
    let got = select_eap(&input, 2, 200, EapEval::Holdout, seed).unwrap();

    let fit: Vec<(&SparseVector, Label)> = labeled.iter().zip(&mask).filter(|(_, &h)| !h).map(|(e, _)| *e).collect();
    let ev: Vec<(&SparseVector, Label)> = labeled.iter().zip(&mask).filter(|(_, &h)| h).map(|(e, _)| *e).collect();
    let ev_y: Vec<Label> = ev.iter().map(|e| e.1).collect();
    for (i, x) in refs.iter().enumerate() {
        let mut ap = [0.0; 2];
        for (slot, y) in [Label::Goodware, Label::Malware].into_iter().enumerate() {
            let mut d = fit.clone();
            d.push((x, y));
            let m = detector::train(&d, &train).unwrap();
            let s: Vec<f64> = ev.iter().map(|(v, _)| m.score(v).unwrap()).collect();
            ap[slot] = ap_oracle(&s, &ev_y);
        }
        let want = (1.0 - scores[i]) * ap[0] + scores[i] * ap[1];
        assert_eq!(got.utilities[i], (i, want));
    }
}
