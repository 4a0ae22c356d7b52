//! Reference metric implementations for the acceptance gate, written as
//! plain brute-force loops with no shared code with the crate. Each takes
//! raw (probability, label) pairs so a disagreement can only mean one side
//! computed the metric differently.

/// Confidence of the predicted class under a binary probability.
fn confidence(p: f64) -> f64 {
    p.max(1.0 - p)
}

/// Whether thresholding p at 0.5 recovers the label.
fn correct(p: f64, y: u8) -> bool {
    u8::from(p >= 0.5) == y
}

/// ECE by explicit interval scan: build every fixed-width confidence bin
/// over [0.5, 1.0] as a (lower, upper) pair, assign each record by interval
/// membership, then sum weighted |accuracy - mean confidence| gaps.
pub fn brute_ece(pairs: &[(f64, u8)], bins: usize) -> f64 {
    let width = 0.5 / bins as f64;
    let mut groups: Vec<Vec<(f64, bool)>> = vec![Vec::new(); bins];
    for &(p, y) in pairs {
        let c = confidence(p);
        for m in 0..bins {
            let lower = 0.5 + m as f64 * width;
            let upper = lower + width;
            let inside = if m + 1 == bins {
                c >= lower
            } else {
                c >= lower && c < upper
            };
            if inside {
                groups[m].push((c, correct(p, y)));
                break;
            }
        }
    }
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for group in &groups {
        if group.is_empty() {
            continue;
        }
        let k = group.len() as f64;
        let acc = group.iter().filter(|(_, ok)| *ok).count() as f64 / k;
        let conf = group.iter().map(|(c, _)| c).sum::<f64>() / k;
        total += (k / n) * (acc - conf).abs();
    }
    total
}

/// Adaptive ECE by explicit grouping: stable-sort ascending by confidence,
/// hand one extra record to each of the first (n mod bins) groups, then sum
/// the weighted gaps group by group.
pub fn brute_aece(pairs: &[(f64, u8)], bins: usize) -> f64 {
    let mut sorted: Vec<(f64, bool)> = pairs.iter().map(|&(p, y)| (confidence(p), correct(p, y))).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = sorted.len();
    let mut sizes = vec![n / bins; bins];
    for size in sizes.iter_mut().take(n % bins) {
        *size += 1;
    }

    let mut total = 0.0;
    let mut cursor = 0usize;
    for &size in &sizes {
        let group = &sorted[cursor..cursor + size];
        cursor += size;
        let k = size as f64;
        let acc = group.iter().filter(|(_, ok)| *ok).count() as f64 / k;
        let conf = group.iter().map(|(c, _)| c).sum::<f64>() / k;
        total += (k / n as f64) * (acc - conf).abs();
    }
    total
}

/// AUROC by exhaustive pairwise comparison: over every (positive, negative)
/// pair, credit 1 when the positive scores higher, 1/2 on a tie.
pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0usize;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

/// Prints the gate's verdict line for one criterion and panics on failure
/// so the line and the test outcome always agree.
pub fn check(name: &str, ok: bool, detail: String) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("[{verdict}] {name}: {detail}");
    assert!(ok, "{name}: {detail}");
}
