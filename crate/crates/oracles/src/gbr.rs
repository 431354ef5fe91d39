/// A split found by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub sse: f64,
    /// Rows sent left (`x <= threshold`), ascending.
    pub left: Vec<usize>,
}

fn sse(targets: &[f64], rows: &[usize]) -> f64 {
    let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / rows.len() as f64;
    rows.iter()
        .map(|&i| (targets[i] - mean) * (targets[i] - mean))
        .sum()
}

/// Tries every feature and every midpoint between consecutive distinct
/// values, recomputing both children's SSE from scratch. A later candidate
/// replaces the best only if it is lower by more than `tol * max(1, |best|)`,
/// so near-ties go to the lowest feature, then the lowest threshold.
#[allow(clippy::needless_range_loop)]
pub fn best_split(
    x: &[Vec<f64>],
    targets: &[f64],
    rows: &[usize],
    min_leaf: usize,
    tol: f64,
) -> Option<Split> {
    let p = x.first().map_or(0, Vec::len);
    let mut best: Option<Split> = None;
    for f in 0..p {
        let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] <= w[0]).collect();
            let right: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] > w[0]).collect();
            if left.len() < min_leaf.max(1) || right.len() < min_leaf.max(1) {
                continue;
            }
            let s = sse(targets, &left) + sse(targets, &right);
            let better = match &best {
                None => true,
                Some(b) => s < b.sse - tol * b.sse.abs().max(1.0),
            };
            if better {
                let mut left = left;
                left.sort_unstable();
                best = Some(Split {
                    feature: f,
                    threshold: t,
                    sse: s,
                    left,
                });
            }
        }
    }
    best
}
