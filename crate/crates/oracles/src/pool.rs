use std::collections::HashSet;

/// `(overlap, precision, recall)` from plain set operations, or `None` when
/// either set is empty.
pub fn precision_recall(
    candidate: &[String],
    pool_sources: &[Vec<String>],
) -> Option<(usize, f64, f64)> {
    let cand: HashSet<&String> = candidate.iter().collect();
    let pool: HashSet<&String> = pool_sources.iter().flatten().collect();
    if cand.is_empty() || pool.is_empty() {
        return None;
    }
    let r = cand.intersection(&pool).count();
    Some((
        r,
        r as f64 / cand.len() as f64,
        r as f64 / pool.len() as f64,
    ))
}
