use std::collections::{BTreeMap, BTreeSet};

/// Length of the longest common subsequence by trying every subsequence of
/// the shorter side. Exponential; for short inputs only.
pub fn lcs_exhaustive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 20, "too long for subset enumeration");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let mut k = 0;
        let mut ok = true;
        for (i, x) in short.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            while k < long.len() && long[k] != *x {
                k += 1;
            }
            if k == long.len() {
                ok = false;
                break;
            }
            k += 1;
        }
        if ok {
            best = len;
        }
    }
    best
}

/// Full `(m + 1) x (n + 1)` LCS table.
pub fn lcs_table<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else if t[i - 1][j] >= t[i][j - 1] {
                t[i - 1][j]
            } else {
                t[i][j - 1]
            };
        }
    }
    t[a.len()][b.len()]
}

/// Every sequence over `0..alphabet` of length at most `max_len`, shortest
/// first, then lexicographic.
pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Calls `visit(b, lcs(a, b))` for every `b` over `0..alphabet` with
/// length at most `max_len`, extending one LCS table column per trie node.
pub fn lcs_against_all(
    a: &[u8],
    alphabet: u8,
    max_len: usize,
    visit: &mut dyn FnMut(&[u8], usize),
) {
    fn walk(
        a: &[u8],
        alphabet: u8,
        max_len: usize,
        b: &mut Vec<u8>,
        cols: &mut [Vec<usize>],
        visit: &mut dyn FnMut(&[u8], usize),
    ) {
        let depth = b.len();
        visit(b, cols[depth][a.len()]);
        if depth == max_len {
            return;
        }
        for c in 0..alphabet {
            let (done, rest) = cols.split_at_mut(depth + 1);
            let (prev, col) = (&done[depth], &mut rest[0]);
            for i in 1..=a.len() {
                col[i] = if a[i - 1] == c {
                    prev[i - 1] + 1
                } else {
                    prev[i].max(col[i - 1])
                };
            }
            b.push(c);
            walk(a, alphabet, max_len, b, cols, visit);
            b.pop();
        }
    }
    let mut cols = vec![vec![0usize; a.len() + 1]; max_len + 1];
    walk(
        a,
        alphabet,
        max_len,
        &mut Vec::with_capacity(max_len),
        &mut cols,
        visit,
    );
}

/// ROUGE-L F-measure of one candidate/reference pair from an LCS length.
pub fn rouge_f(lcs: usize, cand_len: usize, ref_len: usize, beta: f64) -> f64 {
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    (1.0 + beta * beta) * p * r / (r + beta * beta * p)
}

fn count_occurrences(seq: &[String], gram: &[String]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len())
        .filter(|&i| seq[i..i + gram.len()] == *gram)
        .count()
}

/// Sentence BLEU-4 by direct clipped counting: each distinct candidate
/// n-gram contributes `min(count in candidate, max count in any reference)`.
/// Zero higher-order matches are replaced by `epsilon`; no unigram match
/// gives 0.
pub fn bleu4(cand: &[String], refs: &[Vec<String>], epsilon: f64) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=4 {
        let total = cand.len().saturating_sub(n - 1);
        let mut seen: Vec<&[String]> = Vec::new();
        let mut matched = 0;
        if total > 0 {
            for i in 0..total {
                let g = &cand[i..i + n];
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let c = count_occurrences(cand, g);
                let r = refs
                    .iter()
                    .map(|r| count_occurrences(r, g))
                    .max()
                    .unwrap_or(0);
                matched += c.min(r);
            }
        }
        if n == 1 && matched == 0 {
            return 0.0;
        }
        let m = if matched == 0 {
            epsilon
        } else {
            matched as f64
        };
        log_p += (m / total.max(1) as f64).ln();
    }
    let c = cand.len() as f64;
    let mut best: Option<usize> = None;
    for r in refs {
        let better = match best {
            None => true,
            Some(b) => {
                let (dr, db) = (r.len().abs_diff(cand.len()), b.abs_diff(cand.len()));
                dr < db || (dr == db && r.len() < b)
            }
        };
        if better {
            best = Some(r.len());
        }
    }
    let r = best.unwrap_or(0) as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * (log_p / 4.0).exp()).min(1.0)
}

/// Best alignment under the staged METEOR preference: most exact matches,
/// then most matches overall (exact or stem), then fewest chunks.
/// Returns `(matches, chunks)`. Exhaustive over all one-to-one alignments.
pub fn meteor_alignment(
    cand: &[String],
    reference: &[String],
    stem: &dyn Fn(&str) -> String,
) -> (usize, usize) {
    let cs: Vec<String> = cand.iter().map(|t| stem(t)).collect();
    let rs: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    let mut best = (0usize, 0usize, usize::MAX);
    let mut assign: Vec<Option<usize>> = vec![None; cand.len()];
    let mut used = vec![false; reference.len()];
    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        cand: &[String],
        reference: &[String],
        cs: &[String],
        rs: &[String],
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut (usize, usize, usize),
    ) {
        if i == cand.len() {
            let pairs: Vec<(usize, usize)> = assign
                .iter()
                .enumerate()
                .filter_map(|(i, j)| j.map(|j| (i, j)))
                .collect();
            let exact = pairs
                .iter()
                .filter(|&&(i, j)| cand[i] == reference[j])
                .count();
            let m = pairs.len();
            let chunks = if m == 0 {
                0
            } else {
                1 + pairs
                    .windows(2)
                    .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
                    .count()
            };
            let key = (exact, m, chunks);
            if key.0 > best.0
                || (key.0 == best.0 && (key.1 > best.1 || (key.1 == best.1 && key.2 < best.2)))
            {
                *best = key;
            }
            return;
        }
        rec(i + 1, cand, reference, cs, rs, assign, used, best);
        for j in 0..reference.len() {
            if !used[j] && (cand[i] == reference[j] || cs[i] == rs[j]) {
                used[j] = true;
                assign[i] = Some(j);
                rec(i + 1, cand, reference, cs, rs, assign, used, best);
                assign[i] = None;
                used[j] = false;
            }
        }
    }
    rec(
        0,
        cand,
        reference,
        &cs,
        &rs,
        &mut assign,
        &mut used,
        &mut best,
    );
    (best.1, if best.1 == 0 { 0 } else { best.2 })
}

pub fn meteor_score(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand_len as f64;
    let r = matches as f64 / ref_len as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - 0.5 * (chunks as f64 / matches as f64).powi(3))
}

/// One image for CIDEr: already-stemmed candidate and references.
#[derive(Debug, Clone)]
pub struct CiderDoc {
    pub image_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

fn grams(seq: &[String], n: usize) -> Vec<Vec<String>> {
    if seq.len() < n {
        return Vec::new();
    }
    (0..=seq.len() - n)
        .map(|i| seq[i..i + n].to_vec())
        .collect()
}

/// Base CIDEr over pre-stemmed tokens: tf-idf vectors with document
/// frequency over distinct images' reference sets, cosine averaged over
/// references and n = 1..4, times 10.
pub fn cider(docs: &[CiderDoc]) -> Vec<f64> {
    let mut ref_sets: BTreeMap<&str, &Vec<Vec<String>>> = BTreeMap::new();
    for d in docs {
        ref_sets.entry(d.image_id.as_str()).or_insert(&d.references);
    }
    let n_docs = ref_sets.len() as f64;
    let df = |g: &Vec<String>| -> f64 {
        ref_sets
            .values()
            .filter(|refs| refs.iter().any(|r| grams(r, g.len()).contains(g)))
            .count() as f64
    };
    let vector = |seq: &[String], n: usize| -> BTreeMap<Vec<String>, f64> {
        let mut v = BTreeMap::new();
        let all = grams(seq, n);
        let distinct: BTreeSet<&Vec<String>> = all.iter().collect();
        for g in distinct {
            let tf = all.iter().filter(|x| *x == g).count() as f64;
            v.insert(g.clone(), tf * (n_docs.ln() - df(g).max(1.0).ln()));
        }
        v
    };
    docs.iter()
        .map(|d| {
            let mut total = 0.0;
            for n in 1..=4 {
                let cv = vector(&d.candidate, n);
                let mut s = 0.0;
                for r in &d.references {
                    let rv = vector(r, n);
                    let dot: f64 = cv
                        .iter()
                        .map(|(g, a)| a * rv.get(g).copied().unwrap_or(0.0))
                        .sum();
                    let na: f64 = cv.values().map(|a| a * a).sum::<f64>().sqrt();
                    let nb: f64 = rv.values().map(|b| b * b).sum::<f64>().sqrt();
                    if na > 0.0 && nb > 0.0 {
                        s += dot / (na * nb);
                    }
                }
                total += s / d.references.len() as f64;
            }
            10.0 * total / 4.0
        })
        .collect()
}
