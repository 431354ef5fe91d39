#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Nominal,
    Ordinal,
    Interval,
}

fn pairable(units: &[Vec<Option<f64>>]) -> Vec<Vec<f64>> {
    units
        .iter()
        .map(|u| u.iter().flatten().copied().collect::<Vec<f64>>())
        .filter(|u| u.len() >= 2)
        .collect()
}

fn delta2(level: Level, a: f64, b: f64, all: &[f64]) -> f64 {
    match level {
        Level::Nominal => {
            if a == b {
                0.0
            } else {
                1.0
            }
        }
        Level::Interval => (a - b) * (a - b),
        Level::Ordinal => {
            if a == b {
                return 0.0;
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let count = |v: f64| all.iter().filter(|&&x| x == v).count() as f64;
            let between = all.iter().filter(|&&x| x >= lo && x <= hi).count() as f64;
            let d = between - (count(lo) + count(hi)) / 2.0;
            d * d
        }
    }
}

/// `1 - (n - 1) * sum_u sum_{i != j in u} d(i, j) / (m_u - 1) / sum_{i != j} d(i, j)`
/// with both sums over ordered pairs of pairable values. `None` when there
/// are no pairable values or no expected disagreement.
pub fn krippendorff_alpha(units: &[Vec<Option<f64>>], level: Level) -> Option<f64> {
    let units = pairable(units);
    let all: Vec<f64> = units.iter().flatten().copied().collect();
    let n = all.len();
    if n == 0 {
        return None;
    }
    let mut within = 0.0;
    for u in &units {
        let mut s = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j {
                    s += delta2(level, u[i], u[j], &all);
                }
            }
        }
        within += s / (u.len() - 1) as f64;
    }
    let mut between = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                between += delta2(level, all[i], all[j], &all);
            }
        }
    }
    if between == 0.0 {
        return None;
    }
    Some(1.0 - (n - 1) as f64 * within / between)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairs {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_x: u64,
    pub tied_y: u64,
    pub total: u64,
}

pub fn pairs(x: &[f64], y: &[f64]) -> Pairs {
    let mut p = Pairs {
        concordant: 0,
        discordant: 0,
        tied_x: 0,
        tied_y: 0,
        total: 0,
    };
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            p.total += 1;
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                p.tied_x += 1;
            }
            if dy == 0.0 {
                p.tied_y += 1;
            }
            if dx * dy > 0.0 {
                p.concordant += 1;
            } else if dx * dy < 0.0 {
                p.discordant += 1;
            }
        }
    }
    p
}

pub fn tau_a(x: &[f64], y: &[f64]) -> f64 {
    let p = pairs(x, y);
    (p.concordant as f64 - p.discordant as f64) / p.total as f64
}

pub fn tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let p = pairs(x, y);
    let d = ((p.total - p.tied_x) as f64 * (p.total - p.tied_y) as f64).sqrt();
    (d != 0.0).then(|| (p.concordant as f64 - p.discordant as f64) / d)
}

/// Rank of each value: one plus the number of smaller values plus half the
/// number of other equal values.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let units = vec![
            vec![Some(0.0), Some(0.0)],
            vec![Some(0.0), Some(1.0)],
            vec![Some(1.0), Some(1.0)],
        ];
        let a = krippendorff_alpha(&units, Level::Nominal).unwrap();
        assert!((a - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
