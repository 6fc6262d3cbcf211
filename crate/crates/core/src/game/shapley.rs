use super::{binomial, harsanyi_dividends, Coalition, CoalitionFamily, CoalitionGame, CreditAssignment, DividendTable};
use crate::error::{Error, Result};

/// Shapley values from the permutation-weighted marginal-contribution sum.
pub fn shapley_direct(game: &CoalitionGame) -> Result<CreditAssignment> {
    let n = game.n();
    let v = game.table()?;
    // |T|! (n-|T|-1)! / n! == 1 / (n C(n-1, |T|))
    let weight: Vec<f64> = (0..n).map(|t| 1.0 / (n as f64 * binomial(n - 1, t))).collect();
    let phi = (0..n)
        .map(|i| {
            let bit = 1usize << i;
            (0..v.len())
                .filter(|t| t & bit == 0)
                .map(|t| weight[t.count_ones() as usize] * (v[t | bit] - v[t]))
                .sum()
        })
        .collect();
    CreditAssignment::new(CoalitionFamily::singletons(n)?, phi)
}

/// Shapley values by splitting each dividend evenly among its members.
pub fn shapley_from_dividends(dividends: &DividendTable) -> Result<CreditAssignment> {
    let n = dividends.n();
    let mut phi = vec![0.0; n];
    for (t, d) in dividends.iter() {
        let share = d / t.len() as f64;
        for i in t.members() {
            phi[i] += share;
        }
    }
    CreditAssignment::new(CoalitionFamily::singletons(n)?, phi)
}

/// Order-`k` Shapley-Taylor indices.
///
/// Coalitions smaller than `k` keep their own dividend; each size-`k`
/// coalition `S` receives `Σ_{T ⊇ S} d(T) / C(|T|, k)`, the sum including
/// `T = S` itself.
pub fn shapley_taylor_exact(game: &CoalitionGame, k: usize) -> Result<CreditAssignment> {
    let n = game.n();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("order {k} outside [1, {n}]")));
    }
    let d = harsanyi_dividends(game)?;
    let raw = d.as_slice();

    // superset-sum transform of the size-normalized dividends
    let mut top: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(t, &dv)| {
            let size = t.count_ones() as usize;
            if size >= k {
                dv / binomial(size, k)
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        let bit = 1usize << i;
        for s in 0..top.len() {
            if s & bit == 0 {
                top[s] += top[s | bit];
            }
        }
    }

    let family = CoalitionFamily::up_to(n, k)?;
    let credit = family
        .coalitions()
        .iter()
        .map(|s| if s.len() < k { raw[s.index()] } else { top[s.index()] })
        .collect();
    CreditAssignment::new(family, credit)
}

/// Distributes every dividend onto a coalition family.
///
/// A dividend `d(T)` goes entirely to `T` when `T` is in the family;
/// otherwise it is split evenly among the family members contained in `T`
/// that have the largest cardinality among such members.
pub fn project_dividends(dividends: &DividendTable, family: &CoalitionFamily) -> Result<CreditAssignment> {
    if family.n() != dividends.n() {
        return Err(Error::Argument(format!(
            "family over {} players, dividends over {}",
            family.n(),
            dividends.n()
        )));
    }
    // largest coalitions first so the first matching size is the recipient size
    let mut by_size: Vec<(usize, Coalition)> = family.coalitions().iter().enumerate().map(|(i, &c)| (i, c)).collect();
    by_size.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut credit = vec![0.0; family.len()];
    let mut recipients = Vec::new();
    for (t, d) in dividends.iter() {
        if d == 0.0 {
            continue;
        }
        if let Some(i) = family.position(t) {
            credit[i] += d;
            continue;
        }
        recipients.clear();
        let mut size = 0;
        for &(i, s) in &by_size {
            if !recipients.is_empty() && s.len() < size {
                break;
            }
            if s.is_subset_of(t) {
                size = s.len();
                recipients.push(i);
            }
        }
        // singletons guarantee at least one recipient for nonempty T
        let share = d / recipients.len() as f64;
        for &i in &recipients {
            credit[i] += share;
        }
    }
    CreditAssignment::new(family.clone(), credit)
}
