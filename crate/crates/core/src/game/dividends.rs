use super::{Coalition, CoalitionGame};
use crate::error::Result;

/// Harsanyi dividends (Möbius coefficients) of a game, indexed by bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct DividendTable {
    n: usize,
    d: Vec<f64>,
}

impl DividendTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: Coalition) -> f64 {
        self.d[s.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    /// Nonzero-size coalitions paired with their dividend, in bitmask order.
    pub fn iter(&self) -> impl Iterator<Item = (Coalition, f64)> + '_ {
        self.d
            .iter()
            .enumerate()
            .skip(1)
            .map(|(b, &d)| (Coalition::from_bits(b as u64), d))
    }
}

/// Möbius inversion of the characteristic function.
///
/// Uses the in-place subset transform, one pass per player. The result obeys
/// `d(S) = v(S) - Σ_{T ⊊ S} d(T)` exactly in exact arithmetic.
pub fn harsanyi_dividends(game: &CoalitionGame) -> Result<DividendTable> {
    let n = game.n();
    let mut d = game.table()?.into_owned();
    for i in 0..n {
        let bit = 1usize << i;
        for s in 0..d.len() {
            if s & bit != 0 {
                d[s] -= d[s ^ bit];
            }
        }
    }
    d[0] = 0.0;
    Ok(DividendTable { n, d })
}

/// `Σ_{T ⊆ S} d(T)`, computed by direct submask enumeration.
pub fn reconstruct_value(dividends: &DividendTable, s: Coalition) -> f64 {
    debug_assert!(s.span() <= dividends.n);
    s.subsets().map(|t| dividends.get(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{g3, ground_game};

    /// Independent oracle: the size-ordered recursion written out literally.
    fn brute_force(game: &CoalitionGame) -> Vec<f64> {
        let n = game.n();
        let mut order: Vec<u64> = (0..1u64 << n).collect();
        order.sort_by_key(|b| b.count_ones());
        let mut d = vec![0.0; 1 << n];
        for &s in &order[1..] {
            let s = Coalition::from_bits(s);
            let lower: f64 = s.subsets().filter(|&t| t != s).map(|t| d[t.index()]).sum();
            d[s.index()] = game.value(s) - lower;
        }
        d
    }

    #[test]
    fn g3_dividends() {
        let d = harsanyi_dividends(&g3()).unwrap();
        let expected = brute_force(&g3());
        assert_eq!(expected, vec![0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        for (a, b) in d.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_and_unanimity() {
        let w = [1.0, 2.0];
        let add = ground_game(|s| s.members().map(|i| w[i]).sum(), 2).unwrap();
        let d = harsanyi_dividends(&add).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 1.0, 2.0, 0.0]);

        let un = ground_game(|s| if s.len() == 3 { 1.0 } else { 0.0 }, 3).unwrap();
        let d = harsanyi_dividends(&un).unwrap();
        for (s, v) in d.iter() {
            assert_eq!(v, if s.len() == 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn reconstruction() {
        let d = harsanyi_dividends(&g3()).unwrap();
        assert_eq!(reconstruct_value(&d, Coalition::pair(0, 1)), 4.0);
        assert_eq!(reconstruct_value(&d, Coalition::EMPTY), 0.0);
        let add = ground_game(|s| s.members().map(|i| [1.0, 2.0][i]).sum(), 2).unwrap();
        let d = harsanyi_dividends(&add).unwrap();
        assert_eq!(reconstruct_value(&d, Coalition::pair(0, 1)), 3.0);
    }

    #[test]
    fn fast_transform_matches_recursion() {
        let g = ground_game(|s| ((s.bits() * 2654435761) % 97) as f64 / 7.0, 7).unwrap();
        let d = harsanyi_dividends(&g).unwrap();
        for (a, b) in d.as_slice().iter().zip(brute_force(&g)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
