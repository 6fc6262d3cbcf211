use std::collections::HashMap;

use super::{Coalition, MAX_PLAYERS};
use crate::error::{Error, Result};

/// How a family was constructed; carried into serialized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Singletons,
    UpTo(usize),
    CrossLinear,
    Custom,
}

/// The set of coalitions that may receive credit.
///
/// Always contains every singleton, so every dividend has a destination.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionFamily {
    n: usize,
    kind: FamilyKind,
    members: Vec<Coalition>,
    index: HashMap<Coalition, usize>,
}

impl CoalitionFamily {
    pub fn new(n: usize, coalitions: Vec<Coalition>) -> Result<Self> {
        Self::with_kind(n, coalitions, FamilyKind::Custom)
    }

    fn with_kind(n: usize, mut coalitions: Vec<Coalition>, kind: FamilyKind) -> Result<Self> {
        if n == 0 || n > MAX_PLAYERS {
            return Err(Error::Config(format!("player count {n} out of range")));
        }
        coalitions.sort();
        for w in coalitions.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Argument(format!("duplicate coalition {:?}", w[0])));
            }
        }
        let grand = Coalition::grand(n);
        for c in &coalitions {
            if c.is_empty() {
                return Err(Error::Argument("the empty coalition cannot receive credit".into()));
            }
            if !c.is_subset_of(grand) {
                return Err(Error::Argument(format!("{c:?} has members outside 0..{n}")));
            }
        }
        let index: HashMap<Coalition, usize> = coalitions.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        if let Some(i) = (0..n).find(|&i| !index.contains_key(&Coalition::singleton(i))) {
            return Err(Error::Argument(format!(
                "family is missing singleton {{{i}}}; its dividends would be orphaned"
            )));
        }
        Ok(CoalitionFamily {
            n,
            kind,
            members: coalitions,
            index,
        })
    }

    pub fn singletons(n: usize) -> Result<Self> {
        Self::with_kind(n, (0..n).map(Coalition::singleton).collect(), FamilyKind::Singletons)
    }

    /// All nonempty coalitions with at most `k` members.
    pub fn up_to(n: usize, k: usize) -> Result<Self> {
        if n > super::MAX_EXACT_PLAYERS && k > 2 {
            return Err(Error::Capacity(format!("order-{k} family over {n} players")));
        }
        let mut out = Vec::new();
        grow(n, k, 0, Coalition::EMPTY, &mut out);
        Self::with_kind(n, out, FamilyKind::UpTo(k))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, c: Coalition) -> bool {
        self.index.contains_key(&c)
    }

    pub fn position(&self, c: Coalition) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Members in canonical order.
    pub fn coalitions(&self) -> &[Coalition] {
        &self.members
    }
}

fn grow(n: usize, k: usize, start: usize, cur: Coalition, out: &mut Vec<Coalition>) {
    if cur.len() == k {
        return;
    }
    for i in start..n {
        let next = cur.with(i);
        out.push(next);
        grow(n, k, i + 1, next, out);
    }
}

/// Singletons plus every query-retrieved pair; no intra-image pairs.
///
/// The two player sets must be disjoint, nonempty, and together cover
/// `0..n` where `n` is their combined size.
pub fn cross_linear_family(query: Coalition, retrieved: Coalition) -> Result<CoalitionFamily> {
    if query.is_empty() || retrieved.is_empty() {
        return Err(Error::Argument("both player sets must be nonempty".into()));
    }
    if !query.is_disjoint(retrieved) {
        return Err(Error::Argument(format!(
            "player sets overlap on {:?}",
            query.intersection(retrieved)
        )));
    }
    let all = query.union(retrieved);
    let n = all.len();
    if all != Coalition::grand(n) {
        return Err(Error::Argument(format!(
            "players {all:?} are not the contiguous range 0..{n}"
        )));
    }
    let mut out: Vec<Coalition> = all.members().map(Coalition::singleton).collect();
    for q in query.members() {
        for r in retrieved.members() {
            out.push(Coalition::pair(q, r));
        }
    }
    CoalitionFamily::with_kind(n, out, FamilyKind::CrossLinear)
}

/// Real-valued credit for each coalition of a family.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditAssignment {
    family: CoalitionFamily,
    credit: Vec<f64>,
}

impl CreditAssignment {
    pub fn new(family: CoalitionFamily, credit: Vec<f64>) -> Result<Self> {
        if credit.len() != family.len() {
            return Err(Error::Argument(format!(
                "{} credits for a family of {}",
                credit.len(),
                family.len()
            )));
        }
        Ok(CreditAssignment { family, credit })
    }

    pub fn family(&self) -> &CoalitionFamily {
        &self.family
    }

    pub fn get(&self, c: Coalition) -> Option<f64> {
        self.family.position(c).map(|i| self.credit[i])
    }

    /// Credit of the singleton `{i}`.
    pub fn player(&self, i: usize) -> f64 {
        self.get(Coalition::singleton(i))
            .expect("families contain all singletons")
    }

    /// Singleton credits in player order.
    pub fn players(&self) -> Vec<f64> {
        (0..self.family.n()).map(|i| self.player(i)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.credit
    }

    pub fn total(&self) -> f64 {
        self.credit.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coalition, f64)> + '_ {
        self.family
            .coalitions()
            .iter()
            .copied()
            .zip(self.credit.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn up_to_counts() {
        assert_eq!(CoalitionFamily::up_to(5, 2).unwrap().len(), 5 + 10);
        assert_eq!(CoalitionFamily::up_to(4, 4).unwrap().len(), 15);
        assert_eq!(CoalitionFamily::singletons(3).unwrap().len(), 3);
    }

    #[test]
    fn family_validation() {
        let missing = CoalitionFamily::new(3, vec![Coalition::singleton(0), Coalition::singleton(1)]);
        assert!(matches!(missing, Err(Error::Argument(_))));
        let dup = CoalitionFamily::new(1, vec![Coalition::singleton(0), Coalition::singleton(0)]);
        assert!(matches!(dup, Err(Error::Argument(_))));
        let outside = CoalitionFamily::new(1, vec![Coalition::singleton(0), Coalition::pair(0, 3)]);
        assert!(matches!(outside, Err(Error::Argument(_))));
    }

    #[test]
    fn cross_linear_shapes() {
        let f = cross_linear_family(Coalition::from_members([0, 1]), Coalition::singleton(2)).unwrap();
        let shown: Vec<String> = f.coalitions().iter().map(|c| c.to_string()).collect();
        assert_eq!(shown, ["0", "1", "2", "0,2", "1,2"]);

        let f = cross_linear_family(Coalition::singleton(0), Coalition::singleton(1)).unwrap();
        assert_eq!(f.len(), 3);

        let f = cross_linear_family(Coalition::from_members([0, 1, 2]), Coalition::from_members([3, 4])).unwrap();
        assert_eq!(f.len(), 11);
        assert!(!f.contains(Coalition::pair(0, 1)));
        assert!(!f.contains(Coalition::pair(3, 4)));
    }

    #[test]
    fn cross_linear_rejects_overlap() {
        let r = cross_linear_family(Coalition::from_members([0, 1]), Coalition::from_members([1, 2]));
        assert!(matches!(r, Err(Error::Argument(_))));
        let r = cross_linear_family(Coalition::EMPTY, Coalition::singleton(0));
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
