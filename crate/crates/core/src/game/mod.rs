//! Exact cooperative-game computations on enumerable games.
//!
//! A [`CoalitionGame`] is always grounded (`v(∅) = 0`). Exact operations
//! tabulate the characteristic function over all `2^n` coalitions, so they are
//! limited to [`MAX_EXACT_PLAYERS`]; sampling estimators only ever call
//! [`CoalitionGame::value`] and accept up to [`MAX_PLAYERS`].

mod coalition;
mod credit;
mod dividends;
mod json;
mod shapley;

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

pub use coalition::{Coalition, Members, Subsets};
pub use credit::{cross_linear_family, CoalitionFamily, CreditAssignment, FamilyKind};
pub use dividends::{harsanyi_dividends, reconstruct_value, DividendTable};
pub use json::{CreditJson, GameJson};
pub use shapley::{project_dividends, shapley_direct, shapley_from_dividends, shapley_taylor_exact};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest player count for which dense `2^n` tables are built.
pub const MAX_EXACT_PLAYERS: usize = 24;

/// Largest player count representable by [`Coalition`].
pub const MAX_PLAYERS: usize = 64;

type Oracle = Arc<dyn Fn(Coalition) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Table(Arc<[f64]>),
    Oracle { f: Oracle, offset: f64 },
}

/// A grounded transferable-utility game.
#[derive(Clone)]
pub struct CoalitionGame {
    n: usize,
    repr: Repr,
}

/// Tabulates `raw` over all coalitions of `n` players and grounds it by
/// subtracting `raw(∅)`.
pub fn ground_game<F>(raw: F, n: usize) -> Result<CoalitionGame>
where
    F: Fn(Coalition) -> f64,
{
    check_exact(n)?;
    let values: Vec<f64> = (0..1u64 << n).map(|b| raw(Coalition::from_bits(b))).collect();
    CoalitionGame::from_table(n, values)
}

fn check_exact(n: usize) -> Result<()> {
    if n == 0 || n > MAX_EXACT_PLAYERS {
        return Err(Error::Config(format!(
            "player count {n} outside supported range [1, {MAX_EXACT_PLAYERS}]"
        )));
    }
    Ok(())
}

impl CoalitionGame {
    /// Builds a game from a dense table indexed by coalition bitmask.
    pub fn from_table(n: usize, mut values: Vec<f64>) -> Result<Self> {
        check_exact(n)?;
        if values.len() != 1 << n {
            return Err(Error::Argument(format!(
                "table for {n} players needs {} entries, got {}",
                1u64 << n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "v({}) = {}",
                Coalition::from_bits(i as u64),
                values[i]
            )));
        }
        let base = values[0];
        if base != 0.0 {
            values.iter_mut().for_each(|v| *v -= base);
        }
        Ok(CoalitionGame {
            n,
            repr: Repr::Table(values.into()),
        })
    }

    /// Wraps a lazily evaluated characteristic function. `raw(∅)` is evaluated
    /// once here and subtracted from every later value.
    pub fn from_oracle<F>(n: usize, raw: F) -> Result<Self>
    where
        F: Fn(Coalition) -> f64 + Send + Sync + 'static,
    {
        if n == 0 || n > MAX_PLAYERS {
            return Err(Error::Config(format!(
                "player count {n} outside supported range [1, {MAX_PLAYERS}]"
            )));
        }
        let offset = raw(Coalition::EMPTY);
        if !offset.is_finite() {
            return Err(Error::NonFinite(format!("v(∅) = {offset}")));
        }
        Ok(CoalitionGame {
            n,
            repr: Repr::Oracle {
                f: Arc::new(raw),
                offset,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grand(&self) -> Coalition {
        Coalition::grand(self.n)
    }

    pub fn value(&self, s: Coalition) -> f64 {
        debug_assert!(s.span() <= self.n, "{s:?} outside {} players", self.n);
        match &self.repr {
            Repr::Table(t) => t[s.index()],
            Repr::Oracle { f, offset } => {
                if s.is_empty() {
                    0.0
                } else {
                    f(s) - offset
                }
            }
        }
    }

    /// Raw value of the empty coalition removed by grounding (0 for tables).
    pub fn offset(&self) -> f64 {
        match &self.repr {
            Repr::Table(_) => 0.0,
            Repr::Oracle { offset, .. } => *offset,
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.repr, Repr::Table(_))
    }

    /// Dense value table, evaluating the oracle on every coalition if needed.
    pub fn table(&self) -> Result<Cow<'_, [f64]>> {
        match &self.repr {
            Repr::Table(t) => Ok(Cow::Borrowed(t)),
            Repr::Oracle { .. } => {
                if self.n > MAX_EXACT_PLAYERS {
                    return Err(Error::Capacity(format!(
                        "{} players needs a 2^{} table; exact operations stop at {MAX_EXACT_PLAYERS}",
                        self.n, self.n
                    )));
                }
                let values: Vec<f64> = (0..1u64 << self.n)
                    .into_par_iter()
                    .map(|b| self.value(Coalition::from_bits(b)))
                    .collect();
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "v({}) = {}",
                        Coalition::from_bits(i as u64),
                        values[i]
                    )));
                }
                Ok(Cow::Owned(values))
            }
        }
    }

    /// Evaluates the oracle everywhere and returns a table-backed copy.
    pub fn tabulate(&self) -> Result<CoalitionGame> {
        let t = self.table()?.into_owned();
        CoalitionGame::from_table(self.n, t)
    }

    /// Pointwise `alpha * self + beta * other` on tabular representations.
    pub fn combine(&self, alpha: f64, other: &CoalitionGame, beta: f64) -> Result<CoalitionGame> {
        if self.n != other.n {
            return Err(Error::Argument(format!(
                "cannot combine games with {} and {} players",
                self.n, other.n
            )));
        }
        let (a, b) = (self.table()?, other.table()?);
        let values = a.iter().zip(b.iter()).map(|(x, y)| alpha * x + beta * y).collect();
        CoalitionGame::from_table(self.n, values)
    }
}

impl fmt::Debug for CoalitionGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoalitionGame")
            .field("n", &self.n)
            .field("tabular", &self.is_tabular())
            .finish()
    }
}

/// `C(n, k)` in floating point; exact for every argument used by the crate.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// The three-player fixture game used across the unit tests.
#[cfg(test)]
pub(crate) fn g3() -> CoalitionGame {
    // players 0,1,2 stand for 1,2,3
    let v = [0.0, 1.0, 2.0, 4.0, 0.0, 1.0, 2.0, 6.0];
    CoalitionGame::from_table(3, v.to_vec()).unwrap()
}
