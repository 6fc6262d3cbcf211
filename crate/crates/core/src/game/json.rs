//! JSON forms of tabular games and credit assignments.
//!
//! Coalitions are keyed by their comma-separated sorted member indices, with
//! `""` for the empty set:
//!
//! ```json
//! {"n": 2, "values": {"": 0.0, "0": 1.0, "1": 2.0, "0,1": 3.0}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Coalition, CoalitionFamily, CoalitionGame, CreditAssignment, FamilyKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameJson {
    pub n: usize,
    pub values: BTreeMap<String, f64>,
}

impl GameJson {
    pub fn from_game(game: &CoalitionGame) -> Result<Self> {
        let table = game.table()?;
        let values = table
            .iter()
            .enumerate()
            .map(|(b, &v)| (Coalition::from_bits(b as u64).to_string(), v))
            .collect();
        Ok(GameJson { n: game.n(), values })
    }

    /// Parses keys and grounds the table. Every subset must be present.
    pub fn into_game(self) -> Result<CoalitionGame> {
        if self.n == 0 || self.n > super::MAX_EXACT_PLAYERS {
            return Err(Error::Config(format!(
                "player count {} outside supported range [1, {}]",
                self.n,
                super::MAX_EXACT_PLAYERS
            )));
        }
        let size = 1usize << self.n;
        let mut table = vec![None; size];
        for (k, v) in &self.values {
            let c: Coalition = k.parse()?;
            if c.span() > self.n {
                return Err(Error::Format(format!("coalition {k:?} exceeds n = {}", self.n)));
            }
            table[c.index()] = Some(*v);
        }
        let values = table
            .into_iter()
            .enumerate()
            .map(|(b, v)| {
                v.ok_or_else(|| {
                    Error::Format(format!(
                        "missing value for coalition {:?}",
                        Coalition::from_bits(b as u64).to_string()
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        CoalitionGame::from_table(self.n, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyJson {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub coalitions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditJson {
    pub n: usize,
    pub family: FamilyJson,
    pub values: BTreeMap<String, f64>,
}

impl From<&CreditAssignment> for CreditJson {
    fn from(c: &CreditAssignment) -> Self {
        let fam = c.family();
        let (kind, k) = match fam.kind() {
            FamilyKind::Singletons => ("singletons", None),
            FamilyKind::UpTo(k) => ("up_to", Some(k)),
            FamilyKind::CrossLinear => ("cross_linear", None),
            FamilyKind::Custom => ("custom", None),
        };
        CreditJson {
            n: fam.n(),
            family: FamilyJson {
                kind: kind.to_string(),
                k,
                coalitions: fam.coalitions().iter().map(|s| s.to_string()).collect(),
            },
            values: c.iter().map(|(s, v)| (s.to_string(), v)).collect(),
        }
    }
}

impl CreditJson {
    pub fn into_assignment(self) -> Result<CreditAssignment> {
        let coalitions = self
            .family
            .coalitions
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Coalition>>>()?;
        let family = match (self.family.kind.as_str(), self.family.k) {
            ("singletons", _) => CoalitionFamily::singletons(self.n)?,
            ("up_to", Some(k)) => CoalitionFamily::up_to(self.n, k)?,
            _ => CoalitionFamily::new(self.n, coalitions)?,
        };
        let credit = family
            .coalitions()
            .iter()
            .map(|s| {
                self.values
                    .get(&s.to_string())
                    .copied()
                    .ok_or_else(|| Error::Format(format!("missing credit for {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        CreditAssignment::new(family, credit)
    }
}
