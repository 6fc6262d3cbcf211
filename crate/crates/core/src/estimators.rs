//! Regression and sampling estimators of Shapley values and order-2
//! Shapley-Taylor indices, plus the random-game convergence benchmark.
//!
//! Kernel estimators draw coalition sizes with probability proportional to
//! the total kernel mass at that size, then a uniform subset of that size, so
//! every draw carries the same regression weight. Repeated draws of the same
//! coalition are merged (their weights add) and do not consume budget; once
//! the budget covers every non-anchor coalition the estimators switch to full
//! enumeration with the exact kernel weights. `∅`, `N` and, for the
//! second-order kernel, all singletons are equality constraints eliminated
//! from the regression.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{binomial, shapley_taylor_exact, Coalition, CoalitionFamily, CoalitionGame, CreditAssignment};
use crate::regression::NormalEquations;
use crate::rng::{derive_seed, seeded, Rng};

/// Most distinct coalitions a full enumeration may visit.
const MAX_ENUMERATION: f64 = (1u64 << 24) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Characteristic-function evaluations, anchors included.
    pub budget: usize,
    pub seed: u64,
    pub l1_penalty: f64,
    pub include_anchors: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            budget: 2048,
            seed: 0,
            l1_penalty: 0.0,
            include_anchors: true,
        }
    }
}

impl EstimatorConfig {
    pub fn with_budget(budget: usize, seed: u64) -> Self {
        EstimatorConfig {
            budget,
            seed,
            ..Default::default()
        }
    }
}

/// One evaluated coalition with its merged regression weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub coalition: Coalition,
    pub value: f64,
    pub weight: f64,
}

/// Kernel SHAP weight `(n-1) / (C(n,s) s (n-s))`; infinite at `s ∈ {0, n}`.
pub fn shapley_kernel_weight(n: usize, s: usize) -> Result<f64> {
    if n == 0 || s > n {
        return Err(Error::Argument(format!("size {s} invalid for {n} players")));
    }
    if s == 0 || s == n {
        return Ok(f64::INFINITY);
    }
    Ok((n - 1) as f64 / (binomial(n, s) * s as f64 * (n - s) as f64))
}

/// Second-order Shapley-Taylor kernel `(n-1) / (C(n,s) C(s,2) (n-s))`;
/// infinite for `s < 2` and `s = n`.
pub fn shapley_taylor_kernel_weight(n: usize, s: usize) -> Result<f64> {
    if n == 0 || s > n {
        return Err(Error::Argument(format!("size {s} invalid for {n} players")));
    }
    if s < 2 || s == n {
        return Ok(f64::INFINITY);
    }
    Ok((n - 1) as f64 / (binomial(n, s) * binomial(s, 2) * (n - s) as f64))
}

type Kernel = fn(usize, usize) -> Result<f64>;

/// Picks up to `distinct` coalitions with sizes in `sizes`.
fn draw_coalitions(
    n: usize,
    sizes: RangeInclusive<usize>,
    kernel: Kernel,
    distinct: usize,
    rng: &mut Rng,
) -> Result<Vec<(Coalition, f64)>> {
    let sizes: Vec<usize> = sizes.collect();
    if sizes.is_empty() || distinct == 0 {
        return Ok(Vec::new());
    }
    let available: f64 = sizes.iter().map(|&s| binomial(n, s)).sum();
    if distinct as f64 >= available && available <= MAX_ENUMERATION {
        let mut out = Vec::with_capacity(available as usize);
        for &s in &sizes {
            let w = kernel(n, s)?;
            for_each_subset_of_size(n, s, |c| out.push((c, w)));
        }
        return Ok(out);
    }

    let mass = sizes
        .iter()
        .map(|&s| Ok(kernel(n, s)? * binomial(n, s)))
        .collect::<Result<Vec<f64>>>()?;
    let size_dist = WeightedIndex::new(&mass).map_err(|e| Error::Estimation(format!("bad size distribution: {e}")))?;
    let mut order: Vec<Coalition> = Vec::with_capacity(distinct);
    let mut counts: HashMap<Coalition, f64> = HashMap::with_capacity(distinct);
    let max_draws = distinct.saturating_mul(1000).max(100_000);
    for _ in 0..max_draws {
        if order.len() == distinct {
            break;
        }
        let s = sizes[size_dist.sample(rng)];
        let c = Coalition::from_members(rand::seq::index::sample(rng, n, s));
        *counts.entry(c).or_insert_with(|| {
            order.push(c);
            0.0
        }) += 1.0;
    }
    Ok(order.into_iter().map(|c| (c, counts[&c])).collect())
}

fn for_each_subset_of_size(n: usize, s: usize, mut f: impl FnMut(Coalition)) {
    fn rec(n: usize, left: usize, start: usize, cur: Coalition, f: &mut dyn FnMut(Coalition)) {
        if left == 0 {
            f(cur);
            return;
        }
        for i in start..=n - left {
            rec(n, left - 1, i + 1, cur.with(i), f);
        }
    }
    rec(n, s, 0, Coalition::EMPTY, &mut f);
}

/// Evaluates the game on every drawn coalition, in parallel, ordered by draw.
fn evaluate(game: &CoalitionGame, draws: Vec<(Coalition, f64)>) -> Result<Vec<SampleRecord>> {
    let records: Vec<SampleRecord> = draws
        .into_par_iter()
        .map(|(c, w)| SampleRecord {
            coalition: c,
            value: game.value(c),
            weight: w,
        })
        .collect();
    if let Some(r) = records.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::NonFinite(format!("v({}) = {}", r.coalition, r.value)));
    }
    Ok(records)
}

fn finite(value: f64, what: Coalition) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("v({what}) = {value}")))
    }
}

fn fit(eq: &NormalEquations, config: &EstimatorConfig, penalized: &[bool]) -> Result<Vec<f64>> {
    if config.l1_penalty > 0.0 {
        eq.solve_lasso(config.l1_penalty, penalized, 1e-8)
    } else {
        eq.solve()
    }
}

/// Kernel SHAP: weighted least-squares fit of an additive model.
pub fn kernel_shap_estimate(game: &CoalitionGame, config: &EstimatorConfig) -> Result<CreditAssignment> {
    let n = game.n();
    let family = CoalitionFamily::singletons(n)?;
    let grand = game.grand();
    if n == 1 {
        let v = finite(game.value(grand), grand)?;
        return CreditAssignment::new(family, vec![v]);
    }
    let mut rng = seeded(config.seed);

    if !config.include_anchors {
        let min = n + 1;
        if config.budget < min && config.l1_penalty == 0.0 {
            return Err(budget_error("kernel SHAP without anchors", config.budget, min));
        }
        let draws = draw_coalitions(n, 1..=n - 1, shapley_kernel_weight, config.budget, &mut rng)?;
        let samples = evaluate(game, draws)?;
        let mut eq = NormalEquations::new(n + 1);
        let mut x = vec![0.0; n + 1];
        for r in &samples {
            x[0] = 1.0;
            for (i, xi) in x[1..].iter_mut().enumerate() {
                *xi = if r.coalition.contains(i) { 1.0 } else { 0.0 };
            }
            eq.add(&x, r.value, r.weight);
        }
        let mut penalized = vec![true; n + 1];
        penalized[0] = false;
        let a = fit(&eq, config, &penalized)?;
        return CreditAssignment::new(family, a[1..].to_vec());
    }

    let min = n + 2;
    if config.budget < min && config.l1_penalty == 0.0 {
        return Err(budget_error("kernel SHAP", config.budget, min));
    }
    // anchors: v(∅) = 0 is known, v(N) costs one evaluation
    let total = finite(game.value(grand), grand)?;
    let distinct = config.budget.saturating_sub(2);
    let draws = draw_coalitions(n, 1..=n - 1, shapley_kernel_weight, distinct, &mut rng)?;
    let samples = evaluate(game, draws)?;

    // eliminate the last player through Σ a_i = v(N)
    let last = n - 1;
    let mut eq = NormalEquations::new(n - 1);
    let mut x = vec![0.0; n - 1];
    for r in &samples {
        let tail = if r.coalition.contains(last) { 1.0 } else { 0.0 };
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = if r.coalition.contains(i) { 1.0 } else { 0.0 } - tail;
        }
        eq.add(&x, r.value - tail * total, r.weight);
    }
    let mut a = fit(&eq, config, &vec![true; n - 1])?;
    let rest: f64 = a.iter().sum();
    a.push(total - rest);
    CreditAssignment::new(family, a)
}

/// Index of the pair `{i, j}` (`i < j`) in the canonical pair order of `n` players.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Order-2 Shapley-Taylor indices from a single bilinear regression weighted
/// by the second-order kernel.
pub fn shapley_taylor_kernel_estimate(game: &CoalitionGame, config: &EstimatorConfig) -> Result<CreditAssignment> {
    let n = game.n();
    if n < 2 {
        return Err(Error::Argument(format!(
            "order-2 indices need at least 2 players, got {n}"
        )));
    }
    if !config.include_anchors {
        return Err(Error::Config(
            "the second-order kernel is infinite at sizes 0, 1 and n; anchors are required".into(),
        ));
    }
    let pairs = n * (n - 1) / 2;
    let min = 1 + n + pairs;
    if config.budget < min && config.l1_penalty == 0.0 {
        return Err(budget_error("Shapley-Taylor kernel estimation", config.budget, min));
    }
    let grand = game.grand();
    let total = finite(game.value(grand), grand)?;
    let unary = (0..n)
        .map(|i| finite(game.value(Coalition::singleton(i)), Coalition::singleton(i)))
        .collect::<Result<Vec<f64>>>()?;
    let target = total - unary.iter().sum::<f64>();

    let mut rng = seeded(config.seed);
    let distinct = config.budget.saturating_sub(n + 2);
    let draws = draw_coalitions(n, 2..=n - 1, shapley_taylor_kernel_weight, distinct, &mut rng)?;
    let samples = evaluate(game, draws)?;

    // eliminate the last pair through Σ a_ij = v(N) - Σ v({i})
    let free = pairs - 1;
    let (li, lj) = (n - 2, n - 1);
    let mut eq = NormalEquations::new(free);
    let mut x = vec![0.0; free];
    let mut members = Vec::with_capacity(n);
    for r in &samples {
        members.clear();
        members.extend(r.coalition.members());
        let tail = if r.coalition.contains(li) && r.coalition.contains(lj) {
            1.0
        } else {
            0.0
        };
        x.iter_mut().for_each(|v| *v = -tail);
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                let p = pair_index(n, i, j);
                if p < free {
                    x[p] += 1.0;
                }
            }
        }
        let residual = r.value - members.iter().map(|&i| unary[i]).sum::<f64>() - tail * target;
        eq.add(&x, residual, r.weight);
    }
    let mut pair_credit = if free == 0 {
        Vec::new()
    } else {
        fit(&eq, config, &vec![true; free])?
    };
    let rest: f64 = pair_credit.iter().sum();
    pair_credit.push(target - rest);

    let family = CoalitionFamily::up_to(n, 2)?;
    let credit = family
        .coalitions()
        .iter()
        .map(|c| {
            let m: Vec<usize> = c.members().collect();
            match m.as_slice() {
                [i] => unary[*i],
                [i, j] => pair_credit[pair_index(n, *i, *j)],
                _ => unreachable!("order-2 family"),
            }
        })
        .collect();
    CreditAssignment::new(family, credit)
}

/// Monte-Carlo Shapley-Taylor estimation from discrete derivatives.
///
/// Singletons are exact (`v({i})`, one evaluation each). The remaining budget
/// is spent four evaluations at a time on `δ_{ij} v(T) = v(T∪ij) − v(T∪i) −
/// v(T∪j) + v(T)`, visiting pairs round-robin, each pair with its own RNG
/// stream. `T` is the set of players preceding the pair in a uniformly random
/// permutation. Pairs the budget never reaches are reported as 0.
pub fn shapley_taylor_sampling_baseline(
    game: &CoalitionGame,
    k: usize,
    config: &EstimatorConfig,
) -> Result<CreditAssignment> {
    let n = game.n();
    if k != 2 {
        return Err(Error::Argument(format!(
            "sampling baseline supports order 2 only, got {k}"
        )));
    }
    if n < 2 {
        return Err(Error::Argument(format!(
            "order-2 indices need at least 2 players, got {n}"
        )));
    }
    let min = n + 4;
    if config.budget < min {
        return Err(budget_error("Shapley-Taylor sampling", config.budget, min));
    }
    let unary = (0..n)
        .map(|i| finite(game.value(Coalition::singleton(i)), Coalition::singleton(i)))
        .collect::<Result<Vec<f64>>>()?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let draws = (config.budget - n) / 4;

    // P(|T| = t) ∝ n - 1 - t for t in 0..=n-2
    let size_weights: Vec<f64> = (0..n - 1).map(|t| (n - 1 - t) as f64).collect();
    let size_dist = WeightedIndex::new(&size_weights).expect("positive weights");

    let estimates: Vec<f64> = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(i, j))| {
            let count = draws / pairs.len() + usize::from(p < draws % pairs.len());
            if count == 0 {
                return Ok(0.0);
            }
            let mut rng = seeded(derive_seed(config.seed, &[p as u64]));
            let others: Vec<usize> = (0..n).filter(|&x| x != i && x != j).collect();
            let mut sum = 0.0;
            for _ in 0..count {
                let t = size_dist.sample(&mut rng);
                let picks = rand::seq::index::sample(&mut rng, others.len(), t);
                let base = Coalition::from_members(picks.into_iter().map(|x| others[x]));
                let d = game.value(base.with(i).with(j)) - game.value(base.with(i)) - game.value(base.with(j))
                    + game.value(base);
                sum += finite(d, base)?;
            }
            Ok(sum / count as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let family = CoalitionFamily::up_to(n, 2)?;
    let credit = family
        .coalitions()
        .iter()
        .map(|c| {
            let m: Vec<usize> = c.members().collect();
            match m.as_slice() {
                [i] => unary[*i],
                [i, j] => estimates[pair_index(n, *i, *j)],
                _ => unreachable!("order-2 family"),
            }
        })
        .collect();
    CreditAssignment::new(family, credit)
}

fn budget_error(what: &str, budget: usize, min: usize) -> Error {
    Error::Estimation(format!(
        "{what} needs a budget of at least {min} evaluations, got {budget}"
    ))
}

/// A game whose value on each coalition is an integer drawn uniformly from
/// `0..=10`, then grounded.
pub fn random_boolean_game(n: usize, seed: u64) -> Result<CoalitionGame> {
    if n == 0 || n > 16 {
        return Err(Error::Config(format!("random games support 1..=16 players, got {n}")));
    }
    let mut rng = seeded(seed);
    let values = (0..1usize << n).map(|_| rng.gen_range(0..=10) as f64).collect();
    CoalitionGame::from_table(n, values)
}

/// Estimator identifiers used in convergence output.
pub const KERNEL: &str = "kernel";
pub const SAMPLING: &str = "sampling";

/// Per-budget error of one estimator, aggregated over trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCurve {
    pub estimator: String,
    pub evaluations: Vec<usize>,
    /// Mean over successful trials; NaN where every trial failed.
    pub mse: Vec<f64>,
    pub median_mse: Vec<f64>,
    /// Trials that returned an error at each budget.
    pub failures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub estimator: String,
    pub budget: usize,
    pub trial: usize,
    /// `None` when the estimator rejected the budget or could not fit.
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub curves: Vec<ConvergenceCurve>,
    pub records: Vec<TrialRecord>,
}

impl ConvergenceReport {
    pub fn curve(&self, estimator: &str) -> Option<&ConvergenceCurve> {
        self.curves.iter().find(|c| c.estimator == estimator)
    }

    /// CSV with header `estimator,budget,trial,mse`; failed points are `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,budget,trial,mse\n");
        for r in &self.records {
            let mse = r.mse.map_or_else(|| "NaN".to_string(), |m| format!("{m:e}"));
            let _ = writeln!(out, "{},{},{},{}", r.estimator, r.budget, r.trial, mse);
        }
        out
    }
}

fn mse(estimate: &CreditAssignment, exact: &CreditAssignment) -> f64 {
    let sq: f64 = estimate
        .values()
        .iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sq / exact.values().len() as f64
}

/// Mean and median MSE of both order-2 estimators against brute-force
/// Shapley-Taylor indices on random Boolean games. Each trial draws one game
/// and evaluates every budget on it.
pub fn convergence_experiment(n: usize, budgets: &[usize], trials: usize, seed: u64) -> Result<ConvergenceReport> {
    if !(2..=12).contains(&n) {
        return Err(Error::Config(format!(
            "convergence runs need 2..=12 players for an exact reference, got {n}"
        )));
    }
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "budgets must be nonempty and strictly increasing, got {budgets:?}"
        )));
    }
    let per_trial: Vec<Vec<(Option<f64>, Option<f64>)>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let game = random_boolean_game(n, derive_seed(seed, &[trial as u64, 0]))?;
            let exact = shapley_taylor_exact(&game, 2)?;
            Ok(budgets
                .iter()
                .enumerate()
                .map(|(b, &budget)| {
                    let cfg = |stream: u64| {
                        EstimatorConfig::with_budget(budget, derive_seed(seed, &[trial as u64, 1 + stream, b as u64]))
                    };
                    let kernel = shapley_taylor_kernel_estimate(&game, &cfg(0))
                        .ok()
                        .map(|e| mse(&e, &exact));
                    let sampling = shapley_taylor_sampling_baseline(&game, 2, &cfg(1))
                        .ok()
                        .map(|e| mse(&e, &exact));
                    (kernel, sampling)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut curves = Vec::new();
    for (which, name) in [(0, KERNEL), (1, SAMPLING)] {
        let mut curve = ConvergenceCurve {
            estimator: name.to_string(),
            evaluations: budgets.to_vec(),
            mse: Vec::new(),
            median_mse: Vec::new(),
            failures: Vec::new(),
        };
        for (b, &budget) in budgets.iter().enumerate() {
            let mut ok = Vec::new();
            for (trial, row) in per_trial.iter().enumerate() {
                let m = if which == 0 { row[b].0 } else { row[b].1 };
                records.push(TrialRecord {
                    estimator: name.to_string(),
                    budget,
                    trial,
                    mse: m,
                });
                ok.extend(m);
            }
            curve.failures.push(trials - ok.len());
            curve.mse.push(if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            });
            curve.median_mse.push(median(&mut ok));
        }
        curves.push(curve);
    }
    Ok(ConvergenceReport {
        n,
        trials,
        seed,
        curves,
        records,
    })
}

/// Median of a slice (NaN when empty); sorts in place.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{g3, ground_game, shapley_direct};

    fn full(n: usize) -> EstimatorConfig {
        EstimatorConfig::with_budget(1 << n, 3)
    }

    #[test]
    fn shapley_kernel_values() {
        assert!((shapley_kernel_weight(4, 2).unwrap() - 0.125).abs() < 1e-15);
        assert!((shapley_kernel_weight(2, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(shapley_kernel_weight(4, 0).unwrap().is_infinite());
        assert!(shapley_kernel_weight(4, 4).unwrap().is_infinite());
        assert!(shapley_kernel_weight(4, 5).is_err());
    }

    #[test]
    fn shapley_taylor_kernel_values() {
        let w = |n, s| shapley_taylor_kernel_weight(n, s).unwrap();
        assert!((w(8, 2) - 1.0 / 24.0).abs() < 1e-15);
        assert!((w(8, 7) - 1.0 / 24.0).abs() < 1e-15);
        assert!((w(4, 2) - 0.25).abs() < 1e-15);
        assert!(w(8, 1).is_infinite());
        assert!(w(8, 8).is_infinite());
    }

    #[test]
    fn kernel_weights_positive_and_symmetric() {
        for n in 2..=20 {
            for s in 1..n {
                let a = shapley_kernel_weight(n, s).unwrap();
                assert!(a > 0.0 && a.is_finite());
                let b = shapley_kernel_weight(n, n - s).unwrap();
                assert!((a - b).abs() <= 1e-15 * a);
            }
            // the second-order kernel mirrors s <-> n + 1 - s
            for s in 2..n {
                let a = shapley_taylor_kernel_weight(n, s).unwrap();
                assert!(a > 0.0 && a.is_finite());
                let b = shapley_taylor_kernel_weight(n, n + 1 - s).unwrap();
                assert!((a - b).abs() <= 1e-12 * a, "n={n} s={s}");
            }
        }
    }

    #[test]
    fn kernel_shap_full_enumeration_matches_exact() {
        let est = kernel_shap_estimate(&g3(), &full(3)).unwrap();
        let expected = [13.0 / 6.0, 19.0 / 6.0, 2.0 / 3.0];
        for i in 0..3 {
            assert!((est.player(i) - expected[i]).abs() < 1e-9);
        }
        for seed in 0..5 {
            let g = random_boolean_game(7, seed).unwrap();
            let est = kernel_shap_estimate(&g, &full(7)).unwrap();
            let exact = shapley_direct(&g).unwrap();
            for i in 0..7 {
                assert!((est.player(i) - exact.player(i)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn kernel_shap_additive_and_zero() {
        let w = [0.5, -1.5, 2.0, 3.25, 0.0];
        let add = ground_game(|s| s.members().map(|i| w[i]).sum(), 5).unwrap();
        for budget in [7, 12, 40] {
            let est = kernel_shap_estimate(&add, &EstimatorConfig::with_budget(budget, 11)).unwrap();
            for i in 0..5 {
                assert!((est.player(i) - w[i]).abs() < 1e-9, "budget {budget}");
            }
        }
        let zero = ground_game(|_| 0.0, 4).unwrap();
        let est = kernel_shap_estimate(&zero, &full(4)).unwrap();
        assert!(est.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn kernel_shap_budget_checked() {
        let r = kernel_shap_estimate(&g3(), &EstimatorConfig::with_budget(4, 0));
        assert!(matches!(r, Err(Error::Estimation(_))));
    }

    #[test]
    fn kernel_shap_without_anchors_on_additive_game() {
        let w = [1.0, 2.0, -3.0, 0.5];
        let add = ground_game(|s| s.members().map(|i| w[i]).sum(), 4).unwrap();
        let cfg = EstimatorConfig {
            include_anchors: false,
            ..full(4)
        };
        let est = kernel_shap_estimate(&add, &cfg).unwrap();
        for i in 0..4 {
            assert!((est.player(i) - w[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn shapley_taylor_kernel_full_enumeration() {
        let est = shapley_taylor_kernel_estimate(&g3(), &full(3)).unwrap();
        let exact = shapley_taylor_exact(&g3(), 2).unwrap();
        for (a, b) in est.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        for seed in 0..5 {
            let g = random_boolean_game(8, seed).unwrap();
            let est = shapley_taylor_kernel_estimate(&g, &full(8)).unwrap();
            let exact = shapley_taylor_exact(&g, 2).unwrap();
            for (a, b) in est.values().iter().zip(exact.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shapley_taylor_kernel_additive_pairs_vanish() {
        let add = ground_game(|s| s.members().map(|i| 1.0 + i as f64).sum(), 6).unwrap();
        let est = shapley_taylor_kernel_estimate(&add, &EstimatorConfig::with_budget(40, 1)).unwrap();
        for (c, v) in est.iter() {
            if c.len() == 2 {
                assert!(v.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shapley_taylor_kernel_guards() {
        let g = random_boolean_game(5, 0).unwrap();
        let low = EstimatorConfig::with_budget(10, 0);
        assert!(matches!(
            shapley_taylor_kernel_estimate(&g, &low),
            Err(Error::Estimation(_))
        ));
        let no_anchor = EstimatorConfig {
            include_anchors: false,
            ..full(5)
        };
        assert!(matches!(
            shapley_taylor_kernel_estimate(&g, &no_anchor),
            Err(Error::Config(_))
        ));
        let one = random_boolean_game(1, 0).unwrap();
        assert!(shapley_taylor_kernel_estimate(&one, &full(1)).is_err());
    }

    #[test]
    fn penalized_fit_runs() {
        let g = random_boolean_game(6, 2).unwrap();
        let cfg = EstimatorConfig {
            l1_penalty: 1e-3,
            ..EstimatorConfig::with_budget(30, 2)
        };
        let est = shapley_taylor_kernel_estimate(&g, &cfg).unwrap();
        assert!((est.total() - g.value(g.grand())).abs() < 1e-9);
        let est = kernel_shap_estimate(&g, &cfg).unwrap();
        assert!((est.total() - g.value(g.grand())).abs() < 1e-9);
    }

    #[test]
    fn estimators_are_deterministic() {
        let g = random_boolean_game(8, 4).unwrap();
        let cfg = EstimatorConfig::with_budget(100, 9);
        assert_eq!(
            shapley_taylor_kernel_estimate(&g, &cfg).unwrap(),
            shapley_taylor_kernel_estimate(&g, &cfg).unwrap()
        );
        assert_eq!(
            shapley_taylor_sampling_baseline(&g, 2, &cfg).unwrap(),
            shapley_taylor_sampling_baseline(&g, 2, &cfg).unwrap()
        );
        assert_eq!(
            kernel_shap_estimate(&g, &cfg).unwrap(),
            kernel_shap_estimate(&g, &cfg).unwrap()
        );
    }

    #[test]
    fn sampling_baseline_converges_on_g3() {
        let est = shapley_taylor_sampling_baseline(&g3(), 2, &EstimatorConfig::with_budget(10_000, 5)).unwrap();
        let exact = shapley_taylor_exact(&g3(), 2).unwrap();
        for (a, b) in est.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn sampling_baseline_additive_and_guards() {
        let add = ground_game(|s| s.members().map(|i| i as f64).sum(), 5).unwrap();
        let est = shapley_taylor_sampling_baseline(&add, 2, &EstimatorConfig::with_budget(500, 0)).unwrap();
        assert!(est.iter().filter(|(c, _)| c.len() == 2).all(|(_, v)| v.abs() < 1e-12));
        assert!(shapley_taylor_sampling_baseline(&add, 3, &full(5)).is_err());
        let low = EstimatorConfig::with_budget(8, 0);
        assert!(matches!(
            shapley_taylor_sampling_baseline(&add, 2, &low),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn random_games() {
        let g = random_boolean_game(8, 1).unwrap();
        let t = g.table().unwrap();
        assert_eq!(t.len(), 256);
        assert!(t.iter().all(|&v| (-10.0..=10.0).contains(&v) && v.fract() == 0.0));
        assert_eq!(t, random_boolean_game(8, 1).unwrap().table().unwrap());
        let one = random_boolean_game(1, 3).unwrap();
        assert!((-10.0..=10.0).contains(&one.value(Coalition::singleton(0))));
        assert!(random_boolean_game(17, 0).is_err());
    }

    #[test]
    fn convergence_small_run() {
        let r = convergence_experiment(5, &[20, 32], 3, 4).unwrap();
        assert_eq!(r.records.len(), 2 * 2 * 3);
        let k = r.curve(KERNEL).unwrap();
        assert_eq!(k.evaluations, vec![20, 32]);
        // 32 = 2^5 covers every coalition
        assert!(k.mse[1] <= 1e-12);
        assert_eq!(r.to_csv(), convergence_experiment(5, &[20, 32], 3, 4).unwrap().to_csv());
        assert!(r.to_csv().starts_with("estimator,budget,trial,mse\n"));
    }

    #[test]
    fn convergence_rejects_bad_setup() {
        assert!(convergence_experiment(13, &[64], 1, 0).is_err());
        assert!(convergence_experiment(8, &[128, 64], 1, 0).is_err());
        assert!(convergence_experiment(8, &[64], 0, 0).is_err());
    }

    #[test]
    fn pair_indexing() {
        let n = 6;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(pair_index(n, i, j), k);
                k += 1;
            }
        }
    }
}
