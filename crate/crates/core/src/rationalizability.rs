//! Scoring candidate agreements by value and perceived honoring likelihood.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::Agreement;
use crate::equilibrium::{
    conditioned_joint_distribution, conditioned_joint_distribution_cached, EquilibriumConfig, JointOutcome,
    ValueFunction,
};
use crate::error::{Error, Result};
use crate::game::Play;
use crate::ids::{Power, UnitId};
use crate::intent::{filter_view, ActionDistribution, HypergameView, IntentBackend};
use crate::map::MapGraph;
use crate::order::legal_orders;
use crate::seed::rng_from_seed;
use crate::state::GameState;

/// `sum_a Pr(a) V_p(T(s, a))` over a conditioned distribution.
pub fn expected_value(
    map: &MapGraph,
    outcomes: &[JointOutcome],
    value_fn: &ValueFunction,
    perspective: &Power,
) -> Result<f64> {
    let mut total = 0.0;
    for o in outcomes {
        total += o.probability * value_fn.value_of(map, &o.successor, perspective)?;
    }
    Ok(total)
}

/// Expected next-state value of `perspective` when both parties honor.
pub fn agreement_value(
    map: &MapGraph,
    state: &GameState,
    agreement: &Agreement,
    value_fn: &ValueFunction,
    config: &EquilibriumConfig,
    seed: u64,
    perspective: &Power,
) -> Result<f64> {
    check_perspective(agreement, perspective)?;
    let outcomes = conditioned_joint_distribution(map, state, agreement, value_fn, config, seed)?;
    expected_value(map, &outcomes, value_fn, perspective)
}

fn check_perspective(agreement: &Agreement, p: &Power) -> Result<()> {
    if *p != agreement.power_i && *p != agreement.power_j {
        return Err(Error::validation(
            "perspective",
            format!("{p} is not a party to the agreement"),
        ));
    }
    Ok(())
}

/// Mass the dialogue-conditioned intent of `of` puts on its pledged order.
pub fn perceived_value(
    map: &MapGraph,
    view: &HypergameView,
    backend: &IntentBackend,
    agreement: &Agreement,
    of: &Power,
) -> Result<f64> {
    check_perspective(agreement, of)?;
    let (unit, order) = if *of == agreement.power_j {
        (&agreement.u2, &agreement.a2)
    } else {
        (&agreement.u1, &agreement.a1)
    };
    let d = backend.distribution(map, view, of, unit, true)?;
    Ok(d.prob(order).clamp(0.0, 1.0))
}

/// How raw agreement values become the `v_hat` factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueNormalization {
    /// Values are used as they are; they already lie in [0, 1].
    #[default]
    Raw,
    /// Min-max within the candidate set, constant sets mapping to 1.
    MinMax,
}

impl ValueNormalization {
    pub fn apply(self, values: &[f64]) -> Vec<f64> {
        match self {
            ValueNormalization::Raw => values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ValueNormalization::MinMax => min_max(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub equilibrium: EquilibriumConfig,
    pub normalization: ValueNormalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAgreement {
    pub agreement: Agreement,
    pub notation: (String, String),
    pub v_i: f64,
    pub v_j: f64,
    pub v_hat_i: f64,
    pub v_hat_j: f64,
    /// Honoring likelihood of `power_j` as seen by `power_i`.
    pub b_ji: f64,
    pub b_ij: f64,
    pub wt_i: f64,
    pub wt_j: f64,
    pub wt: f64,
    /// `wt` min-max normalized within the candidate set.
    pub wt_norm: f64,
    pub rank: usize,
}

/// Min-max normalization; a constant set maps to 1.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    // NaN spans land here too
    if span.is_nan() || span <= 1e-12 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// `wt_i`, `wt_j`, `wt` from the four factors.
pub fn compose(v_hat_i: f64, b_ji: f64, v_hat_j: f64, b_ij: f64) -> (f64, f64, f64) {
    let wt_i = v_hat_i * b_ji;
    let wt_j = v_hat_j * b_ij;
    (wt_i, wt_j, wt_i * wt_j)
}

/// Sorts by descending `score`, ties by ascending notation, and returns the
/// permutation.
pub fn rank_order(scores: &[f64], notations: &[(String, String)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| notations[a].cmp(&notations[b]))
    });
    idx
}

/// Raw values `(v_i, v_j)` for every candidate. All candidates share one
/// seed so that their conditioned distributions differ only through the
/// pledged orders.
pub fn candidate_values(
    map: &MapGraph,
    state: &GameState,
    candidates: &[Agreement],
    value_fn: &ValueFunction,
    config: &EquilibriumConfig,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let cache = config.proposal.cache(map, state)?;
    candidates
        .par_iter()
        .map(|a| {
            let outcomes = conditioned_joint_distribution_cached(map, state, a, value_fn, config, seed, Some(&cache))?;
            Ok((
                expected_value(map, &outcomes, value_fn, &a.power_i)?,
                expected_value(map, &outcomes, value_fn, &a.power_j)?,
            ))
        })
        .collect()
}

fn check_set(map: &MapGraph, state: &GameState, candidates: &[Agreement]) -> Result<()> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Precondition("no candidate agreements".into()))?;
    for a in candidates {
        if a.round != first.round || a.power_i != first.power_i || a.power_j != first.power_j {
            return Err(Error::validation(
                "candidates",
                "all candidates must share the round and the ordered pair",
            ));
        }
        if a.round != state.round {
            return Err(Error::validation(
                "candidates",
                format!("agreement for round {} scored at round {}", a.round, state.round),
            ));
        }
        a.validate(map, state)?;
    }
    Ok(())
}

/// Scores and ranks a candidate set against the last state of `play`.
pub fn score_agreement_set(
    map: &MapGraph,
    play: &Play,
    candidates: &[Agreement],
    value_fn: &ValueFunction,
    backend: &IntentBackend,
    config: &ScoringConfig,
    seed: u64,
) -> Result<Vec<ScoredAgreement>> {
    let state = play.last_state()?;
    check_set(map, state, candidates)?;
    let values = candidate_values(map, state, candidates, value_fn, &config.equilibrium, seed)?;
    let first = &candidates[0];
    let view = filter_view(map, play, &first.power_i, &first.power_j)?;
    let mut intents: BTreeMap<UnitId, ActionDistribution> = BTreeMap::new();
    for a in candidates {
        for (unit, power) in [(&a.u1, &a.power_i), (&a.u2, &a.power_j)] {
            if !intents.contains_key(unit) {
                let d = backend.distribution(map, &view, power, unit, true)?;
                intents.insert(unit.clone(), d);
            }
        }
    }
    let v_i: Vec<f64> = values.iter().map(|v| v.0).collect();
    let v_j: Vec<f64> = values.iter().map(|v| v.1).collect();
    score_from_parts(state, candidates, &v_i, &v_j, config.normalization, |a| {
        (intents[&a.u2].prob(&a.a2), intents[&a.u1].prob(&a.a1))
    })
}

/// Composes and ranks given raw values and honoring likelihoods.
pub fn score_from_parts(
    state: &GameState,
    candidates: &[Agreement],
    v_i: &[f64],
    v_j: &[f64],
    normalization: ValueNormalization,
    beliefs: impl Fn(&Agreement) -> (f64, f64),
) -> Result<Vec<ScoredAgreement>> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidate agreements".into()));
    }
    if v_i.len() != candidates.len() || v_j.len() != candidates.len() {
        return Err(Error::Precondition("one value per candidate expected".into()));
    }
    let hat_i = normalization.apply(v_i);
    let hat_j = normalization.apply(v_j);
    let mut out = Vec::with_capacity(candidates.len());
    for (n, a) in candidates.iter().enumerate() {
        let (b_ji, b_ij) = beliefs(a);
        let (b_ji, b_ij) = (b_ji.clamp(0.0, 1.0), b_ij.clamp(0.0, 1.0));
        let (wt_i, wt_j, wt) = compose(hat_i[n], b_ji, hat_j[n], b_ij);
        out.push(ScoredAgreement {
            agreement: a.clone(),
            notation: a.notation(state)?,
            v_i: v_i[n],
            v_j: v_j[n],
            v_hat_i: hat_i[n],
            v_hat_j: hat_j[n],
            b_ji,
            b_ij,
            wt_i,
            wt_j,
            wt,
            wt_norm: 0.0,
            rank: 0,
        });
    }
    let scores: Vec<f64> = out.iter().map(|s| s.wt).collect();
    for (s, n) in out.iter_mut().zip(min_max(&scores)) {
        s.wt_norm = n;
    }
    let notations: Vec<(String, String)> = out.iter().map(|s| s.notation.clone()).collect();
    let order = rank_order(&scores, &notations);
    let mut ranked: Vec<ScoredAgreement> = order.into_iter().map(|i| out[i].clone()).collect();
    for (r, s) in ranked.iter_mut().enumerate() {
        s.rank = r;
    }
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alternatives {
    /// The original agreement first, then the sampled alternatives.
    pub universe: Vec<Agreement>,
    /// Fewer than the requested number of alternatives existed.
    pub exhausted: bool,
}

/// Up to `k` agreements differing from `agreement` in `a1`, `a2` or both.
pub fn sample_alternatives(
    map: &MapGraph,
    state: &GameState,
    agreement: &Agreement,
    k: usize,
    seed: u64,
) -> Result<Alternatives> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    agreement.validate(map, state)?;
    let l1 = legal_orders(map, state, &agreement.u1)?;
    let l2 = legal_orders(map, state, &agreement.u2)?;
    let mut pool: Vec<Agreement> = Vec::new();
    for o1 in &l1 {
        for o2 in &l2 {
            if *o1 == agreement.a1 && *o2 == agreement.a2 {
                continue;
            }
            pool.push(Agreement {
                a1: o1.clone(),
                a2: o2.clone(),
                ..agreement.clone()
            });
        }
    }
    let exhausted = pool.len() < k;
    let mut rng = rng_from_seed(seed);
    let picked: Vec<Agreement> = pool.choose_multiple(&mut rng, k.min(pool.len())).cloned().collect();
    let mut universe = vec![agreement.clone()];
    universe.extend(picked);
    Ok(Alternatives { universe, exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_examples() {
        assert_eq!(compose(0.8, 0.5, 1.0, 1.0), (0.4, 1.0, 0.4));
        assert_eq!(compose(0.0, 0.7, 0.9, 0.9).2, 0.0);
    }

    #[test]
    fn min_max_edges() {
        assert_eq!(min_max(&[0.3, 0.3]), vec![1.0, 1.0]);
        assert_eq!(min_max(&[1.0, 2.0, 3.0]), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn rank_ties_break_on_notation() {
        let n = vec![("b".to_string(), "x".to_string()), ("a".to_string(), "y".to_string())];
        assert_eq!(rank_order(&[0.5, 0.5], &n), vec![1, 0]);
        assert_eq!(rank_order(&[0.6, 0.5], &n), vec![0, 1]);
    }
}
