//! Candidate sampling, regret matching on matrix subgames, DORA-style value
//! bootstrapping and the agreement-conditioned joint-action distribution.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjudicate::adjudicate;
use crate::coalition::Agreement;
use crate::error::{Error, Result};
use crate::ids::{Power, UnitId};
use crate::intent::{ActionDistribution, HeuristicParams};
use crate::map::{MapGraph, UNREACHABLE};
use crate::mentions::MentionSet;
use crate::order::{check_legal, JointAction, Order};
use crate::seed::{derive_seed, derive_seed_str, rng_from_seed};
use crate::state::{reward, GameState};

/// Orders for every unit of one power.
pub type Assignment = BTreeMap<UnitId, Order>;

/// Per-unit proposal over legal orders, scored without dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyProposal {
    pub params: HeuristicParams,
}

impl PolicyProposal {
    pub fn distribution(&self, map: &MapGraph, state: &GameState, unit: &UnitId) -> Result<ActionDistribution> {
        self.params.distribution(map, state, unit, &MentionSet::new())
    }

    /// Most likely order for every unit of `power`.
    pub fn modal(&self, map: &MapGraph, state: &GameState, power: &Power) -> Result<Assignment> {
        state
            .units_of(power)
            .map(|(id, _)| Ok((id.clone(), self.distribution(map, state, id)?.top_action().0.clone())))
            .collect()
    }

    /// Distributions of every unit on the board, for repeated use at one state.
    pub fn cache(&self, map: &MapGraph, state: &GameState) -> Result<ProposalCache> {
        let dists = state
            .units
            .keys()
            .map(|id| Ok((id.clone(), self.distribution(map, state, id)?)))
            .collect::<Result<_>>()?;
        Ok(ProposalCache {
            state_key: state.key(),
            dists,
        })
    }
}

/// Proposal distributions of all units at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalCache {
    state_key: String,
    dists: BTreeMap<UnitId, ActionDistribution>,
}

impl ProposalCache {
    fn check(&self, state: &GameState) -> Result<()> {
        if self.state_key != state.key() {
            return Err(Error::Precondition("proposal cache built for another state".into()));
        }
        Ok(())
    }

    fn get(&self, unit: &UnitId) -> Result<&ActionDistribution> {
        self.dists.get(unit).ok_or_else(|| Error::UnknownUnit(unit.clone()))
    }

    pub fn modal(&self, state: &GameState, power: &Power) -> Result<Assignment> {
        state
            .units_of(power)
            .map(|(id, _)| Ok((id.clone(), self.get(id)?.top_action().0.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    /// Candidates kept per participating power.
    pub k: usize,
    /// Proposal draws before deduplication.
    pub samples: usize,
    pub iters: usize,
    pub gamma: f64,
    pub beta: f64,
    /// Step size of the normalized gradient step on linear weights.
    pub learning_rate: f64,
    pub proposal: PolicyProposal,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            k: 8,
            samples: 256,
            iters: 2000,
            gamma: 0.99,
            beta: 0.1,
            learning_rate: 1.0,
            proposal: PolicyProposal::default(),
        }
    }
}

impl EquilibriumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k", "must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::validation("samples", "must be at least 1"));
        }
        if self.iters == 0 {
            return Err(Error::validation("iters", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::validation("gamma", "must lie in [0, 1]"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::validation("beta", "must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

fn assignment_key(state: &GameState, a: &Assignment) -> Result<String> {
    let mut s = String::new();
    for (id, o) in a {
        s.push_str(&o.notation(id, state)?);
        s.push(';');
    }
    Ok(s)
}

/// Up to `k` distinct assignments for `power`, most likely first.
///
/// Draws `samples` assignments unit by unit from the proposal (or enumerates
/// the full product when it is no larger), deduplicates and keeps the top
/// `k` by likelihood. The modal assignment is always kept; for `k >= 2` the
/// all-hold assignment is too. Pinned units play their pinned order in every
/// candidate.
#[allow(clippy::too_many_arguments)]
pub fn sample_candidates(
    map: &MapGraph,
    state: &GameState,
    power: &Power,
    k: usize,
    samples: usize,
    proposal: &PolicyProposal,
    seed: u64,
    pins: &Assignment,
) -> Result<Vec<Assignment>> {
    let mut own = BTreeMap::new();
    for (id, _) in state.units_of(power) {
        if !pins.contains_key(id) {
            own.insert(id.clone(), proposal.distribution(map, state, id)?);
        }
    }
    let cache = ProposalCache {
        state_key: state.key(),
        dists: own,
    };
    sample_candidates_cached(map, state, power, k, samples, &cache, seed, pins)
}

/// [`sample_candidates`] reusing precomputed proposal distributions.
#[allow(clippy::too_many_arguments)]
pub fn sample_candidates_cached(
    map: &MapGraph,
    state: &GameState,
    power: &Power,
    k: usize,
    samples: usize,
    cache: &ProposalCache,
    seed: u64,
    pins: &Assignment,
) -> Result<Vec<Assignment>> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    cache.check(state)?;
    let units: Vec<UnitId> = state.units_of(power).map(|(id, _)| id.clone()).collect();
    for (id, order) in pins {
        if state.unit(id)?.power == *power {
            check_legal(map, state, id, order)?;
        }
    }
    let mut dists: Vec<Vec<(Order, f64)>> = Vec::with_capacity(units.len());
    for id in &units {
        match pins.get(id) {
            Some(o) => dists.push(vec![(o.clone(), 1.0)]),
            None => dists.push(cache.get(id)?.support().to_vec()),
        }
    }
    let log_lik = |choice: &[usize]| -> f64 {
        choice
            .iter()
            .zip(&dists)
            .map(|(&c, d)| d[c].1.max(f64::MIN_POSITIVE).ln())
            .sum()
    };
    let build = |choice: &[usize]| -> Assignment {
        units
            .iter()
            .zip(choice)
            .zip(&dists)
            .map(|((id, &c), d)| (id.clone(), d[c].0.clone()))
            .collect()
    };

    let mut pool: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let modal: Vec<usize> = dists
        .iter()
        .map(|d| {
            let mut best = 0;
            for (i, (_, p)) in d.iter().enumerate() {
                if *p > d[best].1 {
                    best = i;
                }
            }
            best
        })
        .collect();
    pool.insert(modal.clone(), log_lik(&modal));

    let product = dists.iter().try_fold(1usize, |acc, d| acc.checked_mul(d.len()));
    match product {
        Some(n) if n <= samples => {
            let mut choice = vec![0usize; dists.len()];
            for _ in 0..n {
                pool.insert(choice.clone(), log_lik(&choice));
                for (pos, d) in choice.iter_mut().zip(&dists).rev() {
                    *pos += 1;
                    if *pos < d.len() {
                        break;
                    }
                    *pos = 0;
                }
            }
        }
        _ => {
            let mut rng = rng_from_seed(seed);
            let samplers: Vec<WeightedIndex<f64>> = dists
                .iter()
                .map(|d| WeightedIndex::new(d.iter().map(|(_, p)| *p)))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Precondition(format!("proposal weights: {e}")))?;
            for _ in 0..samples {
                let choice: Vec<usize> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
                let ll = log_lik(&choice);
                pool.insert(choice, ll);
            }
        }
    }

    let mut ranked: Vec<(f64, String, Assignment)> = Vec::with_capacity(pool.len());
    for (choice, ll) in &pool {
        let a = build(choice);
        ranked.push((*ll, assignment_key(state, &a)?, a));
    }
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
    let modal_a = build(&modal);
    let mut out: Vec<Assignment> = vec![modal_a.clone()];
    out.extend(ranked.into_iter().map(|r| r.2).filter(|a| *a != modal_a).take(k - 1));
    if k >= 2 {
        let hold: Assignment = units
            .iter()
            .map(|id| (id.clone(), pins.get(id).cloned().unwrap_or(Order::Hold)))
            .collect();
        if !out.contains(&hold) {
            if out.len() == k {
                out.pop();
            }
            out.push(hold);
        }
    }
    Ok(out)
}

/// A finite normal-form game; cells are row-major with player 0 outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGame {
    pub shape: Vec<usize>,
    /// `payoffs[cell][player]`.
    pub payoffs: Vec<Vec<f64>>,
}

impl MatrixGame {
    pub fn new(shape: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::validation("shape", "every player needs an action"));
        }
        let cells: usize = shape.iter().product();
        if payoffs.len() != cells || payoffs.iter().any(|p| p.len() != shape.len()) {
            return Err(Error::validation("payoffs", "tensor is incomplete"));
        }
        if payoffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("payoffs", "non-finite entry"));
        }
        Ok(MatrixGame { shape, payoffs })
    }

    /// Two-player game from row and column payoff matrices.
    pub fn bimatrix(row: &[Vec<f64>], col: &[Vec<f64>]) -> Result<Self> {
        let n = row.len();
        let m = row.first().map_or(0, Vec::len);
        if col.len() != n || row.iter().chain(col).any(|r| r.len() != m) {
            return Err(Error::validation("payoffs", "matrices differ in shape"));
        }
        let payoffs = (0..n)
            .flat_map(|i| (0..m).map(move |j| vec![row[i][j], col[i][j]]))
            .collect();
        MatrixGame::new(vec![n, m], payoffs)
    }

    pub fn players(&self) -> usize {
        self.shape.len()
    }

    pub fn cells(&self) -> usize {
        self.payoffs.len()
    }

    pub fn actions_of(&self, cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.shape.len()];
        let mut rest = cell;
        for (slot, n) in out.iter_mut().zip(&self.shape).rev() {
            *slot = rest % n;
            rest /= n;
        }
        out
    }

    pub fn cell_of(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.shape).fold(0, |acc, (a, n)| acc * n + a)
    }

    /// Expected payoff of each of `player`'s actions against the others' mixes.
    pub fn action_values(&self, player: usize, strategies: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.shape[player]];
        for (cell, pay) in self.payoffs.iter().enumerate() {
            let acts = self.actions_of(cell);
            let mut w = 1.0;
            for (q, a) in acts.iter().enumerate() {
                if q != player {
                    w *= strategies[q][*a];
                }
            }
            out[acts[player]] += w * pay[player];
        }
        out
    }

    pub fn expected_payoffs(&self, strategies: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.players()];
        for (cell, pay) in self.payoffs.iter().enumerate() {
            let w: f64 = self
                .actions_of(cell)
                .iter()
                .enumerate()
                .map(|(q, a)| strategies[q][*a])
                .product();
            for (o, v) in out.iter_mut().zip(pay) {
                *o += w * v;
            }
        }
        out
    }

    /// Largest gain any single player gets from a pure best response.
    pub fn exploitability(&self, strategies: &[Vec<f64>]) -> f64 {
        let achieved = self.expected_payoffs(strategies);
        (0..self.players())
            .map(|p| {
                let best = self
                    .action_values(p, strategies)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                best - achieved[p]
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgameSolution {
    /// Time-averaged strategy per player.
    pub strategies: Vec<Vec<f64>>,
    pub iterations: usize,
    pub exploitability: f64,
}

impl SubgameSolution {
    /// Probability of every cell under the product of the strategies.
    pub fn cell_probabilities(&self, game: &MatrixGame) -> Vec<f64> {
        (0..game.cells())
            .map(|c| {
                game.actions_of(c)
                    .iter()
                    .enumerate()
                    .map(|(q, a)| self.strategies[q][*a])
                    .product()
            })
            .collect()
    }
}

fn regret_strategy(regrets: &[f64]) -> Vec<f64> {
    let total: f64 = regrets.iter().map(|r| r.max(0.0)).sum();
    if total > 0.0 {
        regrets.iter().map(|r| r.max(0.0) / total).collect()
    } else {
        vec![1.0 / regrets.len() as f64; regrets.len()]
    }
}

/// Simultaneous regret matching; returns the average strategies.
pub fn regret_matching(game: &MatrixGame, iters: usize) -> Result<SubgameSolution> {
    if iters == 0 {
        return Err(Error::Precondition("iters must be at least 1".into()));
    }
    let n = game.players();
    let cells = game.cells();
    let table: Vec<usize> = (0..cells).flat_map(|c| game.actions_of(c)).collect();
    let mut regrets: Vec<Vec<f64>> = game.shape.iter().map(|&m| vec![0.0; m]).collect();
    let mut sums: Vec<Vec<f64>> = regrets.clone();
    let mut values: Vec<Vec<f64>> = regrets.clone();
    let mut current: Vec<Vec<f64>> = regrets.clone();
    for _ in 0..iters {
        for (c, r) in current.iter_mut().zip(&regrets) {
            *c = regret_strategy(r);
        }
        for v in values.iter_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        for (cell, pay) in game.payoffs.iter().enumerate() {
            let acts = &table[cell * n..(cell + 1) * n];
            for p in 0..n {
                let mut w = pay[p];
                for (q, a) in acts.iter().enumerate() {
                    if q != p {
                        w *= current[q][*a];
                    }
                }
                values[p][acts[p]] += w;
            }
        }
        for p in 0..n {
            let expected: f64 = values[p].iter().zip(&current[p]).map(|(v, s)| v * s).sum();
            for (r, v) in regrets[p].iter_mut().zip(&values[p]) {
                *r += v - expected;
            }
            for (s, c) in sums[p].iter_mut().zip(&current[p]) {
                *s += c;
            }
        }
    }
    let strategies: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|s| {
            let total: f64 = s.iter().sum();
            s.into_iter().map(|x| x / total).collect()
        })
        .collect();
    let exploitability = game.exploitability(&strategies).max(0.0);
    Ok(SubgameSolution {
        strategies,
        iterations: iters,
        exploitability,
    })
}

pub const VALUE_FEATURES: [&str; 5] = ["bias", "sc_share", "unit_share", "centrality", "mean_sc_distance"];

/// Hand features of `state` from `power`'s point of view, each in [0, 1].
pub fn value_features(map: &MapGraph, state: &GameState, power: &Power) -> [f64; 5] {
    let total_sc = map.supply_center_count();
    let owned = state
        .sc_ownership
        .values()
        .filter(|o| o.as_ref() == Some(power))
        .count();
    let sc_share = if total_sc == 0 {
        0.0
    } else {
        owned as f64 / total_sc as f64
    };
    let own: Vec<_> = state.units_of(power).map(|(_, u)| u).collect();
    let unit_share = if state.units.is_empty() {
        0.0
    } else {
        own.len() as f64 / state.units.len() as f64
    };
    let max_degree = map.max_degree().max(1) as f64;
    let centrality = if own.is_empty() {
        0.0
    } else {
        own.iter().map(|u| map.degree(&u.province) as f64).sum::<f64>() / (max_degree * own.len() as f64)
    };
    let diameter = map.diameter().max(1) as f64;
    let targets: Vec<usize> = map
        .supply_centers()
        .filter(|sc| state.owner_of(sc) != Some(power))
        .filter_map(|sc| map.province_index(sc))
        .collect();
    let mean_sc_distance = if own.is_empty() || targets.is_empty() {
        0.0
    } else {
        own.iter()
            .map(|u| {
                map.province_index(&u.province)
                    .and_then(|from| {
                        targets
                            .iter()
                            .map(|&t| map.distance_by_index(from, t))
                            .filter(|d| *d != UNREACHABLE)
                            .min()
                    })
                    .map_or(1.0, |d| (d as f64 / diameter).min(1.0))
            })
            .sum::<f64>()
            / own.len() as f64
    };
    [1.0, sc_share, unit_share, centrality, mean_sc_distance]
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueModel {
    /// Per-power weights over [`VALUE_FEATURES`].
    Linear { weights: BTreeMap<Power, Vec<f64>> },
    /// Values keyed by [`GameState::key`]; pinned keys are never updated.
    Tabular {
        table: BTreeMap<String, Vec<f64>>,
        pinned: BTreeSet<String>,
    },
}

/// Per-power state values, clamped to [0, 1] on evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub powers: Vec<Power>,
    pub gamma: f64,
    pub model: ValueModel,
}

#[derive(Serialize, Deserialize)]
struct ValueFile {
    powers: Vec<Power>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<BTreeMap<Power, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pinned: Option<BTreeSet<String>>,
    gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueMode {
    Linear,
    Tabular,
}

impl ValueFunction {
    pub fn zero_linear(map: &MapGraph, gamma: f64) -> Self {
        let weights = map
            .powers()
            .iter()
            .map(|p| (p.clone(), vec![0.0; VALUE_FEATURES.len()]))
            .collect();
        ValueFunction {
            powers: map.powers().to_vec(),
            gamma,
            model: ValueModel::Linear { weights },
        }
    }

    /// Value equal to the supply-center share.
    pub fn sc_share(map: &MapGraph, gamma: f64) -> Self {
        let mut v = Self::zero_linear(map, gamma);
        if let ValueModel::Linear { weights } = &mut v.model {
            for w in weights.values_mut() {
                w[1] = 1.0;
            }
        }
        v
    }

    pub fn empty_tabular(map: &MapGraph, gamma: f64) -> Self {
        ValueFunction {
            powers: map.powers().to_vec(),
            gamma,
            model: ValueModel::Tabular {
                table: BTreeMap::new(),
                pinned: BTreeSet::new(),
            },
        }
    }

    pub fn new(map: &MapGraph, mode: ValueMode, gamma: f64) -> Self {
        match mode {
            ValueMode::Linear => Self::zero_linear(map, gamma),
            ValueMode::Tabular => Self::empty_tabular(map, gamma),
        }
    }

    /// Fixes the values of `state`; later updates leave it untouched.
    pub fn pin(&mut self, state: &GameState, values: Vec<f64>) -> Result<()> {
        if values.len() != self.powers.len() {
            return Err(Error::validation("values", "one value per power expected"));
        }
        match &mut self.model {
            ValueModel::Tabular { table, pinned } => {
                let key = state.key();
                table.insert(key.clone(), values);
                pinned.insert(key);
                Ok(())
            }
            ValueModel::Linear { .. } => Err(Error::Precondition("only tabular values can be pinned".into())),
        }
    }

    fn raw(&self, map: &MapGraph, state: &GameState) -> Vec<f64> {
        match &self.model {
            ValueModel::Linear { weights } => self
                .powers
                .iter()
                .map(|p| {
                    let phi = value_features(map, state, p);
                    weights
                        .get(p)
                        .map_or(0.0, |w| w.iter().zip(phi).map(|(a, b)| a * b).sum())
                })
                .collect(),
            ValueModel::Tabular { table, .. } => table
                .get(&state.key())
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.powers.len()]),
        }
    }

    /// Values of `state` for every power, in map order.
    pub fn values(&self, map: &MapGraph, state: &GameState) -> Vec<f64> {
        self.raw(map, state).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    pub fn value_of(&self, map: &MapGraph, state: &GameState, power: &Power) -> Result<f64> {
        let i = self
            .powers
            .iter()
            .position(|p| p == power)
            .ok_or_else(|| Error::UnknownPower(power.clone()))?;
        Ok(self.values(map, state)[i])
    }

    /// Moves every power's value at `state` to `(1-beta) V + beta target`:
    /// exactly in tabular mode, by one normalized gradient step otherwise.
    pub fn update_toward(
        &mut self,
        map: &MapGraph,
        state: &GameState,
        targets: &[f64],
        beta: f64,
        learning_rate: f64,
    ) -> Result<()> {
        if targets.len() != self.powers.len() {
            return Err(Error::validation("targets", "one target per power expected"));
        }
        let current = self.values(map, state);
        let goal: Vec<f64> = current
            .iter()
            .zip(targets)
            .map(|(v, t)| (1.0 - beta) * v + beta * t)
            .collect();
        match &mut self.model {
            ValueModel::Tabular { table, pinned } => {
                let key = state.key();
                if !pinned.contains(&key) {
                    table.insert(key, goal.into_iter().map(|g| g.clamp(0.0, 1.0)).collect());
                }
            }
            ValueModel::Linear { weights } => {
                for (p, g) in self.powers.iter().zip(goal) {
                    let phi = value_features(map, state, p);
                    let w = weights
                        .entry(p.clone())
                        .or_insert_with(|| vec![0.0; VALUE_FEATURES.len()]);
                    let pred: f64 = w.iter().zip(phi).map(|(a, b)| a * b).sum();
                    let norm: f64 = phi.iter().map(|x| x * x).sum();
                    let step = learning_rate * (g - pred) / norm.max(1e-12);
                    for (wi, x) in w.iter_mut().zip(phi) {
                        *wi += step * x;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = match &self.model {
            ValueModel::Linear { weights } => ValueFile {
                powers: self.powers.clone(),
                features: Some(VALUE_FEATURES.iter().map(|s| s.to_string()).collect()),
                weights: Some(weights.clone()),
                table: None,
                pinned: None,
                gamma: self.gamma,
            },
            ValueModel::Tabular { table, pinned } => ValueFile {
                powers: self.powers.clone(),
                features: None,
                weights: None,
                table: Some(table.clone()),
                pinned: Some(pinned.clone()),
                gamma: self.gamma,
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ValueFile = serde_json::from_str(text).map_err(|e| Error::parse("values", e.to_string()))?;
        let n = f.powers.len();
        let model = match (f.weights, f.table) {
            (Some(weights), None) => {
                let names = f.features.unwrap_or_default();
                if names.iter().map(String::as_str).ne(VALUE_FEATURES) {
                    return Err(Error::validation("features", "unexpected feature names"));
                }
                for (p, w) in &weights {
                    if !f.powers.contains(p) {
                        return Err(Error::UnknownPower(p.clone()));
                    }
                    if w.len() != VALUE_FEATURES.len() || w.iter().any(|x| !x.is_finite()) {
                        return Err(Error::validation("weights", format!("bad weight vector for {p}")));
                    }
                }
                ValueModel::Linear { weights }
            }
            (None, Some(table)) => {
                if table.values().any(|v| v.len() != n) {
                    return Err(Error::validation("table", "one value per power expected"));
                }
                ValueModel::Tabular {
                    table,
                    pinned: f.pinned.unwrap_or_default(),
                }
            }
            _ => {
                return Err(Error::validation(
                    "values",
                    "exactly one of weights or table is required",
                ))
            }
        };
        if !(0.0..=1.0).contains(&f.gamma) {
            return Err(Error::validation("gamma", "must lie in [0, 1]"));
        }
        Ok(ValueFunction {
            powers: f.powers,
            gamma: f.gamma,
            model,
        })
    }

    /// Checks that the value function covers the map's powers.
    pub fn check_map(&self, map: &MapGraph) -> Result<()> {
        if self.powers != map.powers() {
            return Err(Error::validation("values", "powers differ from the map"));
        }
        Ok(())
    }
}

/// Matrix subgame over the candidates of the participating powers; the other
/// powers play a fixed assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgameMatrix {
    pub state: GameState,
    pub participants: Vec<Power>,
    pub candidates: Vec<Vec<Assignment>>,
    pub fixed: Assignment,
    /// Game over participants with payoff `r(s) + gamma V(T(s, a))`.
    pub game: MatrixGame,
    pub successors: Vec<GameState>,
}

impl SubgameMatrix {
    pub fn joint_action(&self, cell: usize) -> JointAction {
        let mut orders = self.fixed.clone();
        for (p, a) in self.game.actions_of(cell).into_iter().enumerate() {
            orders.extend(self.candidates[p][a].clone());
        }
        JointAction::new(orders)
    }
}

/// Adjudicates every cell once and fills the payoff tensor.
pub fn build_subgame(
    map: &MapGraph,
    state: &GameState,
    participants: &[Power],
    candidates: Vec<Vec<Assignment>>,
    fixed: Assignment,
    value_fn: &ValueFunction,
    gamma: f64,
) -> Result<SubgameMatrix> {
    if participants.is_empty() || participants.len() != candidates.len() {
        return Err(Error::Precondition(
            "one candidate list per participant expected".into(),
        ));
    }
    for (p, list) in participants.iter().zip(&candidates) {
        if list.is_empty() {
            return Err(Error::Precondition(format!("{p} has no candidates")));
        }
        let distinct: BTreeSet<&Assignment> = list.iter().collect();
        if distinct.len() != list.len() {
            return Err(Error::Precondition(format!("{p} has duplicate candidates")));
        }
    }
    let index: Vec<usize> = participants
        .iter()
        .map(|p| map.power_index(p).ok_or_else(|| Error::UnknownPower(p.clone())))
        .collect::<Result<_>>()?;
    let r = reward(map, state);
    let shape: Vec<usize> = candidates.iter().map(Vec::len).collect();
    let mut sub = SubgameMatrix {
        state: state.clone(),
        participants: participants.to_vec(),
        candidates,
        fixed,
        game: MatrixGame {
            shape: shape.clone(),
            payoffs: Vec::new(),
        },
        successors: Vec::new(),
    };
    let mut covered: BTreeSet<&UnitId> = BTreeSet::new();
    for (id, o) in sub.candidates.iter().flatten().flat_map(|a| a.iter()).chain(&sub.fixed) {
        check_legal(map, state, id, o)?;
        covered.insert(id);
    }
    if let Some(missing) = state.units.keys().find(|id| !covered.contains(id)) {
        return Err(Error::MissingOrder(missing.clone()));
    }
    let cells: usize = shape.iter().product();
    let results: Vec<(GameState, Vec<f64>)> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let joint = sub.joint_action(c);
            let next = adjudicate(map, state, &joint)?;
            let v = value_fn.values(map, &next);
            let pay = index.iter().map(|&i| r[i] + gamma * v[i]).collect();
            Ok((next, pay))
        })
        .collect::<Result<_>>()?;
    let (successors, payoffs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    sub.game = MatrixGame::new(shape, payoffs)?;
    sub.successors = successors;
    Ok(sub)
}

/// Bootstrap target `r(s) + gamma E_sigma[V(T(s, a))]` for every power.
pub fn bootstrap_targets(
    map: &MapGraph,
    value_fn: &ValueFunction,
    matrix: &SubgameMatrix,
    solution: &SubgameSolution,
    gamma: f64,
) -> Vec<f64> {
    let r = reward(map, &matrix.state);
    let probs = solution.cell_probabilities(&matrix.game);
    let mut expected = vec![0.0; r.len()];
    for (p, next) in probs.iter().zip(&matrix.successors) {
        for (e, v) in expected.iter_mut().zip(value_fn.values(map, next)) {
            *e += p * v;
        }
    }
    r.iter().zip(expected).map(|(r, e)| r + gamma * e).collect()
}

/// One DORA step at the subgame's state.
pub fn dora_update(
    map: &MapGraph,
    value_fn: &mut ValueFunction,
    matrix: &SubgameMatrix,
    solution: &SubgameSolution,
    beta: f64,
    gamma: f64,
    learning_rate: f64,
) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Precondition("beta must lie in (0, 1]".into()));
    }
    let targets = bootstrap_targets(map, value_fn, matrix, solution, gamma);
    value_fn.update_toward(map, &matrix.state, &targets, beta, learning_rate)
}

fn sample_cell(probs: &[f64], rng: &mut impl Rng) -> usize {
    let mut r = rng.gen::<f64>() * probs.iter().sum::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if r < *p {
            return i;
        }
        r -= p;
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainValuesConfig {
    pub episodes: usize,
    pub horizon: u32,
    pub mode: ValueMode,
    pub equilibrium: EquilibriumConfig,
}

/// Self-play value learning from the initial position.
///
/// With at most three powers every power with units takes part in each
/// subgame; otherwise a seeded random pair does and the rest play modally.
pub fn train_values(map: &MapGraph, config: &TrainValuesConfig, seed: u64) -> Result<ValueFunction> {
    if config.episodes == 0 {
        return Err(Error::Precondition("episodes must be at least 1".into()));
    }
    if config.horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    let eq = &config.equilibrium;
    eq.validate()?;
    let mut value_fn = ValueFunction::new(map, config.mode, eq.gamma);
    for episode in 0..config.episodes {
        let mut rng = rng_from_seed(derive_seed(seed, episode as u64));
        let mut state = GameState::initial(map);
        for _ in 0..config.horizon {
            let active: Vec<Power> = map
                .powers()
                .iter()
                .filter(|p| state.units_of(p).next().is_some())
                .cloned()
                .collect();
            if active.is_empty() {
                break;
            }
            let participants: Vec<Power> = if map.powers().len() <= 3 || active.len() <= 2 {
                active
            } else {
                let mut pick: Vec<Power> = active.choose_multiple(&mut rng, 2).cloned().collect();
                pick.sort_by_key(|p| map.power_index(p));
                pick
            };
            let matrix = solve_inputs(
                map,
                &state,
                &participants,
                &BTreeMap::new(),
                &value_fn,
                eq,
                rng.gen(),
                None,
            )?;
            let solution = regret_matching(&matrix.game, eq.iters)?;
            dora_update(
                map,
                &mut value_fn,
                &matrix,
                &solution,
                eq.beta,
                eq.gamma,
                eq.learning_rate,
            )?;
            let probs = solution.cell_probabilities(&matrix.game);
            state = matrix.successors[sample_cell(&probs, &mut rng)].clone();
        }
    }
    Ok(value_fn)
}

#[allow(clippy::too_many_arguments)]
fn solve_inputs(
    map: &MapGraph,
    state: &GameState,
    participants: &[Power],
    pins: &Assignment,
    value_fn: &ValueFunction,
    eq: &EquilibriumConfig,
    seed: u64,
    cache: Option<&ProposalCache>,
) -> Result<SubgameMatrix> {
    let owned;
    let cache = match cache {
        Some(c) => c,
        None => {
            owned = eq.proposal.cache(map, state)?;
            &owned
        }
    };
    let mut candidates = Vec::with_capacity(participants.len());
    for p in participants {
        candidates.push(sample_candidates_cached(
            map,
            state,
            p,
            eq.k,
            eq.samples,
            cache,
            derive_seed_str(seed, p.as_str()),
            pins,
        )?);
    }
    let mut fixed = Assignment::new();
    for p in map.powers().iter().filter(|p| !participants.contains(p)) {
        fixed.extend(cache.modal(state, p)?);
    }
    build_subgame(map, state, participants, candidates, fixed, value_fn, eq.gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub action: JointAction,
    pub probability: f64,
    pub successor: GameState,
}

/// Distribution over joint actions in which both parties honor `agreement`.
pub fn conditioned_joint_distribution(
    map: &MapGraph,
    state: &GameState,
    agreement: &Agreement,
    value_fn: &ValueFunction,
    config: &EquilibriumConfig,
    seed: u64,
) -> Result<Vec<JointOutcome>> {
    conditioned_joint_distribution_cached(map, state, agreement, value_fn, config, seed, None)
}

/// [`conditioned_joint_distribution`] with proposal distributions shared
/// across calls at the same state.
pub fn conditioned_joint_distribution_cached(
    map: &MapGraph,
    state: &GameState,
    agreement: &Agreement,
    value_fn: &ValueFunction,
    config: &EquilibriumConfig,
    seed: u64,
    cache: Option<&ProposalCache>,
) -> Result<Vec<JointOutcome>> {
    config.validate()?;
    for (unit, order) in [(&agreement.u1, &agreement.a1), (&agreement.u2, &agreement.a2)] {
        check_legal(map, state, unit, order)?;
    }
    let (pi, pj) = (&agreement.power_i, &agreement.power_j);
    if state.unit(&agreement.u1)?.power != *pi || state.unit(&agreement.u2)?.power != *pj {
        return Err(Error::validation(
            "agreement",
            "units do not belong to the agreeing powers",
        ));
    }
    let mut participants = vec![pi.clone(), pj.clone()];
    participants.sort_by_key(|p| map.power_index(p));
    let pins: Assignment = [
        (agreement.u1.clone(), agreement.a1.clone()),
        (agreement.u2.clone(), agreement.a2.clone()),
    ]
    .into_iter()
    .collect();
    let matrix = solve_inputs(map, state, &participants, &pins, value_fn, config, seed, cache)?;
    let solution = regret_matching(&matrix.game, config.iters)?;
    let probs = solution.cell_probabilities(&matrix.game);
    Ok(probs
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .map(|(c, p)| JointOutcome {
            action: matrix.joint_action(c),
            probability: p,
            successor: matrix.successors[c].clone(),
        })
        .collect())
}
