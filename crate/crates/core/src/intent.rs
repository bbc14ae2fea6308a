//! Per-unit order distributions conditioned on a (pair-filtered) history.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::log::{play_records, RoundRecord};
use crate::error::{Error, Result};
use crate::game::{DialogueRound, Play};
use crate::http::JsonClient;
use crate::ids::{Power, ProvinceId, UnitId};
use crate::map::MapGraph;
use crate::mentions::{extract_mentions, Lexicon, MentionSet};
use crate::order::{check_legal, legal_orders, Order, OrderKey};
use crate::state::GameState;

/// A play whose dialogue keeps only the messages exchanged by one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergameView {
    pub play: Play,
    pub pair: (Power, Power),
}

pub fn filter_view(map: &MapGraph, play: &Play, i: &Power, j: &Power) -> Result<HypergameView> {
    for p in [i, j] {
        if map.power_index(p).is_none() {
            return Err(Error::UnknownPower(p.clone()));
        }
    }
    let mut play = play.clone();
    for r in &mut play.rounds {
        r.dialogue.messages.retain(|m| m.between(i, j));
    }
    Ok(HypergameView {
        play,
        pair: (i.clone(), j.clone()),
    })
}

impl HypergameView {
    pub fn last_state(&self) -> Result<&GameState> {
        self.play.last_state()
    }

    pub fn last_dialogue(&self) -> Option<&DialogueRound> {
        self.play.last_round().map(|r| &r.dialogue)
    }

    /// The view with its final round's dialogue removed.
    pub fn before_dialogue(&self) -> HypergameView {
        let mut v = self.clone();
        if let Some(r) = v.play.rounds.last_mut() {
            r.dialogue.messages.clear();
        }
        v
    }
}

/// Probability mass over a unit's orders, kept in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    unit: UnitId,
    support: Vec<(Order, f64)>,
    keys: Vec<OrderKey>,
}

const SUM_TOLERANCE: f64 = 1e-9;

impl ActionDistribution {
    pub fn new(unit: &UnitId, state: &GameState, support: Vec<(Order, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::validation("support", "empty distribution"));
        }
        let mut keyed = Vec::with_capacity(support.len());
        for (o, p) in support {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::validation("support", format!("bad probability {p}")));
            }
            keyed.push((o.key(unit, state)?, o, p));
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        if keyed.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::validation("support", "duplicate order"));
        }
        let total: f64 = keyed.iter().map(|k| k.2).sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation("support", format!("probabilities sum to {total}")));
        }
        let (keys, support) = keyed.into_iter().map(|(k, o, p)| (k, (o, p))).unzip();
        Ok(ActionDistribution {
            unit: unit.clone(),
            support,
            keys,
        })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(unit: &UnitId, state: &GameState, weights: Vec<(Order, f64)>) -> Result<Self> {
        let total: f64 = weights.iter().map(|w| w.1).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::validation("support", "weights do not normalize"));
        }
        Self::new(unit, state, weights.into_iter().map(|(o, w)| (o, w / total)).collect())
    }

    pub fn uniform(map: &MapGraph, state: &GameState, unit: &UnitId) -> Result<Self> {
        let legal = legal_orders(map, state, unit)?;
        let p = 1.0 / legal.len() as f64;
        Self::new(unit, state, legal.into_iter().map(|o| (o, p)).collect())
    }

    pub fn unit(&self) -> &UnitId {
        &self.unit
    }

    pub fn support(&self) -> &[(Order, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob(&self, order: &Order) -> f64 {
        self.support
            .iter()
            .find(|(o, _)| o == order)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn top_action(&self) -> (&Order, f64) {
        top_action(self)
    }

    /// Entries as (canonical notation, probability).
    pub fn notated(&self) -> Vec<(String, f64)> {
        self.keys
            .iter()
            .zip(&self.support)
            .map(|(k, (_, p))| (k.notation().to_string(), *p))
            .collect()
    }
}

/// Shannon entropy in bits.
pub fn entropy(dist: &ActionDistribution) -> f64 {
    let h: f64 = dist
        .support
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| -p * p.log2())
        .sum();
    h.max(0.0)
}

/// Most likely order; ties go to the canonically first.
pub fn top_action(dist: &ActionDistribution) -> (&Order, f64) {
    let mut best = 0;
    for k in 1..dist.support.len() {
        let (p, q) = (dist.support[k].1, dist.support[best].1);
        if p > q || (p == q && dist.keys[k] < dist.keys[best]) {
            best = k;
        }
    }
    let (o, p) = &dist.support[best];
    (o, *p)
}

/// Order-scoring parameters shared by the heuristic intent backend and the
/// candidate proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub temperature: f64,
    pub w_sc_gain: f64,
    pub w_safety: f64,
    pub w_coherence: f64,
    pub mention_boost: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            temperature: 1.0,
            w_sc_gain: 1.0,
            w_safety: 0.5,
            w_coherence: 0.5,
            mention_boost: 2.0,
        }
    }
}

/// `[sc_gain, safety, support_coherence]` for one order.
pub fn order_features(map: &MapGraph, state: &GameState, unit: &UnitId, order: &Order) -> Result<[f64; 3]> {
    let u = state.unit(unit)?;
    let sc_gain = match order {
        Order::Move { dest } if map.is_supply_center(dest) && state.owner_of(dest) != Some(&u.power) => 1.0,
        _ => 0.0,
    };
    let end: &ProvinceId = match order {
        Order::Move { dest } => dest,
        _ => &u.province,
    };
    let threats = map
        .neighbors(end)
        .filter(|p| {
            state
                .unit_at(p)
                .is_some_and(|(id, other)| id != unit && other.power != u.power)
        })
        .count();
    let safety = -(threats as f64) / map.max_degree().max(1) as f64;
    let coherence = match order.support_target() {
        Some(t) if state.unit(t)?.power == u.power => 1.0,
        _ => 0.0,
    };
    Ok([sc_gain, safety, coherence])
}

impl HeuristicParams {
    /// Logit of an order before any dialogue boost.
    pub fn base_logit(&self, map: &MapGraph, state: &GameState, unit: &UnitId, order: &Order) -> Result<f64> {
        let f = order_features(map, state, unit, order)?;
        Ok(self.w_sc_gain * f[0] + self.w_safety * f[1] + self.w_coherence * f[2])
    }

    /// Softmax over legal orders of the base logits plus mention boosts.
    pub fn distribution(
        &self,
        map: &MapGraph,
        state: &GameState,
        unit: &UnitId,
        mentions: &MentionSet,
    ) -> Result<ActionDistribution> {
        let legal = legal_orders(map, state, unit)?;
        let mut logits = Vec::with_capacity(legal.len());
        for o in &legal {
            let hits = o
                .target_provinces(state)
                .into_iter()
                .collect::<BTreeSet<_>>()
                .intersection(mentions)
                .count();
            let z = self.base_logit(map, state, unit, o)? + self.mention_boost * hits as f64;
            logits.push(z / self.temperature.max(1e-12));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<(Order, f64)> = legal
            .into_iter()
            .zip(logits)
            .map(|(o, z)| (o, (z - max).exp()))
            .collect();
        ActionDistribution::from_weights(unit, state, weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heuristic {
    pub params: HeuristicParams,
    pub lexicon: Lexicon,
}

impl Heuristic {
    pub fn new(map: &MapGraph, params: HeuristicParams) -> Self {
        Heuristic {
            params,
            lexicon: Lexicon::from_map(map),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableKey {
    /// `None` matches any play.
    pub game: Option<String>,
    pub round: u32,
    pub unit: UnitId,
    pub use_dialogue: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    #[serde(flatten)]
    pub key: TableKey,
    pub support: Vec<WireEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub order: String,
    pub p: f64,
}

/// Precomputed distributions looked up by (play, round, unit, phase).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntentTable {
    entries: BTreeMap<TableKey, Vec<WireEntry>>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    entries: Vec<TableEntry>,
}

impl IntentTable {
    pub fn insert(&mut self, key: TableKey, support: Vec<WireEntry>) {
        self.entries.insert(key, support);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TableFile = serde_json::from_str(text).map_err(|e| Error::parse("intent table", e.to_string()))?;
        let mut t = IntentTable::default();
        for e in f.entries {
            t.insert(e.key, e.support);
        }
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = TableFile {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| TableEntry {
                    key: k.clone(),
                    support: v.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    fn lookup(&self, game: Option<&String>, round: u32, unit: &UnitId, use_dialogue: bool) -> Option<&Vec<WireEntry>> {
        let mut key = TableKey {
            game: game.cloned(),
            round,
            unit: unit.clone(),
            use_dialogue,
        };
        if let Some(v) = self.entries.get(&key) {
            return Some(v);
        }
        key.game = None;
        self.entries.get(&key)
    }
}

/// Builds a distribution from wire entries, checking legality.
pub fn distribution_from_wire(
    map: &MapGraph,
    state: &GameState,
    unit: &UnitId,
    entries: &[WireEntry],
) -> Result<ActionDistribution> {
    let mut support = Vec::with_capacity(entries.len());
    for e in entries {
        let o = Order::parse_for(&e.order, unit, state)?;
        check_legal(map, state, unit, &o)?;
        support.push((o, e.p));
    }
    ActionDistribution::new(unit, state, support)
}

#[derive(Serialize)]
struct IntentRequest<'a> {
    view: Vec<RoundRecord>,
    power: &'a Power,
    unit: &'a UnitId,
    use_dialogue: bool,
}

#[derive(Deserialize)]
struct IntentResponse {
    support: Vec<WireEntry>,
}

#[derive(Debug, Clone)]
pub struct RemoteIntent {
    pub client: JsonClient,
    /// Used when the service fails.
    pub fallback: Option<Heuristic>,
}

#[derive(Debug, Clone)]
pub enum IntentBackend {
    Heuristic(Heuristic),
    Table(IntentTable),
    Remote(RemoteIntent),
}

impl IntentBackend {
    pub fn heuristic(map: &MapGraph) -> Self {
        IntentBackend::Heuristic(Heuristic::new(map, HeuristicParams::default()))
    }

    pub fn distribution(
        &self,
        map: &MapGraph,
        view: &HypergameView,
        power: &Power,
        unit: &UnitId,
        use_dialogue: bool,
    ) -> Result<ActionDistribution> {
        let state = view.last_state()?;
        let u = state.unit(unit)?;
        if &u.power != power {
            return Err(Error::validation(
                "unit",
                format!("{unit} is owned by {}, not {power}", u.power),
            ));
        }
        match self {
            IntentBackend::Heuristic(h) => heuristic_distribution(h, map, view, unit, use_dialogue),
            IntentBackend::Table(t) => {
                let entries = t
                    .lookup(view.play.id.as_ref(), state.round, unit, use_dialogue)
                    .ok_or_else(|| {
                        Error::Precondition(format!("no intent table entry for {unit} in round {}", state.round))
                    })?;
                distribution_from_wire(map, state, unit, entries)
            }
            IntentBackend::Remote(r) => {
                let v = if use_dialogue {
                    view.clone()
                } else {
                    view.before_dialogue()
                };
                let req = IntentRequest {
                    view: play_records(&v.play)?,
                    power,
                    unit,
                    use_dialogue,
                };
                let result = r
                    .client
                    .post::<_, IntentResponse>("/v1/intent", &req)
                    .and_then(|resp| distribution_from_wire(map, state, unit, &resp.support));
                match (result, &r.fallback) {
                    (Ok(d), _) => Ok(d),
                    (Err(_), Some(h)) => heuristic_distribution(h, map, view, unit, use_dialogue),
                    (Err(e), None) => Err(e),
                }
            }
        }
    }
}

fn heuristic_distribution(
    h: &Heuristic,
    map: &MapGraph,
    view: &HypergameView,
    unit: &UnitId,
    use_dialogue: bool,
) -> Result<ActionDistribution> {
    let state = view.last_state()?;
    let mentions = match (use_dialogue, view.last_dialogue()) {
        (true, Some(d)) => extract_mentions(d, &h.lexicon),
        _ => MentionSet::new(),
    };
    h.params.distribution(map, state, unit, &mentions)
}
