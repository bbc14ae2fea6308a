//! Agreement detection: mention filter, before/after intent features and a
//! logistic classifier, then pairing of positive units into agreements.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::coalition::Agreement;
use crate::corpus::{Corpus, LabeledTuple, Split};
use crate::error::{Error, Result};
use crate::evaluation::prf1;
use crate::game::{ordered_pair, Play};
use crate::ids::{Power, UnitId};
use crate::intent::{filter_view, ActionDistribution, IntentBackend};
use crate::map::{MapGraph, UNREACHABLE};
use crate::mentions::{MentionSet, MentionSource};
use crate::order::{legal_orders, Order};
use crate::state::GameState;

/// Units farther than this from every unit of the partner cannot cooperate.
pub const PROXIMITY_RADIUS: u32 = 2;

/// Proximity to the partner's units and relevance of the mentions to the
/// unit's legal orders.
pub fn candidate_filter(
    map: &MapGraph,
    state: &GameState,
    p1: &Power,
    p2: &Power,
    unit: &UnitId,
    mentions: &MentionSet,
) -> Result<bool> {
    let u = state.unit(unit)?;
    let other = if &u.power == p1 {
        p2
    } else if &u.power == p2 {
        p1
    } else {
        return Err(Error::validation(
            "unit",
            format!("{unit} belongs to neither {p1} nor {p2}"),
        ));
    };
    if mentions.is_empty() {
        return Ok(false);
    }
    let near = state
        .units_of(other)
        .any(|(_, v)| map.distance(&u.province, &v.province) <= PROXIMITY_RADIUS);
    if !near {
        return Ok(false);
    }
    if mentions.contains(&u.province) {
        return Ok(true);
    }
    Ok(legal_orders(map, state, unit)?
        .iter()
        .any(|o| o.target_provinces(state).iter().any(|p| mentions.contains(p))))
}

pub const FEATURE_NAMES: [&str; 6] = [
    "p_star_before",
    "p_star_after",
    "delta_p",
    "h_before",
    "h_after",
    "delta_h",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentFeatures {
    pub p_star_before: f64,
    pub p_star_after: f64,
    pub delta_p: f64,
    pub h_before: f64,
    pub h_after: f64,
    pub delta_h: f64,
}

impl IntentFeatures {
    pub fn to_vec(&self) -> [f64; 6] {
        [
            self.p_star_before,
            self.p_star_after,
            self.delta_p,
            self.h_before,
            self.h_after,
            self.delta_h,
        ]
    }
}

/// Features of the after-dialogue top action `a*`, which is returned too.
pub fn compute_features(before: &ActionDistribution, after: &ActionDistribution) -> Result<(IntentFeatures, Order)> {
    if before.unit() != after.unit() {
        return Err(Error::validation(
            "distributions",
            format!("units differ: {} vs {}", before.unit(), after.unit()),
        ));
    }
    let (a_star, p_after) = after.top_action();
    let p_before = before.prob(a_star);
    let (h_before, h_after) = (before.entropy(), after.entropy());
    Ok((
        IntentFeatures {
            p_star_before: p_before,
            p_star_after: p_after,
            delta_p: p_after - p_before,
            h_before,
            h_after,
            delta_h: h_after - h_before,
        },
        a_star.clone(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            iterations: 2000,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub standardization: Standardization,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    /// All-zero model over the standard features (probability 0.5 everywhere).
    pub fn zero() -> Self {
        LogisticModel {
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: vec![0.0; 6],
            bias: 0.0,
            threshold: 0.5,
            standardization: Standardization {
                mean: vec![0.0; 6],
                std: vec![1.0; 6],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if self.weights.len() != n || self.standardization.mean.len() != n || self.standardization.std.len() != n {
            return Err(Error::validation("weights", "length differs from features"));
        }
        if self.features.iter().map(String::as_str).ne(FEATURE_NAMES) {
            return Err(Error::validation("features", "unexpected feature names"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::validation("threshold", "must lie in (0, 1)"));
        }
        if self.standardization.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::validation("standardization", "std must be positive"));
        }
        Ok(())
    }

    pub fn logit(&self, x: &IntentFeatures) -> f64 {
        let v = x.to_vec();
        let s = &self.standardization;
        self.bias
            + v.iter()
                .zip(&self.weights)
                .zip(s.mean.iter().zip(&s.std))
                .map(|((x, w), (m, sd))| w * (x - m) / sd)
                .sum::<f64>()
    }

    pub fn probability(&self, x: &IntentFeatures) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict(&self, x: &IntentFeatures) -> bool {
        self.probability(x) >= self.threshold
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: LogisticModel = serde_json::from_str(text).map_err(|e| Error::parse("model", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// Threshold grid 0.01, 0.02, ..., 0.99.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|k| k as f64 / 100.0)
}

/// Grid threshold maximizing F1, ties to the lower value.
pub fn tune_threshold(probs: &[f64], labels: &[bool]) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.5);
    for t in threshold_grid() {
        let preds: Vec<bool> = probs.iter().map(|p| *p >= t).collect();
        let (_, _, f1) = prf1(&preds, labels)?;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// Full-batch gradient descent on standardized features with L2 on the
/// weights (not the bias), from a zero start.
pub fn train_classifier(data: &[(IntentFeatures, bool)], config: &TrainConfig) -> Result<LogisticModel> {
    let n = data.len();
    let pos = data.iter().filter(|d| d.1).count();
    if pos == 0 || pos == n {
        return Err(Error::Precondition("training data needs both classes".into()));
    }
    let xs: Vec<[f64; 6]> = data.iter().map(|d| d.0.to_vec()).collect();
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("features", "non-finite value"));
    }
    let d = 6;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for x in &xs {
        for k in 0..d {
            mean[k] += x[k];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for x in &xs {
        for k in 0..d {
            std[k] += (x[k] - mean[k]).powi(2);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let z: Vec<[f64; 6]> = xs
        .iter()
        .map(|x| {
            let mut out = [0.0; 6];
            for k in 0..d {
                out[k] = (x[k] - mean[k]) / std[k];
            }
            out
        })
        .collect();
    let y: Vec<f64> = data.iter().map(|d| if d.1 { 1.0 } else { 0.0 }).collect();

    let mut w = [0.0; 6];
    let mut b = 0.0;
    for _ in 0..config.iterations {
        let mut gw = [0.0; 6];
        let mut gb = 0.0;
        for (x, t) in z.iter().zip(&y) {
            let mut s = b;
            for k in 0..d {
                s += w[k] * x[k];
            }
            let err = sigmoid(s) - t;
            for k in 0..d {
                gw[k] += err * x[k];
            }
            gb += err;
        }
        for k in 0..d {
            w[k] -= config.learning_rate * (gw[k] / n as f64 + config.l2 * w[k]);
        }
        b -= config.learning_rate * gb / n as f64;
    }

    let mut model = LogisticModel {
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        weights: w.to_vec(),
        bias: b,
        threshold: 0.5,
        standardization: Standardization { mean, std },
    };
    let probs: Vec<f64> = data.iter().map(|(x, _)| model.probability(x)).collect();
    let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
    model.threshold = tune_threshold(&probs, &labels)?;
    Ok(model)
}

/// Filter outcome, features and `a*` of one unit at one round for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitObservation {
    pub passed_filter: bool,
    pub features: IntentFeatures,
    pub a_star: Order,
}

/// Computes the observation of `unit` (owned by `p1` or `p2`) at `round`.
#[allow(clippy::too_many_arguments)]
pub fn observe_unit(
    map: &MapGraph,
    play: &Play,
    round: usize,
    p1: &Power,
    p2: &Power,
    unit: &UnitId,
    backend: &IntentBackend,
    mentions: &MentionSource,
) -> Result<UnitObservation> {
    let prefix = play.prefix(round)?;
    let view = filter_view(map, &prefix, p1, p2)?;
    let state = view.last_state()?;
    let owner = state.unit(unit)?.power.clone();
    let dialogue = view.last_dialogue().cloned().unwrap_or_default();
    let found = mentions.extract(map, &dialogue);
    let passed_filter = candidate_filter(map, state, p1, p2, unit, &found)?;
    let before = backend.distribution(map, &view, &owner, unit, false)?;
    let after = backend.distribution(map, &view, &owner, unit, true)?;
    let (features, a_star) = compute_features(&before, &after)?;
    Ok(UnitObservation {
        passed_filter,
        features,
        a_star,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub round: u32,
    /// Pair in map power order.
    pub power1: Power,
    pub power2: Power,
    pub unit: UnitId,
    pub owner: Power,
    pub passed_filter: bool,
    pub probability: f64,
    pub label: bool,
    pub a_star: Option<Order>,
    pub features: Option<IntentFeatures>,
    /// Backend failure for this unit, if any.
    pub error: Option<String>,
}

/// Runs filter, features and classifier on every unit of `p1` and `p2`.
#[allow(clippy::too_many_arguments)]
pub fn detect(
    map: &MapGraph,
    play: &Play,
    round: usize,
    p1: &Power,
    p2: &Power,
    backend: &IntentBackend,
    model: &LogisticModel,
    mentions: &MentionSource,
) -> Result<Vec<DetectionResult>> {
    let state = &play
        .rounds
        .get(round)
        .ok_or_else(|| Error::Precondition(format!("round {round} outside play")))?
        .state;
    for p in [p1, p2] {
        if map.power_index(p).is_none() {
            return Err(Error::UnknownPower(p.clone()));
        }
    }
    let (a, b) = ordered_pair(map, p1, p2);
    let mut out = Vec::new();
    for (id, u) in &state.units {
        if u.power != a && u.power != b {
            continue;
        }
        let mut r = DetectionResult {
            round: state.round,
            power1: a.clone(),
            power2: b.clone(),
            unit: id.clone(),
            owner: u.power.clone(),
            passed_filter: false,
            probability: 0.0,
            label: false,
            a_star: None,
            features: None,
            error: None,
        };
        match observe_unit(map, play, round, &a, &b, id, backend, mentions) {
            Ok(obs) => {
                r.passed_filter = obs.passed_filter;
                r.probability = model.probability(&obs.features);
                r.label = obs.passed_filter && r.probability >= model.threshold;
                r.a_star = Some(obs.a_star);
                r.features = Some(obs.features);
            }
            Err(e) => r.error = Some(e.to_string()),
        }
        out.push(r);
    }
    Ok(out)
}

/// Pairs positive units of a pair's detection results into agreements.
pub fn construct_agreements(map: &MapGraph, state: &GameState, results: &[DetectionResult]) -> Result<Vec<Agreement>> {
    let a_star = |u: &UnitId| results.iter().find(|r| &r.unit == u).and_then(|r| r.a_star.clone());
    let mut out: Vec<Agreement> = Vec::new();
    for r in results.iter().filter(|r| r.label) {
        let Some(a1) = r.a_star.clone() else { continue };
        let me = state.unit(&r.unit)?;
        let other = if me.power == r.power1 { &r.power2 } else { &r.power1 };
        let partner: Option<UnitId> = match a1.support_target() {
            Some(t) if &state.unit(t)?.power == other => Some(t.clone()),
            _ => {
                let best_positive = results
                    .iter()
                    .filter(|v| v.label && &v.owner == other)
                    .max_by(|x, y| {
                        x.probability
                            .partial_cmp(&y.probability)
                            .unwrap_or(Ordering::Equal)
                            .then_with(|| y.unit.cmp(&x.unit))
                    })
                    .map(|v| v.unit.clone());
                best_positive.or_else(|| {
                    state
                        .units_of(other)
                        .map(|(id, v)| (map.distance(&me.province, &v.province), id))
                        .filter(|(d, _)| *d != UNREACHABLE)
                        .min()
                        .map(|(_, id)| id.clone())
                })
            }
        };
        let Some(v) = partner else { continue };
        let Some(a2) = a_star(&v) else { continue };
        let agreement = Agreement {
            round: state.round,
            power_i: me.power.clone(),
            power_j: other.clone(),
            u1: r.unit.clone(),
            u2: v,
            a1,
            a2,
        };
        agreement.validate(map, state)?;
        let norm = agreement.normalized(map);
        if !out.contains(&norm) {
            out.push(norm);
        }
    }
    out.sort_by_cached_key(|a| (a.notation(state).unwrap_or_default(), a.u1.clone(), a.u2.clone()));
    Ok(out)
}

/// A detection result tagged with its game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub game_id: String,
    #[serde(flatten)]
    pub result: DetectionResult,
}

/// Runs [`detect`] on every talking pair of every played round of a corpus.
pub fn detect_corpus(
    corpus: &Corpus,
    backend: &IntentBackend,
    model: &LogisticModel,
    mentions: &MentionSource,
) -> Result<Vec<DetectionRecord>> {
    let per_game: Vec<Vec<DetectionRecord>> = corpus
        .games
        .par_iter()
        .map(|g| {
            let id = g.play.id.clone().unwrap_or_default();
            let mut out = Vec::new();
            for (t, r) in g.play.rounds.iter().enumerate() {
                if r.action.is_none() {
                    continue;
                }
                for (p1, p2) in r.dialogue.talking_pairs(&corpus.map) {
                    for result in detect(&corpus.map, &g.play, t, &p1, &p2, backend, model, mentions)? {
                        out.push(DetectionRecord {
                            game_id: id.clone(),
                            result,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_game.into_iter().flatten().collect())
}

pub fn write_detections(records: &[DetectionRecord], mut w: impl std::io::Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse("detections", format!("line {}: {e}", n + 1))))
        .collect()
}

/// Observations for every tuple of a corpus, in tuple order.
pub fn observe_tuples(
    corpus: &Corpus,
    tuples: &[LabeledTuple],
    backend: &IntentBackend,
    mentions: &MentionSource,
) -> Result<Vec<UnitObservation>> {
    tuples
        .par_iter()
        .map(|t| {
            let game = corpus
                .game(&t.game_id)
                .ok_or_else(|| Error::validation("tuples", format!("unknown game {}", t.game_id)))?;
            let round = game
                .play
                .rounds
                .iter()
                .position(|r| r.state.round == t.round)
                .ok_or_else(|| Error::validation("tuples", format!("{} has no round {}", t.game_id, t.round)))?;
            observe_unit(
                &corpus.map,
                &game.play,
                round,
                &t.power1,
                &t.power2,
                &t.unit,
                backend,
                mentions,
            )
        })
        .collect()
}

/// Trains on the train split. With `filtered` only tuples passing the
/// candidate filter are used, mirroring how the hybrid detector is applied.
pub fn train_on_split(
    tuples: &[LabeledTuple],
    observations: &[UnitObservation],
    filtered: bool,
    config: &TrainConfig,
) -> Result<LogisticModel> {
    let data: Vec<(IntentFeatures, bool)> = tuples
        .iter()
        .zip(observations)
        .filter(|(t, o)| t.split == Split::Train && (!filtered || o.passed_filter))
        .map(|(t, o)| (o.features, t.label))
        .collect();
    train_classifier(&data, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::load_map;
    use crate::mentions::Lexicon;

    fn levant() -> (MapGraph, GameState) {
        let map = load_map(include_str!("../fixtures/levant12.json")).unwrap();
        let s = GameState::initial(&map);
        (map, s)
    }

    fn unit_at(s: &GameState, p: &str) -> UnitId {
        s.unit_at(&p.into()).unwrap().0.clone()
    }

    #[test]
    fn filter_cases() {
        let (map, s) = levant();
        let lex = Lexicon::from_map(&map);
        let ion = unit_at(&s, "ION");
        // ENG F ION and ITA F AEG are adjacent
        let m = lex.find("go to the Eastern Med");
        assert!(candidate_filter(&map, &s, &"ENG".into(), &"ITA".into(), &ion, &m).unwrap());
        assert!(!candidate_filter(&map, &s, &"ENG".into(), &"ITA".into(), &ion, &MentionSet::new()).unwrap());
        assert!(candidate_filter(&map, &s, &"GER".into(), &"ITA".into(), &ion, &m).is_err());
    }

    #[test]
    fn features_identity_and_hand_values() {
        let (map, s) = levant();
        let u = unit_at(&s, "SMY");
        let d = ActionDistribution::uniform(&map, &s, &u).unwrap();
        let (f, _) = compute_features(&d, &d).unwrap();
        assert_eq!((f.delta_p, f.delta_h), (0.0, 0.0));
    }

    #[test]
    fn zero_model_gives_half() {
        let m = LogisticModel::zero();
        let x = IntentFeatures {
            p_star_before: 0.3,
            p_star_after: 0.9,
            delta_p: 0.6,
            h_before: 2.0,
            h_after: 0.1,
            delta_h: -1.9,
        };
        assert_eq!(m.probability(&x), 0.5);
    }

    #[test]
    fn sigmoid_is_monotone_and_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let mut prev = 0.0;
        for k in -50..=50 {
            let p = sigmoid(k as f64 * 0.5);
            assert!(p > prev);
            prev = p;
        }
    }
}
