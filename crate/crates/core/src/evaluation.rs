//! Ranking and classification metrics and the experiments built on them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{honored, Agreement};
use crate::corpus::{labeled_agreements, Corpus, Split};
use crate::detection::{
    construct_agreements, observe_tuples, train_on_split, DetectionRecord, DetectionResult, TrainConfig,
};
use crate::equilibrium::ValueFunction;
use crate::error::{Error, Result};
use crate::ids::{Power, UnitId};
use crate::intent::{IntentBackend, IntentTable, TableKey, WireEntry};
use crate::mentions::MentionSource;
use crate::order::legal_orders;
use crate::rationalizability::{min_max, rank_order, sample_alternatives, score_agreement_set, ScoringConfig};
use crate::seed::{derive_seed, derive_seed_str};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub universe: usize,
    /// 0-based rank of the ground-truth agreement.
    pub rank: usize,
    pub honored: bool,
    /// Normalized score of the ground-truth agreement.
    pub p: f64,
}

/// Mean of `1/(rank+1)`, counting ranks at or beyond `k` as zero.
pub fn mrr_at_k(cases: &[RankedCase], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    if cases.is_empty() {
        return Err(Error::Precondition("no ranked cases".into()));
    }
    let total: f64 = cases
        .iter()
        .map(|c| if c.rank < k { 1.0 / (c.rank + 1) as f64 } else { 0.0 })
        .sum();
    Ok(total / cases.len() as f64)
}

/// Mean `(1 - p)^2` of each group; `None` for an empty group.
pub fn brier_by_group(cases: &[RankedCase]) -> (Option<f64>, Option<f64>) {
    let group = |honored: bool| {
        let ps: Vec<f64> = cases.iter().filter(|c| c.honored == honored).map(|c| c.p).collect();
        if ps.is_empty() {
            None
        } else {
            Some(ps.iter().map(|p| (1.0 - p).powi(2)).sum::<f64>() / ps.len() as f64)
        }
    };
    (group(true), group(false))
}

/// Precision, recall and F1 with zero for empty denominators.
pub fn prf1(predictions: &[bool], labels: &[bool]) -> Result<(f64, f64, f64)> {
    if predictions.len() != labels.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Precondition("no predictions".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok((precision, recall, f1_from(precision, recall)))
}

/// Harmonic mean of precision and recall.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf1 {
    pub fn of(predictions: &[bool], labels: &[bool]) -> Result<Self> {
        let (precision, recall, f1) = prf1(predictions, labels)?;
        Ok(Prf1 { precision, recall, f1 })
    }
}

/// Test-split scores of the hybrid detector and its two ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionComparison {
    pub hybrid: Prf1,
    pub classifier_only: Prf1,
    pub filter_only: Prf1,
    pub hybrid_threshold: f64,
    pub classifier_only_threshold: f64,
    pub test_size: usize,
    pub test_positives: usize,
}

pub fn compare_detectors(
    corpus: &Corpus,
    backend: &IntentBackend,
    mentions: &MentionSource,
    config: &TrainConfig,
) -> Result<DetectionComparison> {
    let obs = observe_tuples(corpus, &corpus.tuples, backend, mentions)?;
    let hybrid = train_on_split(&corpus.tuples, &obs, true, config)?;
    let plain = train_on_split(&corpus.tuples, &obs, false, config)?;
    let mut labels = Vec::new();
    let mut p_hybrid = Vec::new();
    let mut p_plain = Vec::new();
    let mut p_filter = Vec::new();
    for (t, o) in corpus.tuples.iter().zip(&obs) {
        if t.split != Split::Test {
            continue;
        }
        labels.push(t.label);
        p_hybrid.push(o.passed_filter && hybrid.predict(&o.features));
        p_plain.push(plain.predict(&o.features));
        p_filter.push(o.passed_filter);
    }
    Ok(DetectionComparison {
        hybrid: Prf1::of(&p_hybrid, &labels)?,
        classifier_only: Prf1::of(&p_plain, &labels)?,
        filter_only: Prf1::of(&p_filter, &labels)?,
        hybrid_threshold: hybrid.threshold,
        classifier_only_threshold: plain.threshold,
        test_size: labels.len(),
        test_positives: labels.iter().filter(|l| **l).count(),
    })
}

/// An agreement to rank, located in a corpus game.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInput {
    pub game_id: String,
    pub agreement: Agreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreementSource {
    Labeled,
    Detected,
}

/// Ground-truth agreements reconstructed from the labeled tuples.
pub fn labeled_cases(corpus: &Corpus) -> Result<Vec<CaseInput>> {
    let mut out = Vec::new();
    for g in &corpus.games {
        let id = g.play.id.clone().unwrap_or_default();
        for a in labeled_agreements(&corpus.map, g, &corpus.tuples)? {
            out.push(CaseInput {
                game_id: id.clone(),
                agreement: a,
            });
        }
    }
    Ok(out)
}

/// Agreements paired from positive detections, per game, round and pair.
pub fn detected_cases(corpus: &Corpus, records: &[DetectionRecord]) -> Result<Vec<CaseInput>> {
    let mut groups: BTreeMap<(String, u32, Power, Power), Vec<DetectionResult>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.game_id.clone(),
                r.result.round,
                r.result.power1.clone(),
                r.result.power2.clone(),
            ))
            .or_default()
            .push(r.result.clone());
    }
    let mut out = Vec::new();
    for ((game_id, round, _, _), results) in groups {
        let game = corpus
            .game(&game_id)
            .ok_or_else(|| Error::validation("detections", format!("unknown game {game_id}")))?;
        let state = &game
            .play
            .rounds
            .iter()
            .find(|r| r.state.round == round)
            .ok_or_else(|| Error::validation("detections", format!("{game_id} has no round {round}")))?
            .state;
        for a in construct_agreements(&corpus.map, state, &results)? {
            out.push(CaseInput {
                game_id: game_id.clone(),
                agreement: a,
            });
        }
    }
    Ok(out)
}

/// Unit-level detection scores against the corpus labels; units without a
/// labeled tuple count as negatives.
pub fn detection_scores(corpus: &Corpus, records: &[DetectionRecord]) -> Result<Prf1> {
    let labels: BTreeMap<(String, u32, Power, Power, UnitId), bool> = corpus
        .tuples
        .iter()
        .map(|t| {
            (
                (
                    t.game_id.clone(),
                    t.round,
                    t.power1.clone(),
                    t.power2.clone(),
                    t.unit.clone(),
                ),
                t.label,
            )
        })
        .collect();
    let mut preds = Vec::with_capacity(records.len());
    let mut truth = Vec::with_capacity(records.len());
    for r in records {
        let k = (
            r.game_id.clone(),
            r.result.round,
            r.result.power1.clone(),
            r.result.power2.clone(),
            r.result.unit.clone(),
        );
        preds.push(r.result.label);
        truth.push(labels.get(&k).copied().unwrap_or(false));
    }
    Prf1::of(&preds, &truth)
}

/// Intent table that puts `mass` on each unit's played order once dialogue
/// is seen (the rest spread evenly over its other legal orders) and is
/// uniform before dialogue.
pub fn played_order_table(corpus: &Corpus, mass: f64) -> Result<IntentTable> {
    if !(0.0..=1.0).contains(&mass) {
        return Err(Error::validation("mass", "must lie in [0, 1]"));
    }
    let map = &corpus.map;
    let mut table = IntentTable::default();
    for g in &corpus.games {
        for r in &g.play.rounds {
            let Some(action) = &r.action else { continue };
            for id in r.state.units.keys() {
                let legal = legal_orders(map, &r.state, id)?;
                let played = action.get(id).ok_or_else(|| Error::MissingOrder(id.clone()))?;
                let n = legal.len() as f64;
                let mut before = Vec::with_capacity(legal.len());
                let mut after = Vec::with_capacity(legal.len());
                for o in &legal {
                    let order = o.notation(id, &r.state)?;
                    let p = if legal.len() == 1 {
                        1.0
                    } else if o == played {
                        mass
                    } else {
                        (1.0 - mass) / (n - 1.0)
                    };
                    before.push(WireEntry {
                        order: order.clone(),
                        p: 1.0 / n,
                    });
                    after.push(WireEntry { order, p });
                }
                for (use_dialogue, support) in [(false, before), (true, after)] {
                    table.insert(
                        TableKey {
                            game: g.play.id.clone(),
                            round: r.state.round,
                            unit: id.clone(),
                            use_dialogue,
                        },
                        support,
                    );
                }
            }
        }
    }
    Ok(table)
}

/// Which raw agreement values the value-only baseline ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueBaseline {
    /// `V_i + V_j`.
    #[default]
    Sum,
    /// `V_i * V_j`.
    Product,
    /// `V_i` alone.
    Initiator,
}

impl ValueBaseline {
    pub fn combine(self, v_i: f64, v_j: f64) -> f64 {
        match self {
            ValueBaseline::Sum => v_i + v_j,
            ValueBaseline::Product => v_i * v_j,
            ValueBaseline::Initiator => v_i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub k_alternatives: usize,
    pub scoring: ScoringConfig,
    pub baseline: ValueBaseline,
    pub seed: u64,
}

/// MRR and Brier per honored/violated group; `None` for an empty group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub mrr_at_1_honored: Option<f64>,
    pub mrr_at_5_honored: Option<f64>,
    pub mrr_at_1_violated: Option<f64>,
    pub mrr_at_5_violated: Option<f64>,
    pub brier_honored: Option<f64>,
    pub brier_violated: Option<f64>,
}

impl GroupMetrics {
    pub fn from_cases(cases: &[RankedCase]) -> Result<Self> {
        let (h, v): (Vec<RankedCase>, Vec<RankedCase>) = cases.iter().partition(|c| c.honored);
        let mrr = |group: &[RankedCase], k| {
            if group.is_empty() {
                Ok(None)
            } else {
                mrr_at_k(group, k).map(Some)
            }
        };
        let (brier_honored, brier_violated) = brier_by_group(cases);
        Ok(GroupMetrics {
            mrr_at_1_honored: mrr(&h, 1)?,
            mrr_at_5_honored: mrr(&h, 5)?,
            mrr_at_1_violated: mrr(&v, 1)?,
            mrr_at_5_violated: mrr(&v, 5)?,
            brier_honored,
            brier_violated,
        })
    }
}

/// One ranked agreement with both scoring methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub game_id: String,
    pub round: u32,
    pub power_i: Power,
    pub power_j: Power,
    pub a1: String,
    pub a2: String,
    pub honored: bool,
    pub universe: usize,
    pub exhausted: bool,
    pub r_rank: usize,
    pub r_wt: f64,
    /// Score normalized within the candidate set.
    pub r_score: f64,
    pub value_rank: usize,
    pub value_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: AgreementSource,
    pub config: ExperimentConfig,
    pub cases: usize,
    pub honored: usize,
    pub violated: usize,
    pub exhausted: usize,
    pub r_score: GroupMetrics,
    pub value: GroupMetrics,
    pub detection: Option<Prf1>,
    /// Metrics that could not be computed and why.
    pub flags: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn case_seed(seed: u64, game_id: &str, a: &Agreement) -> u64 {
    derive_seed_str(
        seed,
        &format!("{game_id}|{}|{}|{}|{}|{}", a.round, a.power_i, a.power_j, a.u1, a.u2),
    )
}

fn rank_case(
    corpus: &Corpus,
    case: &CaseInput,
    value_fn: &ValueFunction,
    backend: &IntentBackend,
    config: &ExperimentConfig,
) -> Result<CaseRow> {
    let map = &corpus.map;
    let game = corpus
        .game(&case.game_id)
        .ok_or_else(|| Error::validation("cases", format!("unknown game {}", case.game_id)))?;
    let a = &case.agreement;
    let idx = game
        .play
        .rounds
        .iter()
        .position(|r| r.state.round == a.round)
        .ok_or_else(|| Error::validation("cases", format!("{} has no round {}", case.game_id, a.round)))?;
    let round = &game.play.rounds[idx];
    let played = round
        .action
        .as_ref()
        .ok_or_else(|| Error::validation("cases", format!("round {} of {} was not played", a.round, case.game_id)))?;
    let prefix = game.play.prefix(idx)?;
    let seed = case_seed(config.seed, &case.game_id, a);
    let alts = sample_alternatives(map, &round.state, a, config.k_alternatives, derive_seed(seed, 0))?;
    let scored = score_agreement_set(
        map,
        &prefix,
        &alts.universe,
        value_fn,
        backend,
        &config.scoring,
        derive_seed(seed, 1),
    )?;
    let target = scored
        .iter()
        .find(|s| &s.agreement == a)
        .ok_or_else(|| Error::Precondition("original agreement missing from its universe".into()))?;
    let sums: Vec<f64> = scored.iter().map(|s| config.baseline.combine(s.v_i, s.v_j)).collect();
    let notations: Vec<(String, String)> = scored.iter().map(|s| s.notation.clone()).collect();
    let order = rank_order(&sums, &notations);
    let pos = scored.iter().position(|s| &s.agreement == a).unwrap_or(0);
    let value_rank = order.iter().position(|&i| i == pos).unwrap_or(0);
    let value_score = min_max(&sums)[pos];
    Ok(CaseRow {
        game_id: case.game_id.clone(),
        round: a.round,
        power_i: a.power_i.clone(),
        power_j: a.power_j.clone(),
        a1: target.notation.0.clone(),
        a2: target.notation.1.clone(),
        honored: honored(a, played).both(),
        universe: scored.len(),
        exhausted: alts.exhausted,
        r_rank: target.rank,
        r_wt: target.wt,
        r_score: target.wt_norm,
        value_rank,
        value_score,
    })
}

/// Ranks each case's agreement among sampled alternatives by the
/// rationalizability score and by the value-only baseline.
pub fn run_ranking_experiment(
    corpus: &Corpus,
    source: AgreementSource,
    cases: &[CaseInput],
    value_fn: &ValueFunction,
    backend: &IntentBackend,
    config: &ExperimentConfig,
) -> Result<(EvalReport, Vec<CaseRow>)> {
    if cases.is_empty() {
        return Err(Error::Precondition("no agreements to rank".into()));
    }
    config.scoring.equilibrium.validate()?;
    value_fn.check_map(&corpus.map)?;
    let rows: Vec<CaseRow> = cases
        .par_iter()
        .map(|c| rank_case(corpus, c, value_fn, backend, config))
        .collect::<Result<_>>()?;
    let to_cases = |r_method: bool| -> Vec<RankedCase> {
        rows.iter()
            .map(|r| RankedCase {
                universe: r.universe,
                rank: if r_method { r.r_rank } else { r.value_rank },
                honored: r.honored,
                p: if r_method { r.r_score } else { r.value_score },
            })
            .collect()
    };
    let honored_n = rows.iter().filter(|r| r.honored).count();
    let mut flags = Vec::new();
    if honored_n == 0 {
        flags.push("no honored agreements: honored metrics absent".to_string());
    }
    if honored_n == rows.len() {
        flags.push("no violated agreements: violated metrics absent".to_string());
    }
    let report = EvalReport {
        source,
        config: *config,
        cases: rows.len(),
        honored: honored_n,
        violated: rows.len() - honored_n,
        exhausted: rows.iter().filter(|r| r.exhausted).count(),
        r_score: GroupMetrics::from_cases(&to_cases(true))?,
        value: GroupMetrics::from_cases(&to_cases(false))?,
        detection: None,
        flags,
    };
    Ok((report, rows))
}

pub fn write_case_rows(rows: &[CaseRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(rank: usize, honored: bool, p: f64) -> RankedCase {
        RankedCase {
            universe: 10,
            rank,
            honored,
            p,
        }
    }

    #[test]
    fn mrr_hand_cases() {
        assert_eq!(mrr_at_k(&[case(0, true, 1.0)], 1).unwrap(), 1.0);
        assert_eq!(mrr_at_k(&[case(1, true, 1.0), case(3, true, 1.0)], 5).unwrap(), 0.375);
        assert_eq!(mrr_at_k(&[case(2, true, 1.0)], 1).unwrap(), 0.0);
        assert!(mrr_at_k(&[], 1).is_err());
    }

    #[test]
    fn brier_hand_cases() {
        assert_eq!(brier_by_group(&[case(0, true, 1.0)]), (Some(0.0), None));
        assert_eq!(brier_by_group(&[case(0, false, 0.0)]), (None, Some(1.0)));
        let (h, _) = brier_by_group(&[case(0, true, 0.8), case(0, true, 0.6)]);
        assert!((h.unwrap() - 0.10).abs() < 1e-12);
    }

    #[test]
    fn f1_hand_pairs() {
        assert!((f1_from(0.63, 0.48) - 0.545).abs() < 1e-3);
        assert!((f1_from(0.26, 0.47) - 0.335).abs() < 1e-3);
        assert_eq!(prf1(&[true, false], &[true, false]).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(prf1(&[false, false], &[true, false]).unwrap(), (0.0, 0.0, 0.0));
        assert!(prf1(&[true], &[true, false]).is_err());
    }
}
