//! Synthetic negotiation corpora: game logs plus labeled
//! (state, power1, power2, unit) tuples.

pub mod agents;
pub mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::Agreement;
use crate::error::{Error, Result};
use crate::game::{ordered_pair, simulate, Agent, Play};
use crate::ids::{Power, UnitId};
use crate::map::MapGraph;
use crate::seed::{derive_seed, rng_from_seed};
use agents::{Director, ScriptConfig, ScriptedNegotiator};
use log::{load_game_log, save_game_log, GameLog, Provenance};

pub const GENERATOR_ID: &str = "scripted-negotiators-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One row of the tuples table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTuple {
    pub game_id: String,
    pub round: u32,
    pub power1: Power,
    pub power2: Power,
    pub unit: UnitId,
    pub label: bool,
    /// Canonical notation of the pledged order, positives only.
    pub agreed_order: Option<String>,
    pub split: Split,
    /// Whether the pledged order was played, positives only.
    pub honored: Option<bool>,
}

impl LabeledTuple {
    pub fn key(&self) -> (&str, u32, &Power, &Power, &UnitId) {
        (&self.game_id, self.round, &self.power1, &self.power2, &self.unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_games: usize,
    pub honesty: f64,
    pub seed: u64,
    pub rounds: u32,
    pub split_ratio: f64,
}

impl CorpusConfig {
    pub fn new(n_games: usize, honesty: f64, seed: u64) -> Self {
        CorpusConfig {
            n_games,
            honesty,
            seed,
            rounds: 8,
            split_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub map: MapGraph,
    pub config: CorpusConfig,
    pub games: Vec<GameLog>,
    pub tuples: Vec<LabeledTuple>,
}

pub fn game_id(index: usize) -> String {
    format!("g{index:04}")
}

/// Simulates one scripted game; returns its log and the struck agreements.
pub fn generate_game(map: &MapGraph, index: usize, config: &CorpusConfig) -> Result<(GameLog, Vec<Agreement>)> {
    if !(0.0..=1.0).contains(&config.honesty) {
        return Err(Error::validation("honesty", "must lie in [0, 1]"));
    }
    let seed = derive_seed(config.seed, index as u64);
    let director = Director::new(ScriptConfig::with_honesty(config.honesty));
    let mut agents: Vec<Box<dyn Agent>> = map
        .powers()
        .iter()
        .map(|p| Box::new(ScriptedNegotiator::new(p.clone(), director.clone())) as Box<dyn Agent>)
        .collect();
    let mut play = simulate(map, &mut agents, config.rounds, seed)?;
    let id = game_id(index);
    play.id = Some(id.clone());
    let agreements = director.borrow().agreements.clone();
    Ok((
        GameLog {
            map: map.clone(),
            provenance: Provenance {
                game_id: Some(id),
                seed: Some(seed),
                generator: GENERATOR_ID.into(),
            },
            play,
        },
        agreements,
    ))
}

/// Positives for every pledged unit; negatives for all other units of
/// pairs that exchanged messages in the round.
pub fn label_tuples(map: &MapGraph, game_id: &str, play: &Play, agreements: &[Agreement]) -> Result<Vec<LabeledTuple>> {
    let mut out = Vec::new();
    for (k, r) in play.rounds.iter().enumerate() {
        let round = r.state.round;
        let mut positive: BTreeMap<(Power, Power, UnitId), (String, bool)> = BTreeMap::new();
        for a in agreements.iter().filter(|a| a.round == round) {
            let (p1, p2) = ordered_pair(map, &a.power_i, &a.power_j);
            let action = r.action.as_ref().ok_or_else(|| Error::Round {
                round: k,
                message: "labeled round without action".into(),
            })?;
            for (u, o) in [(&a.u1, &a.a1), (&a.u2, &a.a2)] {
                let played = action.get(u) == Some(o);
                positive.insert((p1.clone(), p2.clone(), u.clone()), (o.notation(u, &r.state)?, played));
            }
        }
        for (p1, p2) in r.dialogue.talking_pairs(map) {
            for (id, u) in &r.state.units {
                if u.power != p1 && u.power != p2 {
                    continue;
                }
                let hit = positive.get(&(p1.clone(), p2.clone(), id.clone()));
                out.push(LabeledTuple {
                    game_id: game_id.to_string(),
                    round,
                    power1: p1.clone(),
                    power2: p2.clone(),
                    unit: id.clone(),
                    label: hit.is_some(),
                    agreed_order: hit.map(|h| h.0.clone()),
                    split: Split::Train,
                    honored: hit.map(|h| h.1),
                });
            }
        }
    }
    Ok(out)
}

/// Generates `n_games` seeded games (in parallel) and their labeled tuples,
/// split stratified by label.
pub fn generate_labeled_corpus(map: &MapGraph, config: &CorpusConfig) -> Result<Corpus> {
    if config.n_games == 0 {
        return Err(Error::Precondition("n_games must be at least 1".into()));
    }
    let results: Vec<Result<(GameLog, Vec<LabeledTuple>)>> = (0..config.n_games)
        .into_par_iter()
        .map(|i| {
            let (log, agreements) = generate_game(map, i, config)?;
            let tuples = label_tuples(map, &game_id(i), &log.play, &agreements)?;
            Ok((log, tuples))
        })
        .collect();
    let mut games = Vec::with_capacity(config.n_games);
    let mut tuples = Vec::new();
    for r in results {
        let (g, t) = r?;
        games.push(g);
        tuples.extend(t);
    }
    let tuples = match split_train_test(&tuples, config.split_ratio, derive_seed(config.seed, u64::MAX)) {
        Ok((train, test)) => merge_split(&tuples, &train, &test),
        // too few positives to stratify: everything stays in train
        Err(_) => tuples,
    };
    Ok(Corpus {
        map: map.clone(),
        config: config.clone(),
        games,
        tuples,
    })
}

fn merge_split(all: &[LabeledTuple], train: &[LabeledTuple], test: &[LabeledTuple]) -> Vec<LabeledTuple> {
    let test_keys: BTreeSet<_> = test.iter().map(|t| t.key()).collect();
    debug_assert_eq!(train.len() + test.len(), all.len());
    all.iter()
        .map(|t| {
            let mut t = t.clone();
            t.split = if test_keys.contains(&t.key()) {
                Split::Test
            } else {
                Split::Train
            };
            t
        })
        .collect()
}

/// Seeded split, stratified by label, with exact overall sizes. Both
/// outputs keep the input order.
pub fn split_train_test(
    tuples: &[LabeledTuple],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledTuple>, Vec<LabeledTuple>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Precondition(format!("ratio {ratio} outside (0, 1)")));
    }
    let classes: [Vec<usize>; 2] = [
        (0..tuples.len()).filter(|&i| !tuples[i].label).collect(),
        (0..tuples.len()).filter(|&i| tuples[i].label).collect(),
    ];
    for (c, members) in classes.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Precondition(format!(
                "class {} has {} members; stratification needs at least 2",
                c == 1,
                members.len()
            )));
        }
    }
    // largest-remainder apportionment of the train total
    let total = (ratio * tuples.len() as f64).round() as usize;
    let exact: Vec<f64> = classes.iter().map(|m| ratio * m.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut k = 0;
    while quota.iter().sum::<usize>() < total {
        quota[order[k % 2]] += 1;
        k += 1;
    }
    for (c, members) in classes.iter().enumerate() {
        // both sides of every class stay non-empty
        quota[c] = quota[c].clamp(1, members.len() - 1);
    }

    let mut rng = rng_from_seed(seed);
    let mut in_train = vec![false; tuples.len()];
    for (c, members) in classes.iter().enumerate() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..quota[c]] {
            in_train[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, t) in tuples.iter().enumerate() {
        let mut t = t.clone();
        if in_train[i] {
            t.split = Split::Train;
            train.push(t);
        } else {
            t.split = Split::Test;
            test.push(t);
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n: usize,
    pub positives: usize,
    pub positive_rate: f64,
    pub agreements: usize,
    pub honored: usize,
    /// Honored agreements over agreements with a known outcome.
    pub honored_rate: Option<f64>,
}

impl DatasetStats {
    pub fn from_counts(n: usize, positives: usize, agreements: usize, honored: usize) -> Self {
        DatasetStats {
            n,
            positives,
            positive_rate: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
            agreements,
            honored,
            honored_rate: (agreements > 0).then(|| honored as f64 / agreements as f64),
        }
    }
}

/// Counts over tuples; positives of one (game, round, pair) form one agreement,
/// honored when every pledged unit played its order.
pub fn dataset_stats(tuples: &[LabeledTuple]) -> Result<DatasetStats> {
    if tuples.is_empty() {
        return Err(Error::Precondition("no tuples".into()));
    }
    let positives = tuples.iter().filter(|t| t.label).count();
    let mut groups: BTreeMap<(&str, u32, &Power, &Power), Option<bool>> = BTreeMap::new();
    for t in tuples.iter().filter(|t| t.label) {
        let g = groups
            .entry((&t.game_id, t.round, &t.power1, &t.power2))
            .or_insert(Some(true));
        *g = match (*g, t.honored) {
            (Some(a), Some(b)) => Some(a && b),
            _ => None,
        };
    }
    let known: Vec<bool> = groups.values().flatten().copied().collect();
    let mut s = DatasetStats::from_counts(
        tuples.len(),
        positives,
        known.len(),
        known.iter().filter(|h| **h).count(),
    );
    s.agreements = groups.len();
    Ok(s)
}

/// Rebuilds the labeled agreements of a game from its positive tuples.
pub fn labeled_agreements(map: &MapGraph, game: &GameLog, tuples: &[LabeledTuple]) -> Result<Vec<Agreement>> {
    let id = game.play.id.clone().unwrap_or_default();
    let mut groups: BTreeMap<(u32, Power, Power), Vec<&LabeledTuple>> = BTreeMap::new();
    for t in tuples.iter().filter(|t| t.label && t.game_id == id) {
        groups
            .entry((t.round, t.power1.clone(), t.power2.clone()))
            .or_default()
            .push(t);
    }
    let mut out = Vec::new();
    for ((round, p1, p2), members) in groups {
        let r = game
            .play
            .rounds
            .iter()
            .find(|r| r.state.round == round)
            .ok_or_else(|| Error::validation("tuples", format!("{id} has no round {round}")))?;
        let state = &r.state;
        let side = |p: &Power| {
            members
                .iter()
                .copied()
                .find(|t| state.units.get(&t.unit).is_some_and(|u| &u.power == p))
        };
        let (Some(t1), Some(t2)) = (side(&p1), side(&p2)) else {
            return Err(Error::validation(
                "tuples",
                format!("{id} round {round} {p1}-{p2}: agreement needs one unit per side"),
            ));
        };
        let parse = |t: &LabeledTuple| -> Result<crate::order::Order> {
            let text = t
                .agreed_order
                .as_deref()
                .ok_or_else(|| Error::validation("agreed_order", format!("missing for {}", t.unit)))?;
            crate::order::Order::parse_for(text, &t.unit, state)
        };
        let a = Agreement {
            round,
            power_i: p1.clone(),
            power_j: p2.clone(),
            u1: t1.unit.clone(),
            u2: t2.unit.clone(),
            a1: parse(t1)?,
            a2: parse(t2)?,
        };
        a.validate(map, state)?;
        out.push(a);
    }
    Ok(out)
}

const TUPLES_FILE: &str = "tuples.csv";
const MANIFEST_FILE: &str = "manifest.json";
const GAMES_DIR: &str = "games";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub config: CorpusConfig,
    pub games: Vec<String>,
    pub stats: Option<DatasetStats>,
}

#[derive(Serialize, Deserialize)]
struct TupleRow {
    game_id: String,
    round: u32,
    power1: String,
    power2: String,
    unit: String,
    label: u8,
    agreed_order: String,
    split: Split,
    honored: String,
}

pub fn write_tuples(tuples: &[LabeledTuple], sink: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for t in tuples {
        w.serialize(TupleRow {
            game_id: t.game_id.clone(),
            round: t.round,
            power1: t.power1.to_string(),
            power2: t.power2.to_string(),
            unit: t.unit.to_string(),
            label: u8::from(t.label),
            agreed_order: t.agreed_order.clone().unwrap_or_default(),
            split: t.split,
            honored: match t.honored {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            },
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tuples(source: impl std::io::Read) -> Result<Vec<LabeledTuple>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for (k, row) in r.deserialize::<TupleRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(format!("tuples row {}", k + 1), e.to_string()))?;
        let label = match row.label {
            0 => false,
            1 => true,
            v => return Err(Error::parse(format!("tuples row {}", k + 1), format!("label {v}"))),
        };
        let honored = match row.honored.as_str() {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            v => return Err(Error::parse(format!("tuples row {}", k + 1), format!("honored {v}"))),
        };
        out.push(LabeledTuple {
            game_id: row.game_id,
            round: row.round,
            power1: row.power1.into(),
            power2: row.power2.into(),
            unit: row.unit.into(),
            label,
            agreed_order: (!row.agreed_order.is_empty()).then_some(row.agreed_order),
            split: row.split,
            honored,
        });
    }
    Ok(out)
}

impl Corpus {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let games_dir = dir.join(GAMES_DIR);
        fs::create_dir_all(&games_dir)?;
        let mut ids = Vec::new();
        for g in &self.games {
            let id = g
                .play
                .id
                .clone()
                .ok_or_else(|| Error::validation("game", "missing id"))?;
            let f = fs::File::create(games_dir.join(format!("{id}.jsonl")))?;
            let mut w = std::io::BufWriter::new(f);
            save_game_log(g, &mut w)?;
            std::io::Write::flush(&mut w)?;
            ids.push(id);
        }
        let f = fs::File::create(dir.join(TUPLES_FILE))?;
        write_tuples(&self.tuples, f)?;
        let manifest = Manifest {
            generator: GENERATOR_ID.into(),
            config: self.config.clone(),
            games: ids,
            stats: dataset_stats(&self.tuples).ok(),
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::validation("corpus", format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))?;
        let mut games = Vec::new();
        for id in &manifest.games {
            let path = dir.join(GAMES_DIR).join(format!("{id}.jsonl"));
            let f =
                fs::File::open(&path).map_err(|e| Error::validation("corpus", format!("{}: {e}", path.display())))?;
            let g = load_game_log(BufReader::new(f))
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            games.push(g);
        }
        let map = games
            .first()
            .map(|g| g.map.clone())
            .ok_or_else(|| Error::validation("corpus", "no games"))?;
        let tuples_path = dir.join(TUPLES_FILE);
        let tuples = match fs::File::open(&tuples_path) {
            Ok(f) => read_tuples(f)?,
            Err(_) => Vec::new(),
        };
        Ok(Corpus {
            map,
            config: manifest.config,
            games,
            tuples,
        })
    }

    pub fn game(&self, id: &str) -> Option<&GameLog> {
        self.games.iter().find(|g| g.play.id.as_deref() == Some(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(i: usize, label: bool) -> LabeledTuple {
        LabeledTuple {
            game_id: "g0000".into(),
            round: 0,
            power1: "A".into(),
            power2: "B".into(),
            unit: UnitId::new(format!("U{i}")),
            label,
            agreed_order: None,
            split: Split::Train,
            honored: None,
        }
    }

    #[test]
    fn split_sizes_and_stratification() {
        let tuples: Vec<_> = (0..100).map(|i| tuple(i, i % 10 == 0)).collect();
        let (train, test) = split_train_test(&tuples, 0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        assert_eq!(train.iter().filter(|t| t.label).count(), 8);
        let again = split_train_test(&tuples, 0.8, 3).unwrap();
        assert_eq!(again.0, train);
    }

    #[test]
    fn single_class_cannot_be_stratified() {
        let tuples: Vec<_> = (0..10).map(|i| tuple(i, true)).collect();
        assert!(split_train_test(&tuples, 0.8, 0).is_err());
    }

    #[test]
    fn stats_from_counts() {
        let s = DatasetStats::from_counts(16962, 444, 11008, 8344);
        assert!((s.positive_rate - 0.0262).abs() < 5e-5);
        assert!((s.honored_rate.unwrap() - 0.758).abs() < 5e-4);
        let one = dataset_stats(&[tuple(0, true)]).unwrap();
        assert_eq!(one.positive_rate, 1.0);
        assert!(dataset_stats(&[]).is_err());
    }

    #[test]
    fn tuples_csv_round_trip() {
        let mut t = tuple(1, true);
        t.agreed_order = Some("A VIE - GAL".into());
        t.honored = Some(false);
        t.split = Split::Test;
        let rows = vec![t, tuple(2, false)];
        let mut buf = Vec::new();
        write_tuples(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("game_id,round,power1,power2,unit,label,agreed_order,split,honored"));
        assert_eq!(read_tuples(buf.as_slice()).unwrap(), rows);
    }
}
