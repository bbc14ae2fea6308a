use std::collections::BTreeSet;
use std::fs;

use coalition_core::corpus::log::{game_log_string, parse_game_log, GameLog, Provenance};
use coalition_core::corpus::{
    dataset_stats, generate_game, labeled_agreements, read_tuples, split_train_test, write_tuples,
};
use coalition_core::{
    generate_labeled_corpus, honored, load_map, simulate, Agent, Corpus, CorpusConfig, Error, HoldAgent, LabeledTuple,
    MapGraph, Split,
};
use proptest::prelude::*;

fn levant() -> MapGraph {
    load_map(include_str!("../fixtures/levant12.json")).unwrap()
}

fn hold_agents(map: &MapGraph) -> Vec<Box<dyn Agent>> {
    map.powers()
        .iter()
        .map(|p| Box::new(HoldAgent(p.clone())) as Box<dyn Agent>)
        .collect()
}

fn corpus_bytes(c: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    for g in &c.games {
        out.extend(game_log_string(g).unwrap().into_bytes());
    }
    write_tuples(&c.tuples, &mut out).unwrap();
    out
}

#[test]
fn one_round_silent_play_round_trips() {
    let map = levant();
    let play = simulate(&map, &mut hold_agents(&map), 1, 0).unwrap();
    assert!(play.rounds[0].dialogue.messages.is_empty());
    let log = GameLog {
        map: map.clone(),
        provenance: Provenance::external(),
        play,
    };
    assert_eq!(parse_game_log(&game_log_string(&log).unwrap()).unwrap(), log);
}

#[test]
fn ten_round_scripted_play_round_trips() {
    let map = levant();
    let mut config = CorpusConfig::new(1, 0.5, 3);
    config.rounds = 10;
    let (log, _) = generate_game(&map, 0, &config).unwrap();
    assert_eq!(log.play.len(), 10);
    assert!(log.play.rounds.iter().any(|r| !r.dialogue.messages.is_empty()));
    let text = game_log_string(&log).unwrap();
    let back = parse_game_log(&text).unwrap();
    assert_eq!(back, log);
    assert_eq!(game_log_string(&back).unwrap(), text);
}

#[test]
fn corrupted_record_names_its_round() {
    let map = levant();
    let (log, _) = generate_game(&map, 0, &CorpusConfig::new(1, 1.0, 5)).unwrap();
    let text = game_log_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // line 0 is the header, so line 3 is round index 2
    lines[3] = lines[3].replacen("\"state\"", "\"stat\"", 1);
    let err = parse_game_log(&lines.join("\n")).unwrap_err();
    assert!(matches!(err, Error::Round { round: 2, .. }), "{err}");
    assert!(err.to_string().contains("round 2"));

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[5] = "{not json".into();
    let err = parse_game_log(&lines.join("\n")).unwrap_err();
    assert!(matches!(err, Error::Round { round: 4, .. }), "{err}");
}

#[test]
fn generation_is_deterministic() {
    let map = levant();
    let config = CorpusConfig::new(3, 0.6, 42);
    let a = generate_labeled_corpus(&map, &config).unwrap();
    let b = generate_labeled_corpus(&map, &config).unwrap();
    assert_eq!(corpus_bytes(&a), corpus_bytes(&b));
    let c = generate_labeled_corpus(&map, &CorpusConfig::new(3, 0.6, 43)).unwrap();
    assert_ne!(corpus_bytes(&a), corpus_bytes(&c));
}

#[test]
fn saved_corpus_loads_identically() {
    let map = levant();
    let corpus = generate_labeled_corpus(&map, &CorpusConfig::new(2, 0.7, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.save(dir.path()).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    assert_eq!(back, corpus);
    let again = tempfile::tempdir().unwrap();
    back.save(again.path()).unwrap();
    for f in ["manifest.json", "tuples.csv", "games/g0000.jsonl", "games/g0001.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn honest_agents_play_every_agreement() {
    let map = levant();
    let corpus = generate_labeled_corpus(&map, &CorpusConfig::new(10, 1.0, 1)).unwrap();
    let mut n = 0;
    for g in &corpus.games {
        for a in labeled_agreements(&map, g, &corpus.tuples).unwrap() {
            let r = g.play.rounds.iter().find(|r| r.state.round == a.round).unwrap();
            assert!(honored(&a, r.action.as_ref().unwrap()).both(), "{a:?}");
            n += 1;
        }
    }
    assert!(n > 20, "only {n} agreements");
    assert_eq!(dataset_stats(&corpus.tuples).unwrap().honored_rate, Some(1.0));
}

#[test]
fn dishonest_agents_rarely_play_pledged_orders() {
    let map = levant();
    let corpus = generate_labeled_corpus(&map, &CorpusConfig::new(80, 0.0, 2)).unwrap();
    let stats = dataset_stats(&corpus.tuples).unwrap();
    assert!(stats.agreements >= 500, "{} agreements", stats.agreements);
    let pledged: Vec<&LabeledTuple> = corpus.tuples.iter().filter(|t| t.label).collect();
    let played = pledged.iter().filter(|t| t.honored == Some(true)).count();
    let rate = played as f64 / pledged.len() as f64;
    assert!(rate < 0.2, "played fraction {rate}");
}

#[test]
fn tuples_are_well_formed() {
    let map = levant();
    let corpus = generate_labeled_corpus(&map, &CorpusConfig::new(6, 0.7, 11)).unwrap();
    let mut keys = BTreeSet::new();
    for t in &corpus.tuples {
        assert!(keys.insert(t.key()), "duplicate key {:?}", t.key());
        assert!(map.power_index(&t.power1) < map.power_index(&t.power2));
        let g = corpus.game(&t.game_id).unwrap();
        let state = &g.play.rounds.iter().find(|r| r.state.round == t.round).unwrap().state;
        let owner = &state.units[&t.unit].power;
        assert!(owner == &t.power1 || owner == &t.power2);
        assert_eq!(t.label, t.agreed_order.is_some());
        assert_eq!(t.label, t.honored.is_some());
    }
    let test = corpus.tuples.iter().filter(|t| t.split == Split::Test).count();
    let expected = corpus.tuples.len() as f64 * 0.2;
    assert!((test as f64 - expected).abs() <= 2.0, "{test} test tuples");
}

#[test]
fn tuples_csv_round_trips_for_a_corpus() {
    let map = levant();
    let corpus = generate_labeled_corpus(&map, &CorpusConfig::new(2, 0.5, 4)).unwrap();
    let mut buf = Vec::new();
    write_tuples(&corpus.tuples, &mut buf).unwrap();
    assert_eq!(read_tuples(buf.as_slice()).unwrap(), corpus.tuples);
}

#[test]
fn large_corpus_rates() {
    let s = coalition_core::corpus::DatasetStats::from_counts(16962, 444, 11008, 8344);
    assert!((s.positive_rate - 0.026).abs() < 1e-3);
    assert!((s.honored_rate.unwrap() - 0.758).abs() < 1e-3);
}

fn tuple(i: usize, label: bool) -> LabeledTuple {
    LabeledTuple {
        game_id: "g".into(),
        round: (i / 7) as u32,
        power1: "A".into(),
        power2: "B".into(),
        unit: format!("U{i}").as_str().into(),
        label,
        agreed_order: None,
        split: Split::Train,
        honored: None,
    }
}

proptest! {
    #[test]
    fn split_is_stratified_disjoint_and_exhaustive(
        labels in prop::collection::vec(any::<bool>(), 4..120),
        ratio in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let tuples: Vec<LabeledTuple> = labels.iter().enumerate().map(|(i, l)| tuple(i, *l)).collect();
        let pos = labels.iter().filter(|l| **l).count();
        let neg = labels.len() - pos;
        match split_train_test(&tuples, ratio, seed) {
            Err(_) => prop_assert!(pos < 2 || neg < 2),
            Ok((train, test)) => {
                prop_assert_eq!(train.len() + test.len(), tuples.len());
                let tr: BTreeSet<_> = train.iter().map(|t| t.unit.clone()).collect();
                let te: BTreeSet<_> = test.iter().map(|t| t.unit.clone()).collect();
                prop_assert!(tr.is_disjoint(&te));
                for (class, total) in [(true, pos), (false, neg)] {
                    let got = train.iter().filter(|t| t.label == class).count() as f64;
                    prop_assert!((got - ratio * total as f64).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
