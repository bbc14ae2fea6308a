//! Newline-delimited game logs: a header line (map and provenance), one
//! record per round, and a closing line with the terminal state.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{DialogueRound, Message, Play, PlayRound};
use crate::ids::{Power, ProvinceId, UnitId};
use crate::map::{MapDocument, MapGraph};
use crate::order::JointAction;
use crate::state::{GameState, Unit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub game_id: Option<String>,
    /// Absent for externally supplied games.
    pub seed: Option<u64>,
    pub generator: String,
}

impl Provenance {
    pub fn external() -> Self {
        Provenance {
            game_id: None,
            seed: None,
            generator: "external".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub units: BTreeMap<UnitId, Unit>,
    pub sc_ownership: BTreeMap<ProvinceId, Option<Power>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub state: StateRecord,
    pub messages: Vec<Message>,
    /// Absent on a trailing prediction-point round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<BTreeMap<UnitId, String>>,
}

impl RoundRecord {
    pub fn from_round(r: &PlayRound) -> Result<Self> {
        Ok(RoundRecord {
            round: r.state.round,
            state: StateRecord {
                units: r.state.units.clone(),
                sc_ownership: r.state.sc_ownership.clone(),
            },
            messages: r.dialogue.messages.clone(),
            orders: r.action.as_ref().map(|a| a.to_notation(&r.state)).transpose()?,
        })
    }

    pub fn to_round(&self, map: &MapGraph) -> Result<PlayRound> {
        let state = GameState {
            round: self.round,
            units: self.state.units.clone(),
            sc_ownership: self.state.sc_ownership.clone(),
        };
        state.validate(map)?;
        let action = match &self.orders {
            Some(o) => Some(JointAction::from_notation(map, &state, o)?),
            None => None,
        };
        Ok(PlayRound {
            state,
            dialogue: DialogueRound {
                messages: self.messages.clone(),
            },
            action,
        })
    }
}

/// Rounds of a play in log-record form.
pub fn play_records(play: &Play) -> Result<Vec<RoundRecord>> {
    play.rounds.iter().map(RoundRecord::from_round).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    map: MapDocument,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TerminalRecord {
    terminal: TerminalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TerminalState {
    round: u32,
    units: BTreeMap<UnitId, Unit>,
    sc_ownership: BTreeMap<ProvinceId, Option<Power>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameLog {
    pub map: MapGraph,
    pub provenance: Provenance,
    pub play: Play,
}

pub fn save_game_log(log: &GameLog, mut sink: impl Write) -> Result<()> {
    let header = Header {
        map: log.map.to_document(),
        provenance: log.provenance.clone(),
    };
    serde_json::to_writer(&mut sink, &header)?;
    sink.write_all(b"\n")?;
    for rec in play_records(&log.play)? {
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    if let Some(f) = &log.play.final_state {
        let t = TerminalRecord {
            terminal: TerminalState {
                round: f.round,
                units: f.units.clone(),
                sc_ownership: f.sc_ownership.clone(),
            },
        };
        serde_json::to_writer(&mut sink, &t)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn game_log_string(log: &GameLog) -> Result<String> {
    let mut buf = Vec::new();
    save_game_log(log, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn load_game_log(source: impl BufRead) -> Result<GameLog> {
    let mut lines = source.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines.next().ok_or_else(|| Error::parse("game log", "empty document"))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| Error::parse("game log header", e.to_string()))?;
    let map = MapGraph::from_document(header.map)?;

    let mut rounds = Vec::new();
    let mut final_state = None;
    for (idx, line) in lines {
        let line = line?;
        let k = rounds.len();
        if final_state.is_some() {
            return Err(Error::Round {
                round: k,
                message: "record after terminal state".into(),
            });
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Round {
            round: k,
            message: format!("line {}: {e}", idx + 1),
        })?;
        if value.get("terminal").is_some() {
            let t: TerminalRecord = serde_json::from_value(value).map_err(|e| Error::Round {
                round: k,
                message: format!("terminal record: {e}"),
            })?;
            let s = GameState {
                round: t.terminal.round,
                units: t.terminal.units,
                sc_ownership: t.terminal.sc_ownership,
            };
            final_state = Some(s);
            continue;
        }
        let rec: RoundRecord = serde_json::from_value(value).map_err(|e| Error::Round {
            round: k,
            message: e.to_string(),
        })?;
        let r = rec.to_round(&map).map_err(|e| Error::Round {
            round: k,
            message: e.to_string(),
        })?;
        rounds.push(r);
    }
    let play = Play {
        id: header.provenance.game_id.clone(),
        rounds,
        final_state,
    };
    play.validate(&map)?;
    Ok(GameLog {
        map,
        provenance: header.provenance,
        play,
    })
}

pub fn parse_game_log(text: &str) -> Result<GameLog> {
    load_game_log(text.as_bytes())
}
