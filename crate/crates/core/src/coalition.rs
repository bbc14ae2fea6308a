//! Agreements and the weighted coalition multigraph over players.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{Power, UnitId};
use crate::map::MapGraph;
use crate::order::{check_legal, JointAction, Order};
use crate::state::GameState;

/// Pledge `(u1, u2, a1, a2)`: power_i plays `a1` with `u1`, power_j plays
/// `a2` with `u2`, in the given round.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Agreement {
    pub round: u32,
    pub power_i: Power,
    pub power_j: Power,
    pub u1: UnitId,
    pub u2: UnitId,
    pub a1: Order,
    pub a2: Order,
}

impl Agreement {
    pub fn validate(&self, map: &MapGraph, state: &GameState) -> Result<()> {
        if self.power_i == self.power_j {
            return Err(Error::validation("agreement", "both sides are the same power"));
        }
        for (unit, power, order) in [(&self.u1, &self.power_i, &self.a1), (&self.u2, &self.power_j, &self.a2)] {
            let u = state.unit(unit)?;
            if &u.power != power {
                return Err(Error::validation(
                    "agreement",
                    format!("{unit} belongs to {}, not {power}", u.power),
                ));
            }
            check_legal(map, state, unit, order)?;
        }
        Ok(())
    }

    /// The same pledge seen from the other side.
    pub fn swapped(&self) -> Agreement {
        Agreement {
            round: self.round,
            power_i: self.power_j.clone(),
            power_j: self.power_i.clone(),
            u1: self.u2.clone(),
            u2: self.u1.clone(),
            a1: self.a2.clone(),
            a2: self.a1.clone(),
        }
    }

    /// Oriented so power_i precedes power_j in map order.
    pub fn normalized(&self, map: &MapGraph) -> Agreement {
        if map.power_index(&self.power_i) <= map.power_index(&self.power_j) {
            self.clone()
        } else {
            self.swapped()
        }
    }

    /// Canonical notation of both orders, `(a1, a2)`.
    pub fn notation(&self, state: &GameState) -> Result<(String, String)> {
        Ok((self.a1.notation(&self.u1, state)?, self.a2.notation(&self.u2, state)?))
    }

    pub fn to_record(&self, state: &GameState) -> Result<AgreementRecord> {
        let (a1, a2) = self.notation(state)?;
        Ok(AgreementRecord {
            round: self.round,
            power_i: self.power_i.clone(),
            power_j: self.power_j.clone(),
            u1: self.u1.clone(),
            u2: self.u2.clone(),
            a1,
            a2,
        })
    }
}

/// File form of an agreement with orders in canonical notation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub round: u32,
    pub power_i: Power,
    pub power_j: Power,
    pub u1: UnitId,
    pub u2: UnitId,
    pub a1: String,
    pub a2: String,
}

impl AgreementRecord {
    pub fn resolve(&self, map: &MapGraph, state: &GameState) -> Result<Agreement> {
        let a = Agreement {
            round: self.round,
            power_i: self.power_i.clone(),
            power_j: self.power_j.clone(),
            u1: self.u1.clone(),
            u2: self.u2.clone(),
            a1: Order::parse_for(&self.a1, &self.u1, state)?,
            a2: Order::parse_for(&self.a2, &self.u2, state)?,
        };
        a.validate(map, state)?;
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Honored {
    pub by_i: bool,
    pub by_j: bool,
    /// Set when a pledged unit had no order in the joint action.
    pub missing_unit: bool,
}

impl Honored {
    pub fn both(&self) -> bool {
        self.by_i && self.by_j
    }
}

pub fn honored(agreement: &Agreement, joint: &JointAction) -> Honored {
    let o1 = joint.get(&agreement.u1);
    let o2 = joint.get(&agreement.u2);
    Honored {
        by_i: o1 == Some(&agreement.a1),
        by_j: o2 == Some(&agreement.a2),
        missing_unit: o1.is_none() || o2.is_none(),
    }
}

/// Sort key of an edge: power indices, then order notation, then units.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub i: usize,
    pub j: usize,
    pub a1: String,
    pub a2: String,
    pub u1: UnitId,
    pub u2: UnitId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub agreement: Agreement,
    pub weight: Option<f64>,
}

/// Coalition structure of one round: an undirected multigraph whose parallel
/// edges are agreements. Updates return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionStructure {
    map: MapGraph,
    state: GameState,
    edges: BTreeMap<EdgeKey, Edge>,
}

impl CoalitionStructure {
    pub fn new(map: &MapGraph, state: &GameState) -> Self {
        CoalitionStructure {
            map: map.clone(),
            state: state.clone(),
            edges: BTreeMap::new(),
        }
    }

    pub fn players(&self) -> &[Power] {
        self.map.powers()
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge_key(&self, agreement: &Agreement) -> Result<EdgeKey> {
        let a = agreement.normalized(&self.map);
        let (a1, a2) = a.notation(&self.state)?;
        let idx = |p: &Power| self.map.power_index(p).ok_or_else(|| Error::UnknownPower(p.clone()));
        Ok(EdgeKey {
            i: idx(&a.power_i)?,
            j: idx(&a.power_j)?,
            a1,
            a2,
            u1: a.u1,
            u2: a.u2,
        })
    }

    /// Adds one parallel edge; re-adding an identical agreement is a no-op.
    pub fn add_agreement(&self, agreement: &Agreement) -> Result<Self> {
        if agreement.round != self.state.round {
            return Err(Error::validation(
                "agreement",
                format!(
                    "round {} does not match structure round {}",
                    agreement.round, self.state.round
                ),
            ));
        }
        agreement.validate(&self.map, &self.state)?;
        let key = self.edge_key(agreement)?;
        let mut out = self.clone();
        out.edges.entry(key).or_insert_with(|| Edge {
            agreement: agreement.normalized(&self.map),
            weight: None,
        });
        Ok(out)
    }

    pub fn set_weight(&self, agreement: &Agreement, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::validation("weight", format!("{w} outside [0, 1]")));
        }
        let key = self.edge_key(agreement)?;
        let mut out = self.clone();
        let edge = out
            .edges
            .get_mut(&key)
            .ok_or_else(|| Error::validation("edge", format!("no edge {} | {}", key.a1, key.a2)))?;
        edge.weight = Some(w);
        Ok(out)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, &Edge)> {
        self.edges.iter()
    }

    /// Edges joining `a` and `b`, in either orientation.
    pub fn between(&self, a: &Power, b: &Power) -> Vec<&Edge> {
        self.edges
            .values()
            .filter(|e| {
                (&e.agreement.power_i == a && &e.agreement.power_j == b)
                    || (&e.agreement.power_i == b && &e.agreement.power_j == a)
            })
            .collect()
    }

    /// DOT rendering with one edge line per agreement.
    pub fn export_dot(&self, graph_name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "graph \"{}\" {{", escape(graph_name));
        for p in self.map.powers() {
            let _ = writeln!(out, "  \"{}\";", escape(p.as_str()));
        }
        for (key, edge) in &self.edges {
            let a = &edge.agreement;
            let wt = edge
                .weight
                .map(|w| format!("{w:.2}"))
                .unwrap_or_else(|| "n/a".to_string());
            let label = format!("{}:{} | {}:{} | wt={}", a.u1, key.a1, a.u2, key.a2, wt);
            let _ = writeln!(
                out,
                "  \"{}\" -- \"{}\" [label=\"{}\"];",
                escape(a.power_i.as_str()),
                escape(a.power_j.as_str()),
                escape(&label)
            );
        }
        out.push_str("}\n");
        out
    }
}

/// File form of one weighted edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    #[serde(flatten)]
    pub agreement: AgreementRecord,
    pub weight: Option<f64>,
}

/// File form of a coalition structure, edges in key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionRecord {
    pub round: u32,
    pub players: Vec<Power>,
    pub edges: Vec<EdgeRecord>,
}

impl CoalitionStructure {
    pub fn to_record(&self) -> Result<CoalitionRecord> {
        let edges = self
            .edges
            .values()
            .map(|e| {
                Ok(EdgeRecord {
                    agreement: e.agreement.to_record(&self.state)?,
                    weight: e.weight,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CoalitionRecord {
            round: self.state.round,
            players: self.map.powers().to_vec(),
            edges,
        })
    }

    /// Rebuilds a structure against the round's state, re-validating every edge.
    pub fn from_record(map: &MapGraph, state: &GameState, record: &CoalitionRecord) -> Result<Self> {
        if record.players != map.powers() {
            return Err(Error::validation("players", "do not match the map's powers"));
        }
        if record.round != state.round {
            return Err(Error::validation(
                "round",
                format!("record is for round {}, state is round {}", record.round, state.round),
            ));
        }
        let mut out = CoalitionStructure::new(map, state);
        for e in &record.edges {
            let a = e.agreement.resolve(map, state)?;
            out = out.add_agreement(&a)?;
            if let Some(w) = e.weight {
                out = out.set_weight(&a, w)?;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record()?)?)
    }

    pub fn from_json(map: &MapGraph, state: &GameState, text: &str) -> Result<Self> {
        let record: CoalitionRecord =
            serde_json::from_str(text).map_err(|e| Error::parse("coalition structure", e.to_string()))?;
        Self::from_record(map, state, &record)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
