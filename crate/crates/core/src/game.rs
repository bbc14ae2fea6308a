//! Plays (state, dialogue, action histories) and the seeded simulation loop.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjudicate::adjudicate;
use crate::error::{Error, Result};
use crate::ids::{Power, UnitId};
use crate::map::MapGraph;
use crate::order::{check_legal, JointAction, Order};
use crate::seed::rng_from_seed;
use crate::state::GameState;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub from: Power,
    pub to: Power,
    pub text: String,
}

impl Message {
    pub fn new(from: &Power, to: &Power, text: impl Into<String>) -> Self {
        Message {
            from: from.clone(),
            to: to.clone(),
            text: text.into(),
        }
    }

    pub fn between(&self, a: &Power, b: &Power) -> bool {
        (&self.from == a && &self.to == b) || (&self.from == b && &self.to == a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DialogueRound {
    pub messages: Vec<Message>,
}

impl DialogueRound {
    pub fn validate(&self, map: &MapGraph) -> Result<()> {
        for m in &self.messages {
            for p in [&m.from, &m.to] {
                if map.power_index(p).is_none() {
                    return Err(Error::UnknownPower(p.clone()));
                }
            }
            if m.from == m.to {
                return Err(Error::validation("messages", format!("{} messages itself", m.from)));
            }
        }
        Ok(())
    }

    /// Unordered pairs that exchanged at least one message, sorted.
    pub fn talking_pairs(&self, map: &MapGraph) -> Vec<(Power, Power)> {
        let mut pairs: Vec<(Power, Power)> = self
            .messages
            .iter()
            .map(|m| ordered_pair(map, &m.from, &m.to))
            .collect();
        pairs.sort_by_key(|(a, b)| (map.power_index(a), map.power_index(b)));
        pairs.dedup();
        pairs
    }
}

/// The pair in map power order.
pub fn ordered_pair(map: &MapGraph, a: &Power, b: &Power) -> (Power, Power) {
    if map.power_index(a) <= map.power_index(b) {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayRound {
    pub state: GameState,
    pub dialogue: DialogueRound,
    pub action: Option<JointAction>,
}

/// A history s0 d0 a0 s1 d1 ... . When `final_state` is present every round
/// carries its action; otherwise the last round may be a prediction point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Play {
    /// Corpus identifier, when the play came from one.
    #[serde(default)]
    pub id: Option<String>,
    pub rounds: Vec<PlayRound>,
    pub final_state: Option<GameState>,
}

impl Play {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        self.final_state.is_some()
    }

    pub fn last_round(&self) -> Option<&PlayRound> {
        self.rounds.last()
    }

    pub fn last_state(&self) -> Result<&GameState> {
        self.rounds
            .last()
            .map(|r| &r.state)
            .ok_or_else(|| Error::Precondition("play has no rounds".into()))
    }

    /// History up to round `t`, with round `t`'s action withheld.
    pub fn prefix(&self, t: usize) -> Result<Play> {
        if t >= self.rounds.len() {
            return Err(Error::Precondition(format!(
                "round {t} outside play of length {}",
                self.rounds.len()
            )));
        }
        let mut rounds = self.rounds[..=t].to_vec();
        rounds[t].action = None;
        Ok(Play {
            id: self.id.clone(),
            rounds,
            final_state: None,
        })
    }

    /// Checks message validity and that states chain through adjudication.
    pub fn validate(&self, map: &MapGraph) -> Result<()> {
        for (k, r) in self.rounds.iter().enumerate() {
            let wrap = |e: Error| Error::Round {
                round: k,
                message: e.to_string(),
            };
            r.state.validate(map).map_err(wrap)?;
            r.dialogue.validate(map).map_err(wrap)?;
            let next = match (&r.action, self.rounds.get(k + 1)) {
                (Some(a), next) => {
                    let s = adjudicate(map, &r.state, a).map_err(wrap)?;
                    match next {
                        Some(n) => Some((s, &n.state)),
                        None => self.final_state.as_ref().map(|f| (s, f)),
                    }
                }
                (None, Some(_)) => return Err(wrap(Error::validation("action", "missing before a later round"))),
                (None, None) => {
                    if self.final_state.is_some() {
                        return Err(wrap(Error::validation(
                            "action",
                            "last round lacks an action but a terminal state is recorded",
                        )));
                    }
                    None
                }
            };
            if let Some((expected, got)) = next {
                if &expected != got {
                    return Err(wrap(Error::validation(
                        "state",
                        "successor does not match adjudication",
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What an agent sees when asked to talk or act.
pub struct TurnContext<'a> {
    pub map: &'a MapGraph,
    pub state: &'a GameState,
    pub history: &'a [PlayRound],
}

/// A per-power policy driving [`simulate`].
pub trait Agent {
    fn power(&self) -> &Power;

    /// Called [`NEGOTIATION_PASSES`] times per round; `so_far` holds the
    /// messages already sent this round by everyone.
    fn negotiate(
        &mut self,
        ctx: &TurnContext<'_>,
        pass: usize,
        so_far: &[Message],
        rng: &mut ChaCha8Rng,
    ) -> Vec<Message>;

    fn orders(&mut self, ctx: &TurnContext<'_>, dialogue: &DialogueRound, rng: &mut ChaCha8Rng)
        -> Vec<(UnitId, Order)>;
}

pub const NEGOTIATION_PASSES: usize = 2;

/// Silent agent that holds every unit.
pub struct HoldAgent(pub Power);

impl Agent for HoldAgent {
    fn power(&self) -> &Power {
        &self.0
    }

    fn negotiate(&mut self, _: &TurnContext<'_>, _: usize, _: &[Message], _: &mut ChaCha8Rng) -> Vec<Message> {
        Vec::new()
    }

    fn orders(&mut self, ctx: &TurnContext<'_>, _: &DialogueRound, _: &mut ChaCha8Rng) -> Vec<(UnitId, Order)> {
        ctx.state
            .units_of(&self.0)
            .map(|(id, _)| (id.clone(), Order::Hold))
            .collect()
    }
}

/// Runs `rounds` dialogue/action phases from the map's initial state.
pub fn simulate(map: &MapGraph, agents: &mut [Box<dyn Agent + '_>], rounds: u32, seed: u64) -> Result<Play> {
    if rounds == 0 {
        return Err(Error::Precondition("rounds must be at least 1".into()));
    }
    let mut by_power: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, a) in agents.iter().enumerate() {
        let p = map
            .power_index(a.power())
            .ok_or_else(|| Error::UnknownPower(a.power().clone()))?;
        if by_power.insert(p, i).is_some() {
            return Err(Error::Precondition(format!("two agents for {}", a.power())));
        }
    }
    if by_power.len() != map.powers().len() {
        return Err(Error::Precondition("one agent per power required".into()));
    }
    let order: Vec<usize> = by_power.values().copied().collect();

    let mut rng = rng_from_seed(seed);
    let mut state = GameState::initial(map);
    let mut history: Vec<PlayRound> = Vec::new();
    for _ in 0..rounds {
        let mut messages = Vec::new();
        for pass in 0..NEGOTIATION_PASSES {
            for &i in &order {
                let ctx = TurnContext {
                    map,
                    state: &state,
                    history: &history,
                };
                let sent = agents[i].negotiate(&ctx, pass, &messages, &mut rng);
                for m in &sent {
                    if &m.from != agents[i].power() {
                        return Err(Error::validation(
                            "messages",
                            format!("{} sent a message as {}", agents[i].power(), m.from),
                        ));
                    }
                }
                messages.extend(sent);
            }
        }
        let dialogue = DialogueRound { messages };
        dialogue.validate(map)?;

        let mut orders = BTreeMap::new();
        for &i in &order {
            let ctx = TurnContext {
                map,
                state: &state,
                history: &history,
            };
            for (unit, order) in agents[i].orders(&ctx, &dialogue, &mut rng) {
                let u = state.unit(&unit)?;
                if &u.power != agents[i].power() {
                    return Err(Error::IllegalOrder {
                        unit: unit.clone(),
                        order: format!("issued by {}", agents[i].power()),
                    });
                }
                check_legal(map, &state, &unit, &order)?;
                orders.insert(unit, order);
            }
        }
        let joint = JointAction::new(orders);
        let next = adjudicate(map, &state, &joint)?;
        history.push(PlayRound {
            state,
            dialogue,
            action: Some(joint),
        });
        state = next;
    }
    Ok(Play {
        id: None,
        rounds: history,
        final_state: Some(state),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::load_map;

    fn chain() -> MapGraph {
        load_map(include_str!("../fixtures/chain3.json")).unwrap()
    }

    #[test]
    fn all_hold_play_keeps_placements() {
        let map = chain();
        let mut agents: Vec<Box<dyn Agent>> = map
            .powers()
            .iter()
            .map(|p| Box::new(HoldAgent(p.clone())) as Box<dyn Agent>)
            .collect();
        let play = simulate(&map, &mut agents, 3, 1).unwrap();
        assert_eq!(play.len(), 3);
        let first = &play.rounds[0].state.units;
        for r in &play.rounds {
            assert_eq!(&r.state.units, first);
        }
        assert_eq!(&play.final_state.as_ref().unwrap().units, first);
        play.validate(&map).unwrap();
    }

    #[test]
    fn zero_rounds_rejected() {
        let map = chain();
        let mut agents: Vec<Box<dyn Agent>> = map
            .powers()
            .iter()
            .map(|p| Box::new(HoldAgent(p.clone())) as Box<dyn Agent>)
            .collect();
        assert!(simulate(&map, &mut agents, 0, 1).is_err());
    }

    struct Rogue(Power);

    impl Agent for Rogue {
        fn power(&self) -> &Power {
            &self.0
        }
        fn negotiate(&mut self, _: &TurnContext<'_>, _: usize, _: &[Message], _: &mut ChaCha8Rng) -> Vec<Message> {
            vec![]
        }
        fn orders(&mut self, ctx: &TurnContext<'_>, _: &DialogueRound, _: &mut ChaCha8Rng) -> Vec<(UnitId, Order)> {
            ctx.state
                .units_of(&self.0)
                .map(|(id, _)| (id.clone(), Order::Move { dest: "C".into() }))
                .collect()
        }
    }

    #[test]
    fn illegal_agent_order_names_unit() {
        let map = chain();
        let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(Rogue("P1".into())), Box::new(HoldAgent("P2".into()))];
        let err = simulate(&map, &mut agents, 1, 0).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("P1-1") && text.contains("A A - C"), "{text}");
    }

    #[test]
    fn prefix_withholds_last_action() {
        let map = chain();
        let mut agents: Vec<Box<dyn Agent>> = map
            .powers()
            .iter()
            .map(|p| Box::new(HoldAgent(p.clone())) as Box<dyn Agent>)
            .collect();
        let play = simulate(&map, &mut agents, 3, 1).unwrap();
        let p = play.prefix(1).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.rounds[1].action.is_none());
        p.validate(&map).unwrap();
        assert!(play.prefix(3).is_err());
    }
}
