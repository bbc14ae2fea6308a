//! Simultaneous movement-phase resolution.
//!
//! Rule subset: strength is 1 plus valid, uncut supports. A move succeeds iff
//! its attack strength strictly exceeds the hold strength of the destination
//! (or, head to head, the defending move's strength) and the prevent strength
//! of every other move into the same province. Supports are cut by any move
//! into the supporter's province except one coming from the province the
//! support is directed at. A power never dislodges its own unit and its
//! supports do not count against its own units. Dislodged units are removed.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::ids::{ProvinceId, UnitId};
use crate::map::MapGraph;
use crate::order::{JointAction, Order};
use crate::state::{GameState, Unit};

#[derive(Debug, Clone, PartialEq)]
pub struct Adjudication {
    pub next: GameState,
    /// Move success by unit; units that did not move are absent.
    pub moves: BTreeMap<UnitId, bool>,
    pub dislodged: Vec<UnitId>,
}

/// The transition function: validates `joint` and resolves it.
pub fn adjudicate(map: &MapGraph, state: &GameState, joint: &JointAction) -> Result<GameState> {
    Ok(adjudicate_detailed(map, state, joint)?.next)
}

pub fn adjudicate_detailed(map: &MapGraph, state: &GameState, joint: &JointAction) -> Result<Adjudication> {
    joint.validate(map, state)?;
    Ok(resolve(map, state, joint))
}

struct Board<'a> {
    ids: Vec<&'a UnitId>,
    units: Vec<&'a Unit>,
    orders: Vec<&'a Order>,
    at: BTreeMap<&'a ProvinceId, usize>,
    // move index -> (origin unit, destination)
    dest: Vec<Option<&'a ProvinceId>>,
    // valid uncut supports: supporter indices per supported unit
    move_support: Vec<Vec<usize>>,
    hold_support: Vec<Vec<usize>>,
    into: BTreeMap<&'a ProvinceId, Vec<usize>>,
}

type Bounds = (u32, u32);

impl<'a> Board<'a> {
    fn new(state: &'a GameState, joint: &'a JointAction) -> Self {
        let ids: Vec<&UnitId> = state.units.keys().collect();
        let units: Vec<&Unit> = state.units.values().collect();
        let orders: Vec<&Order> = ids.iter().map(|id| &joint.orders[*id]).collect();
        let index: BTreeMap<&UnitId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let at = units.iter().enumerate().map(|(i, u)| (&u.province, i)).collect();
        let dest: Vec<Option<&ProvinceId>> = orders
            .iter()
            .map(|o| match o {
                Order::Move { dest } => Some(dest),
                _ => None,
            })
            .collect();
        let mut into: BTreeMap<&ProvinceId, Vec<usize>> = BTreeMap::new();
        for (i, d) in dest.iter().enumerate() {
            if let Some(d) = d {
                into.entry(*d).or_default().push(i);
            }
        }

        let n = ids.len();
        let mut move_support = vec![Vec::new(); n];
        let mut hold_support = vec![Vec::new(); n];
        for s in 0..n {
            let (target, supported_into) = match orders[s] {
                Order::SupportHold { target } => {
                    let t = index[target];
                    if dest[t].is_some() {
                        continue;
                    }
                    (t, &units[t].province)
                }
                Order::SupportMove { target, dest: d } => {
                    let t = index[target];
                    if dest[t] != Some(d) {
                        continue;
                    }
                    (t, d)
                }
                _ => continue,
            };
            let cut = into
                .get(&units[s].province)
                .is_some_and(|attackers| attackers.iter().any(|&a| &units[a].province != supported_into));
            if cut {
                continue;
            }
            if dest[target].is_some() {
                move_support[target].push(s);
            } else {
                hold_support[target].push(s);
            }
        }

        Board {
            ids,
            units,
            orders,
            at,
            dest,
            move_support,
            hold_support,
            into,
        }
    }

    fn occupant(&self, m: usize) -> Option<usize> {
        self.dest[m].and_then(|d| self.at.get(d).copied())
    }

    fn head_to_head(&self, m: usize) -> Option<usize> {
        let o = self.occupant(m)?;
        (self.dest[o] == Some(&self.units[m].province)).then_some(o)
    }

    fn full_strength(&self, m: usize) -> u32 {
        1 + self.move_support[m].len() as u32
    }

    /// Strength against a unit `o` that stays put.
    fn restricted_strength(&self, m: usize, o: usize) -> u32 {
        let victim = &self.units[o].power;
        if &self.units[m].power == victim {
            return 0;
        }
        1 + self.move_support[m]
            .iter()
            .filter(|&&s| &self.units[s].power != victim)
            .count() as u32
    }

    fn attack(&self, m: usize, res: &[Option<bool>]) -> Bounds {
        let Some(o) = self.occupant(m) else {
            let f = self.full_strength(m);
            return (f, f);
        };
        let restricted = self.restricted_strength(m, o);
        if self.dest[o].is_none() || self.head_to_head(m).is_some() {
            return (restricted, restricted);
        }
        let full = self.full_strength(m);
        match res[o] {
            Some(true) => (full, full),
            Some(false) => (restricted, restricted),
            None => (restricted.min(full), restricted.max(full)),
        }
    }

    fn hold(&self, province: &ProvinceId, res: &[Option<bool>]) -> Bounds {
        let Some(&o) = self.at.get(province) else {
            return (0, 0);
        };
        if self.dest[o].is_none() {
            let h = 1 + self.hold_support[o].len() as u32;
            return (h, h);
        }
        match res[o] {
            Some(true) => (0, 0),
            Some(false) => (1, 1),
            None => (0, 1),
        }
    }

    fn prevent(&self, c: usize, res: &[Option<bool>]) -> Bounds {
        let full = self.full_strength(c);
        match self.head_to_head(c) {
            Some(o) => match res[o] {
                Some(true) => (0, 0),
                Some(false) => (full, full),
                None => (0, full),
            },
            None => (full, full),
        }
    }

    /// Some(outcome) when decidable under the current partial resolution.
    fn decide(&self, m: usize, res: &[Option<bool>]) -> Option<bool> {
        let d = self.dest[m]?;
        let (att_min, att_max) = self.attack(m, res);
        let (opp_min, opp_max) = match self.head_to_head(m) {
            Some(o) => {
                let f = self.full_strength(o);
                (f, f)
            }
            None => self.hold(d, res),
        };
        let mut succeeds = att_min > opp_max;
        let mut fails = att_max <= opp_min;
        for &c in &self.into[d] {
            if c == m {
                continue;
            }
            let (p_min, p_max) = self.prevent(c, res);
            succeeds &= att_min > p_max;
            fails |= att_max <= p_min;
        }
        if fails {
            Some(false)
        } else if succeeds {
            Some(true)
        } else {
            None
        }
    }

    fn fixpoint(&self, res: &mut [Option<bool>]) {
        loop {
            let mut changed = false;
            for m in 0..res.len() {
                if res[m].is_none() && self.dest[m].is_some() {
                    if let Some(v) = self.decide(m, res) {
                        res[m] = Some(v);
                        changed = true;
                    }
                }
            }
            if !changed {
                return;
            }
        }
    }

    fn consistent(&self, res: &[Option<bool>]) -> bool {
        (0..res.len())
            .filter(|&m| self.dest[m].is_some())
            .all(|m| self.decide(m, res) == res[m])
    }

    // Dependency cycles (circular movement) are settled by guessing success
    // first, then failure, and keeping a self-consistent assignment.
    fn solve(&self, mut res: Vec<Option<bool>>) -> Option<Vec<Option<bool>>> {
        self.fixpoint(&mut res);
        let open = (0..res.len()).find(|&m| self.dest[m].is_some() && res[m].is_none());
        match open {
            None => self.consistent(&res).then_some(res),
            Some(m) => [true, false].into_iter().find_map(|guess| {
                let mut trial = res.clone();
                trial[m] = Some(guess);
                self.solve(trial)
            }),
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn resolve(map: &MapGraph, state: &GameState, joint: &JointAction) -> Adjudication {
    let board = Board::new(state, joint);
    let n = board.ids.len();
    let res = board
        .solve(vec![None; n])
        .expect("movement-only resolution always has a consistent assignment");

    let mut moves = BTreeMap::new();
    let mut next_units = BTreeMap::new();
    let mut occupied_after: BTreeMap<&ProvinceId, usize> = BTreeMap::new();
    for i in 0..n {
        if board.dest[i].is_some() {
            moves.insert(board.ids[i].clone(), res[i] == Some(true));
        }
        if res[i] == Some(true) {
            occupied_after.insert(board.dest[i].unwrap(), i);
        }
    }
    let mut dislodged = Vec::new();
    for i in 0..n {
        let moved = res[i] == Some(true);
        let here = &board.units[i].province;
        if !moved && occupied_after.contains_key(here) {
            dislodged.push(board.ids[i].clone());
            continue;
        }
        let mut unit = board.units[i].clone();
        if moved {
            unit.province = board.dest[i].unwrap().clone();
        }
        next_units.insert(board.ids[i].clone(), unit);
    }
    debug_assert!(board.orders.len() == n);

    let mut sc_ownership = state.sc_ownership.clone();
    for unit in next_units.values() {
        if map.is_supply_center(&unit.province) {
            sc_ownership.insert(unit.province.clone(), Some(unit.power.clone()));
        }
    }
    Adjudication {
        next: GameState {
            round: state.round + 1,
            units: next_units,
            sc_ownership,
        },
        moves,
        dislodged,
    }
}
