//! Unit orders, their canonical notation and legality.
//!
//! Canonical notation follows the usual shorthand: `A PAR H`, `A PAR - BUR`,
//! `F ION S F EAS` and `F ION S A GRE - ALB`. Sorting is by order kind
//! (hold, move, support-hold, support-move) and then by notation, so a hold
//! always precedes the unit's moves.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ProvinceId, UnitId};
use crate::map::{MapGraph, UnitKind};
use crate::state::GameState;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Order {
    Hold,
    Move { dest: ProvinceId },
    SupportHold { target: UnitId },
    SupportMove { target: UnitId, dest: ProvinceId },
}

/// Sort key realizing the canonical order ordering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OrderKey(u8, String);

impl OrderKey {
    pub fn notation(&self) -> &str {
        &self.1
    }
}

impl Order {
    fn rank(&self) -> u8 {
        match self {
            Order::Hold => 0,
            Order::Move { .. } => 1,
            Order::SupportHold { .. } => 2,
            Order::SupportMove { .. } => 3,
        }
    }

    pub fn is_move(&self) -> bool {
        matches!(self, Order::Move { .. })
    }

    pub fn is_support(&self) -> bool {
        matches!(self, Order::SupportHold { .. } | Order::SupportMove { .. })
    }

    /// Unit this order supports, if any.
    pub fn support_target(&self) -> Option<&UnitId> {
        match self {
            Order::SupportHold { target } | Order::SupportMove { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn notation(&self, unit: &UnitId, state: &GameState) -> Result<String> {
        let u = state.unit(unit)?;
        let head = u.reference();
        Ok(match self {
            Order::Hold => format!("{head} H"),
            Order::Move { dest } => format!("{head} - {dest}"),
            Order::SupportHold { target } => {
                format!("{head} S {}", state.unit(target)?.reference())
            }
            Order::SupportMove { target, dest } => {
                format!("{head} S {} - {dest}", state.unit(target)?.reference())
            }
        })
    }

    pub fn key(&self, unit: &UnitId, state: &GameState) -> Result<OrderKey> {
        Ok(OrderKey(self.rank(), self.notation(unit, state)?))
    }

    /// Provinces named by the order besides the unit's own: move destination,
    /// support target location and support destination.
    pub fn target_provinces(&self, state: &GameState) -> Vec<ProvinceId> {
        match self {
            Order::Hold => vec![],
            Order::Move { dest } => vec![dest.clone()],
            Order::SupportHold { target } => state
                .units
                .get(target)
                .map(|t| vec![t.province.clone()])
                .unwrap_or_default(),
            Order::SupportMove { target, dest } => {
                let mut v: Vec<ProvinceId> = state
                    .units
                    .get(target)
                    .map(|t| vec![t.province.clone()])
                    .unwrap_or_default();
                v.push(dest.clone());
                v
            }
        }
    }

    /// Parses canonical notation for the unit standing where the text says.
    pub fn parse_any(text: &str, state: &GameState) -> Result<(UnitId, Order)> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let bad = |m: &str| Error::parse(format!("order '{text}'"), m.to_string());
        if toks.len() < 3 {
            return Err(bad("too short"));
        }
        let (unit_id, _) = locate(state, toks[0], toks[1]).ok_or_else(|| bad("no such unit"))?;
        let order = match &toks[2..] {
            ["H"] => Order::Hold,
            ["-", dest] => Order::Move {
                dest: ProvinceId::from(*dest),
            },
            ["S", k, p] => {
                let (target, _) = locate(state, k, p).ok_or_else(|| bad("unknown support target"))?;
                Order::SupportHold { target }
            }
            ["S", k, p, "-", dest] => {
                let (target, _) = locate(state, k, p).ok_or_else(|| bad("unknown support target"))?;
                Order::SupportMove {
                    target,
                    dest: ProvinceId::from(*dest),
                }
            }
            _ => return Err(bad("unrecognized order form")),
        };
        Ok((unit_id, order))
    }

    /// Parses canonical notation and checks it belongs to `unit`.
    pub fn parse_for(text: &str, unit: &UnitId, state: &GameState) -> Result<Order> {
        let (who, order) = Order::parse_any(text, state)?;
        if &who != unit {
            return Err(Error::parse(
                format!("order '{text}'"),
                format!("refers to {who}, expected {unit}"),
            ));
        }
        Ok(order)
    }
}

fn locate(state: &GameState, kind: &str, province: &str) -> Option<(UnitId, UnitKind)> {
    let kind = UnitKind::from_letter(kind)?;
    state
        .units
        .iter()
        .find(|(_, u)| u.kind == kind && u.province.as_str() == province)
        .map(|(id, u)| (id.clone(), u.kind))
}

pub fn compare_orders(a: &Order, b: &Order, unit: &UnitId, state: &GameState) -> Ordering {
    match (a.key(unit, state), b.key(unit, state)) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Checks a single order against the unit's position and the other units.
pub fn check_legal(map: &MapGraph, state: &GameState, unit: &UnitId, order: &Order) -> Result<()> {
    let u = state.unit(unit)?;
    let illegal = || Error::IllegalOrder {
        unit: unit.clone(),
        order: order.notation(unit, state).unwrap_or_else(|_| format!("{order:?}")),
    };
    // supporter must be able to move into the province it supports into
    let reach = |p: &ProvinceId| map.adjacent(&u.province, p) && map.can_enter(u.kind, p);
    match order {
        Order::Hold => Ok(()),
        Order::Move { dest } => {
            if reach(dest) {
                Ok(())
            } else {
                Err(illegal())
            }
        }
        Order::SupportHold { target } => {
            let t = state.units.get(target).ok_or_else(illegal)?;
            if target != unit && reach(&t.province) {
                Ok(())
            } else {
                Err(illegal())
            }
        }
        Order::SupportMove { target, dest } => {
            let t = state.units.get(target).ok_or_else(illegal)?;
            let ok = target != unit
                && dest != &u.province
                && reach(dest)
                && map.adjacent(&t.province, dest)
                && map.can_enter(t.kind, dest);
            if ok {
                Ok(())
            } else {
                Err(illegal())
            }
        }
    }
}

/// Every legal order for `unit`, duplicate-free, in canonical order.
pub fn legal_orders(map: &MapGraph, state: &GameState, unit: &UnitId) -> Result<Vec<Order>> {
    let u = state.unit(unit)?;
    let mut out = vec![Order::Hold];
    for dest in map.neighbors(&u.province) {
        if map.can_enter(u.kind, dest) {
            out.push(Order::Move { dest: dest.clone() });
        }
    }
    for (other_id, other) in &state.units {
        if other_id == unit {
            continue;
        }
        let hold = Order::SupportHold {
            target: other_id.clone(),
        };
        if check_legal(map, state, unit, &hold).is_ok() {
            out.push(hold);
        }
        for dest in map.neighbors(&other.province) {
            let sm = Order::SupportMove {
                target: other_id.clone(),
                dest: dest.clone(),
            };
            if check_legal(map, state, unit, &sm).is_ok() {
                out.push(sm);
            }
        }
    }
    let mut keyed: Vec<(OrderKey, Order)> = out
        .into_iter()
        .map(|o| Ok((o.key(unit, state)?, o)))
        .collect::<Result<_>>()?;
    keyed.sort();
    keyed.dedup_by(|a, b| a.0 == b.0);
    Ok(keyed.into_iter().map(|(_, o)| o).collect())
}

/// One order for every unit on the board.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct JointAction {
    pub orders: BTreeMap<UnitId, Order>,
}

impl JointAction {
    pub fn new(orders: BTreeMap<UnitId, Order>) -> Self {
        JointAction { orders }
    }

    pub fn all_hold(state: &GameState) -> Self {
        JointAction {
            orders: state.units.keys().map(|id| (id.clone(), Order::Hold)).collect(),
        }
    }

    pub fn get(&self, unit: &UnitId) -> Option<&Order> {
        self.orders.get(unit)
    }

    /// Total and legal in `state`; extra entries for absent units are rejected.
    pub fn validate(&self, map: &MapGraph, state: &GameState) -> Result<()> {
        for id in state.units.keys() {
            let order = self.orders.get(id).ok_or_else(|| Error::MissingOrder(id.clone()))?;
            check_legal(map, state, id, order)?;
        }
        if let Some(extra) = self.orders.keys().find(|id| !state.units.contains_key(*id)) {
            return Err(Error::UnknownUnit(extra.clone()));
        }
        Ok(())
    }

    pub fn to_notation(&self, state: &GameState) -> Result<BTreeMap<UnitId, String>> {
        self.orders
            .iter()
            .map(|(id, o)| Ok((id.clone(), o.notation(id, state)?)))
            .collect()
    }

    pub fn from_notation(map: &MapGraph, state: &GameState, orders: &BTreeMap<UnitId, String>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (id, text) in orders {
            let order = Order::parse_for(text, id, state)?;
            check_legal(map, state, id, &order)?;
            out.insert(id.clone(), order);
        }
        Ok(JointAction { orders: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::load_map;
    use crate::state::Unit;

    // A adjacent to B and C, B adjacent to C
    fn triangle() -> MapGraph {
        load_map(
            r#"{"powers": ["P1", "P2"],
                "provinces": [
                  {"id": "A", "kind": "land", "supply": false, "adjacent": ["B", "C"]},
                  {"id": "B", "kind": "land", "supply": false, "adjacent": ["A", "C"]},
                  {"id": "C", "kind": "land", "supply": false, "adjacent": ["A", "B"]}],
                "start_units": []}"#,
        )
        .unwrap()
    }

    fn state_with(units: &[(&str, &str, &str)]) -> GameState {
        GameState {
            round: 0,
            units: units
                .iter()
                .map(|(id, power, prov)| {
                    (
                        UnitId::from(*id),
                        Unit {
                            power: (*power).into(),
                            kind: UnitKind::Army,
                            province: (*prov).into(),
                        },
                    )
                })
                .collect(),
            sc_ownership: BTreeMap::new(),
        }
    }

    #[test]
    fn lone_unit_has_hold_and_moves() {
        let map = triangle();
        let s = state_with(&[("U", "P1", "A")]);
        let orders = legal_orders(&map, &s, &"U".into()).unwrap();
        let names: Vec<String> = orders.iter().map(|o| o.notation(&"U".into(), &s).unwrap()).collect();
        assert_eq!(names, vec!["A A H", "A A - B", "A A - C"]);
    }

    #[test]
    fn friendly_neighbour_enables_supports() {
        let map = triangle();
        let s = state_with(&[("V", "P1", "A"), ("U", "P1", "B")]);
        let orders = legal_orders(&map, &s, &"U".into()).unwrap();
        assert!(orders.contains(&Order::SupportHold { target: "V".into() }));
        assert!(orders.contains(&Order::SupportMove {
            target: "V".into(),
            dest: "C".into()
        }));
        // cannot support a move into its own province
        assert!(!orders.contains(&Order::SupportMove {
            target: "V".into(),
            dest: "B".into()
        }));
        for o in &orders {
            check_legal(&map, &s, &"U".into(), o).unwrap();
        }
    }

    #[test]
    fn unknown_unit_is_error() {
        let map = triangle();
        let s = state_with(&[("U", "P1", "A")]);
        assert!(matches!(
            legal_orders(&map, &s, &"X".into()),
            Err(Error::UnknownUnit(_))
        ));
    }

    #[test]
    fn notation_round_trips() {
        let map = triangle();
        let s = state_with(&[("V", "P2", "A"), ("U", "P1", "B")]);
        for unit in ["U", "V"] {
            for o in legal_orders(&map, &s, &unit.into()).unwrap() {
                let text = o.notation(&unit.into(), &s).unwrap();
                assert_eq!(Order::parse_for(&text, &unit.into(), &s).unwrap(), o);
            }
        }
    }

    #[test]
    fn hold_sorts_before_move() {
        let s = state_with(&[("U", "P1", "A")]);
        let u = UnitId::from("U");
        let hold = Order::Hold.key(&u, &s).unwrap();
        let mv = Order::Move { dest: "B".into() }.key(&u, &s).unwrap();
        assert!(hold < mv);
    }

    #[test]
    fn fleets_cannot_enter_land() {
        let map = load_map(
            r#"{"powers": ["P1", "P2"],
                "provinces": [
                  {"id": "S", "kind": "sea", "supply": false, "adjacent": ["K", "L"]},
                  {"id": "K", "kind": "coast", "supply": false, "adjacent": ["S", "L"]},
                  {"id": "L", "kind": "land", "supply": false, "adjacent": ["S", "K"]}],
                "start_units": [{"power": "P1", "kind": "fleet", "province": "S"}]}"#,
        )
        .unwrap();
        let s = GameState::initial(&map);
        let orders = legal_orders(&map, &s, &"P1-1".into()).unwrap();
        assert_eq!(orders, vec![Order::Hold, Order::Move { dest: "K".into() }]);
    }
}
