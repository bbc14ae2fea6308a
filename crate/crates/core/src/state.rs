use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{Power, ProvinceId, UnitId};
use crate::map::{MapGraph, UnitKind};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Unit {
    pub power: Power,
    pub kind: UnitKind,
    pub province: ProvinceId,
}

impl Unit {
    /// Canonical short reference, e.g. `F ION`.
    pub fn reference(&self) -> String {
        format!("{} {}", self.kind.letter(), self.province)
    }
}

/// A board position at the start of a movement phase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub round: u32,
    pub units: BTreeMap<UnitId, Unit>,
    pub sc_ownership: BTreeMap<ProvinceId, Option<Power>>,
}

impl GameState {
    /// Initial state: units numbered per power in listing order, home centers owned.
    pub fn initial(map: &MapGraph) -> Self {
        let mut counters: BTreeMap<&Power, usize> = BTreeMap::new();
        let mut units = BTreeMap::new();
        for su in map.start_units() {
            let n = counters.entry(&su.power).or_default();
            *n += 1;
            units.insert(
                UnitId(format!("{}-{}", su.power, n)),
                Unit {
                    power: su.power.clone(),
                    kind: su.kind,
                    province: su.province.clone(),
                },
            );
        }
        let mut sc_ownership: BTreeMap<ProvinceId, Option<Power>> =
            map.supply_centers().map(|id| (id.clone(), None)).collect();
        for unit in units.values() {
            if let Some(owner) = sc_ownership.get_mut(&unit.province) {
                *owner = Some(unit.power.clone());
            }
        }
        GameState {
            round: 0,
            units,
            sc_ownership,
        }
    }

    pub fn unit(&self, id: &UnitId) -> Result<&Unit> {
        self.units.get(id).ok_or_else(|| Error::UnknownUnit(id.clone()))
    }

    pub fn unit_at(&self, province: &ProvinceId) -> Option<(&UnitId, &Unit)> {
        self.units.iter().find(|(_, u)| &u.province == province)
    }

    pub fn units_of<'a>(&'a self, power: &'a Power) -> impl Iterator<Item = (&'a UnitId, &'a Unit)> {
        self.units.iter().filter(move |(_, u)| &u.power == power)
    }

    pub fn owner_of(&self, sc: &ProvinceId) -> Option<&Power> {
        self.sc_ownership.get(sc).and_then(|o| o.as_ref())
    }

    pub fn validate(&self, map: &MapGraph) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, unit) in &self.units {
            map.province(&unit.province).map_err(|_| {
                Error::validation("units", format!("{id} stands in unknown province {}", unit.province))
            })?;
            if map.power_index(&unit.power).is_none() {
                return Err(Error::UnknownPower(unit.power.clone()));
            }
            if !seen.insert(&unit.province) {
                return Err(Error::validation("units", format!("two units in {}", unit.province)));
            }
        }
        for (sc, owner) in &self.sc_ownership {
            if !map.is_supply_center(sc) {
                return Err(Error::validation(
                    "sc_ownership",
                    format!("{sc} is not a supply center"),
                ));
            }
            if let Some(p) = owner {
                if map.power_index(p).is_none() {
                    return Err(Error::UnknownPower(p.clone()));
                }
            }
        }
        Ok(())
    }

    /// Compact deterministic fingerprint (round, placements, ownership).
    pub fn key(&self) -> String {
        let mut s = format!("r{}|", self.round);
        for (id, u) in &self.units {
            s.push_str(&format!("{id}@{},", u.province));
        }
        s.push('|');
        for (sc, o) in &self.sc_ownership {
            if let Some(p) = o {
                s.push_str(&format!("{sc}:{p},"));
            }
        }
        s
    }
}

/// Supply-center share per power, in map power order.
pub fn reward(map: &MapGraph, state: &GameState) -> Vec<f64> {
    let total = map.supply_center_count();
    let mut out = vec![0.0; map.powers().len()];
    if total == 0 {
        return out;
    }
    for owner in state.sc_ownership.values().flatten() {
        if let Some(i) = map.power_index(owner) {
            out[i] += 1.0;
        }
    }
    for v in &mut out {
        *v /= total as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::load_map;

    fn four_sc_map() -> MapGraph {
        load_map(
            r#"{"powers": ["P1", "P2"],
                "provinces": [
                  {"id": "A", "kind": "land", "supply": true, "adjacent": ["B"]},
                  {"id": "B", "kind": "land", "supply": true, "adjacent": ["A", "C"]},
                  {"id": "C", "kind": "land", "supply": true, "adjacent": ["B", "D"]},
                  {"id": "D", "kind": "land", "supply": true, "adjacent": ["C"]}],
                "start_units": [{"power": "P1", "kind": "army", "province": "A"},
                                {"power": "P1", "kind": "army", "province": "B"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn reward_is_sc_share() {
        let map = four_sc_map();
        let s = GameState::initial(&map);
        assert_eq!(reward(&map, &s), vec![0.5, 0.0]);
        let mut none = s.clone();
        for o in none.sc_ownership.values_mut() {
            *o = None;
        }
        assert_eq!(reward(&map, &none), vec![0.0, 0.0]);
    }

    #[test]
    fn initial_state_numbers_units() {
        let map = four_sc_map();
        let s = GameState::initial(&map);
        assert!(s.units.contains_key(&UnitId::from("P1-1")));
        assert!(s.units.contains_key(&UnitId::from("P1-2")));
        s.validate(&map).unwrap();
    }

    #[test]
    fn validate_rejects_stacked_units() {
        let map = four_sc_map();
        let mut s = GameState::initial(&map);
        s.units.get_mut(&UnitId::from("P1-2")).unwrap().province = "A".into();
        assert!(s.validate(&map).is_err());
    }
}
