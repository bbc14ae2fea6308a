//! Board topology: provinces, terrain, adjacency and starting positions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{Power, ProvinceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvinceKind {
    Land,
    Sea,
    Coast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    #[serde(alias = "A")]
    Army,
    #[serde(alias = "F")]
    Fleet,
}

impl UnitKind {
    pub fn letter(self) -> char {
        match self {
            UnitKind::Army => 'A',
            UnitKind::Fleet => 'F',
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "A" => Some(UnitKind::Army),
            "F" => Some(UnitKind::Fleet),
            _ => None,
        }
    }

    /// Armies stay on land and coasts, fleets on seas and coasts.
    pub fn can_occupy(self, kind: ProvinceKind) -> bool {
        !matches!(
            (self, kind),
            (UnitKind::Army, ProvinceKind::Sea) | (UnitKind::Fleet, ProvinceKind::Land)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Province {
    pub id: ProvinceId,
    pub kind: ProvinceKind,
    pub supply_center: bool,
    pub name: Option<String>,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartUnit {
    pub power: Power,
    pub kind: UnitKind,
    pub province: ProvinceId,
}

/// Serialized form of a map file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub provinces: Vec<ProvinceRecord>,
    pub powers: Vec<Power>,
    pub start_units: Vec<StartUnit>,
    /// When set, `adjacent` lists may be one-directional and are symmetrized on load.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub one_way_adjacency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvinceRecord {
    pub id: ProvinceId,
    pub kind: ProvinceKind,
    pub supply: bool,
    pub adjacent: Vec<ProvinceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

/// Validated board. Adjacency is symmetric and irreflexive.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGraph {
    name: Option<String>,
    provinces: BTreeMap<ProvinceId, Province>,
    adjacency: BTreeMap<ProvinceId, BTreeSet<ProvinceId>>,
    powers: Vec<Power>,
    start_units: Vec<StartUnit>,
    index: BTreeMap<ProvinceId, usize>,
    // all-pairs hop distances, u32::MAX when unreachable
    dist: Vec<Vec<u32>>,
    diameter: u32,
    max_degree: usize,
    supply_centers: usize,
}

pub const UNREACHABLE: u32 = u32::MAX;

/// Parses and validates a JSON map document.
pub fn load_map(source: &str) -> Result<MapGraph> {
    let doc: MapDocument = serde_json::from_str(source).map_err(|e| Error::parse("map document", e.to_string()))?;
    MapGraph::from_document(doc)
}

impl MapGraph {
    pub fn from_document(doc: MapDocument) -> Result<Self> {
        let mut provinces = BTreeMap::new();
        for rec in &doc.provinces {
            if rec.id.as_str().is_empty()
                || !rec
                    .id
                    .as_str()
                    .chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
            {
                return Err(Error::validation(
                    "provinces.id",
                    format!("'{}' is not a short uppercase token", rec.id),
                ));
            }
            let province = Province {
                id: rec.id.clone(),
                kind: rec.kind,
                supply_center: rec.supply,
                name: rec.name.clone(),
                aliases: rec.aliases.clone(),
            };
            if provinces.insert(rec.id.clone(), province).is_some() {
                return Err(Error::validation(
                    "provinces.id",
                    format!("duplicate province {}", rec.id),
                ));
            }
        }

        let mut adjacency: BTreeMap<ProvinceId, BTreeSet<ProvinceId>> =
            provinces.keys().map(|id| (id.clone(), BTreeSet::new())).collect();
        for rec in &doc.provinces {
            for other in &rec.adjacent {
                if !provinces.contains_key(other) {
                    return Err(Error::validation(
                        "provinces.adjacent",
                        format!("{} lists unknown province {}", rec.id, other),
                    ));
                }
                if other == &rec.id {
                    return Err(Error::validation(
                        "provinces.adjacent",
                        format!("{} is adjacent to itself", rec.id),
                    ));
                }
                adjacency.get_mut(&rec.id).unwrap().insert(other.clone());
            }
        }
        if doc.one_way_adjacency {
            let pairs: Vec<(ProvinceId, ProvinceId)> = adjacency
                .iter()
                .flat_map(|(a, bs)| bs.iter().map(move |b| (a.clone(), b.clone())))
                .collect();
            for (a, b) in pairs {
                adjacency.get_mut(&b).unwrap().insert(a);
            }
        } else {
            for (a, bs) in &adjacency {
                for b in bs {
                    if !adjacency[b].contains(a) {
                        return Err(Error::validation(
                            "provinces.adjacent",
                            format!("asymmetric adjacency {a}-{b}"),
                        ));
                    }
                }
            }
        }

        if doc.powers.len() < 2 {
            return Err(Error::validation("powers", "at least 2 powers required"));
        }
        let unique: BTreeSet<&Power> = doc.powers.iter().collect();
        if unique.len() != doc.powers.len() {
            return Err(Error::validation("powers", "duplicate power"));
        }

        let mut occupied = BTreeSet::new();
        for su in &doc.start_units {
            let Some(p) = provinces.get(&su.province) else {
                return Err(Error::validation(
                    "start_units.province",
                    format!("unknown province {}", su.province),
                ));
            };
            if !unique.contains(&su.power) {
                return Err(Error::validation(
                    "start_units.power",
                    format!("unknown power {}", su.power),
                ));
            }
            if !su.kind.can_occupy(p.kind) {
                return Err(Error::validation(
                    "start_units.kind",
                    format!("{:?} cannot stand in {}", su.kind, su.province),
                ));
            }
            if !occupied.insert(su.province.clone()) {
                return Err(Error::validation(
                    "start_units.province",
                    format!("two units start in {}", su.province),
                ));
            }
        }

        let index: BTreeMap<ProvinceId, usize> = provinces.keys().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let ids: Vec<&ProvinceId> = provinces.keys().collect();
        let dist: Vec<Vec<u32>> = ids.iter().map(|src| bfs(&adjacency, &index, src)).collect();

        let diameter: u32 = dist
            .iter()
            .flatten()
            .copied()
            .filter(|&d| d != UNREACHABLE)
            .max()
            .unwrap_or(0);
        let max_degree = adjacency.values().map(|s| s.len()).max().unwrap_or(0);
        let supply_centers = provinces.values().filter(|p| p.supply_center).count();
        Ok(MapGraph {
            name: doc.name,
            provinces,
            adjacency,
            powers: doc.powers,
            start_units: doc.start_units,
            index,
            dist,
            diameter,
            max_degree,
            supply_centers,
        })
    }

    /// Inverse of [`MapGraph::from_document`]; adjacency is written in both directions.
    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            name: self.name.clone(),
            provinces: self
                .provinces
                .values()
                .map(|p| ProvinceRecord {
                    id: p.id.clone(),
                    kind: p.kind,
                    supply: p.supply_center,
                    adjacent: self.adjacency[&p.id].iter().cloned().collect(),
                    name: p.name.clone(),
                    aliases: p.aliases.clone(),
                })
                .collect(),
            powers: self.powers.clone(),
            start_units: self.start_units.clone(),
            one_way_adjacency: false,
        }
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn provinces(&self) -> impl Iterator<Item = &Province> {
        self.provinces.values()
    }

    pub fn province(&self, id: &ProvinceId) -> Result<&Province> {
        self.provinces.get(id).ok_or_else(|| Error::UnknownProvince(id.clone()))
    }

    pub fn contains(&self, id: &ProvinceId) -> bool {
        self.provinces.contains_key(id)
    }

    pub fn neighbors(&self, id: &ProvinceId) -> impl Iterator<Item = &ProvinceId> {
        self.adjacency.get(id).into_iter().flatten()
    }

    pub fn adjacent(&self, a: &ProvinceId, b: &ProvinceId) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn degree(&self, id: &ProvinceId) -> usize {
        self.adjacency.get(id).map_or(0, |s| s.len())
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn powers(&self) -> &[Power] {
        &self.powers
    }

    pub fn power_index(&self, power: &Power) -> Option<usize> {
        self.powers.iter().position(|p| p == power)
    }

    pub fn start_units(&self) -> &[StartUnit] {
        &self.start_units
    }

    pub fn supply_centers(&self) -> impl Iterator<Item = &ProvinceId> {
        self.provinces.values().filter(|p| p.supply_center).map(|p| &p.id)
    }

    pub fn supply_center_count(&self) -> usize {
        self.supply_centers
    }

    pub fn is_supply_center(&self, id: &ProvinceId) -> bool {
        self.provinces.get(id).is_some_and(|p| p.supply_center)
    }

    /// Whether a unit of `kind` may enter province `to` (terrain only).
    pub fn can_enter(&self, kind: UnitKind, to: &ProvinceId) -> bool {
        self.provinces.get(to).is_some_and(|p| kind.can_occupy(p.kind))
    }

    /// Hop distance ignoring terrain; [`UNREACHABLE`] if disconnected or unknown.
    pub fn distance(&self, a: &ProvinceId, b: &ProvinceId) -> u32 {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.dist[i][j],
            _ => UNREACHABLE,
        }
    }

    pub fn diameter(&self) -> u32 {
        self.diameter
    }

    /// Dense index of a province, stable for the lifetime of the map.
    pub fn province_index(&self, id: &ProvinceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// [`MapGraph::distance`] by dense indices.
    pub fn distance_by_index(&self, a: usize, b: usize) -> u32 {
        self.dist[a][b]
    }
}

fn bfs(
    adjacency: &BTreeMap<ProvinceId, BTreeSet<ProvinceId>>,
    index: &BTreeMap<ProvinceId, usize>,
    src: &ProvinceId,
) -> Vec<u32> {
    let mut out = vec![UNREACHABLE; index.len()];
    let mut queue = VecDeque::new();
    out[index[src]] = 0;
    queue.push_back(src);
    while let Some(p) = queue.pop_front() {
        let d = out[index[p]];
        for q in &adjacency[p] {
            let slot = &mut out[index[q]];
            if *slot == UNREACHABLE {
                *slot = d + 1;
                queue.push_back(q);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_doc() -> String {
        r#"{
            "powers": ["P1", "P2"],
            "provinces": [
                {"id": "A", "kind": "land", "supply": false, "adjacent": ["B"]},
                {"id": "B", "kind": "land", "supply": true, "adjacent": ["A", "C"]},
                {"id": "C", "kind": "land", "supply": false, "adjacent": ["B"]}
            ],
            "start_units": [{"power": "P1", "kind": "army", "province": "A"}]
        }"#
        .to_string()
    }

    #[test]
    fn loads_linear_map() {
        let map = load_map(&linear_doc()).unwrap();
        assert_eq!(map.provinces().count(), 3);
        assert!(map.adjacent(&"A".into(), &"B".into()));
        assert!(map.adjacent(&"C".into(), &"B".into()));
        assert!(!map.adjacent(&"A".into(), &"C".into()));
        assert_eq!(map.distance(&"A".into(), &"C".into()), 2);
    }

    #[test]
    fn asymmetric_adjacency_names_the_pair() {
        let doc = linear_doc().replace(r#""adjacent": ["A", "C"]"#, r#""adjacent": ["C"]"#);
        let err = load_map(&doc).unwrap_err();
        assert!(err.to_string().contains("A-B"), "{err}");
    }

    #[test]
    fn one_way_flag_symmetrizes() {
        let doc = linear_doc()
            .replace(r#""adjacent": ["A", "C"]"#, r#""adjacent": ["C"]"#)
            .replace(r#""powers""#, r#""one_way_adjacency": true, "powers""#);
        let map = load_map(&doc).unwrap();
        assert!(map.adjacent(&"B".into(), &"A".into()));
    }

    #[test]
    fn unknown_reference_is_rejected() {
        let doc = linear_doc().replace(r#"["B"]}"#, r#"["Z"]}"#);
        let err = load_map(&doc).unwrap_err();
        assert!(err.to_string().contains("provinces.adjacent"), "{err}");
        let doc = linear_doc().replace(r#""province": "A""#, r#""province": "Q""#);
        assert!(load_map(&doc).unwrap_err().to_string().contains("start_units.province"));
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_map("{"), Err(Error::Parse { .. })));
    }

    #[test]
    fn single_power_rejected() {
        let doc = linear_doc().replace(r#"["P1", "P2"]"#, r#"["P1"]"#);
        assert!(load_map(&doc).is_err());
    }

    #[test]
    fn document_round_trip() {
        let map = load_map(&linear_doc()).unwrap();
        let again = MapGraph::from_document(map.to_document()).unwrap();
        assert_eq!(map, again);
    }
}
