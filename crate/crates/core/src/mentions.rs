//! Gazetteer matching of province names, ids and aliases in message text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{DialogueRound, Message};
use crate::http::JsonClient;
use crate::ids::ProvinceId;
use crate::map::MapGraph;

pub type MentionSet = BTreeSet<ProvinceId>;

/// Case-insensitive phrase table. Phrases are matched on whole words,
/// longest phrase first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    phrases: BTreeMap<Vec<String>, ProvinceId>,
    longest: usize,
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

impl Lexicon {
    /// Ids, full names and aliases of every province.
    pub fn from_map(map: &MapGraph) -> Self {
        let mut lex = Lexicon::default();
        for p in map.provinces() {
            lex.insert(p.id.as_str(), &p.id);
            if let Some(name) = &p.name {
                lex.insert(name, &p.id);
            }
            for a in &p.aliases {
                lex.insert(a, &p.id);
            }
        }
        lex
    }

    pub fn insert(&mut self, phrase: &str, id: &ProvinceId) {
        let w = words(phrase);
        if w.is_empty() {
            return;
        }
        self.longest = self.longest.max(w.len());
        self.phrases.insert(w, id.clone());
    }

    /// Alias text (as lowercase words joined by spaces) to province id.
    pub fn aliases(&self) -> BTreeMap<String, ProvinceId> {
        self.phrases.iter().map(|(w, id)| (w.join(" "), id.clone())).collect()
    }

    pub fn find(&self, text: &str) -> MentionSet {
        let toks = words(text);
        let mut out = MentionSet::new();
        let mut i = 0;
        while i < toks.len() {
            let max = self.longest.min(toks.len() - i);
            let hit = (1..=max)
                .rev()
                .find_map(|n| self.phrases.get(&toks[i..i + n]).map(|id| (n, id)));
            match hit {
                Some((n, id)) => {
                    out.insert(id.clone());
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Union of the provinces mentioned across a dialogue round.
pub fn extract_mentions(dialogue: &DialogueRound, lexicon: &Lexicon) -> MentionSet {
    dialogue.messages.iter().flat_map(|m| lexicon.find(&m.text)).collect()
}

/// Where mentions come from: the local gazetteer, or a remote annotator
/// that falls back to the gazetteer when it fails.
#[derive(Debug, Clone)]
pub enum MentionSource {
    Lexicon(Lexicon),
    Remote { client: JsonClient, lexicon: Lexicon },
}

#[derive(Serialize)]
struct MentionRequest<'a> {
    messages: &'a [Message],
    provinces: Vec<&'a ProvinceId>,
    aliases: BTreeMap<String, ProvinceId>,
}

#[derive(Deserialize)]
struct MentionResponse {
    mentions: Vec<ProvinceId>,
}

impl MentionSource {
    pub fn lexicon(&self) -> &Lexicon {
        match self {
            MentionSource::Lexicon(l) => l,
            MentionSource::Remote { lexicon, .. } => lexicon,
        }
    }

    pub fn extract(&self, map: &MapGraph, dialogue: &DialogueRound) -> MentionSet {
        match self {
            MentionSource::Lexicon(l) => extract_mentions(dialogue, l),
            MentionSource::Remote { client, lexicon } => {
                if dialogue.messages.is_empty() {
                    return MentionSet::new();
                }
                remote_mentions(client, map, dialogue, lexicon).unwrap_or_else(|_| extract_mentions(dialogue, lexicon))
            }
        }
    }
}

fn remote_mentions(
    client: &JsonClient,
    map: &MapGraph,
    dialogue: &DialogueRound,
    lexicon: &Lexicon,
) -> Result<MentionSet> {
    let req = MentionRequest {
        messages: &dialogue.messages,
        provinces: map.provinces().map(|p| &p.id).collect(),
        aliases: lexicon.aliases(),
    };
    let resp: MentionResponse = client.post("/v1/mentions", &req)?;
    let mut out = MentionSet::new();
    for id in resp.mentions {
        if !map.contains(&id) {
            return Err(Error::Protocol(format!("unknown province {id} in mentions")));
        }
        out.insert(id);
    }
    Ok(out)
}
