//! Scripted negotiators: pairs of powers chat in templated text, sometimes
//! strike a one-round agreement, and honor it with a fixed probability.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::coalition::Agreement;
use crate::game::{Agent, DialogueRound, Message, TurnContext};
use crate::ids::{Power, ProvinceId, UnitId};
use crate::intent::HeuristicParams;
use crate::map::MapGraph;
use crate::order::{check_legal, legal_orders, Order};
use crate::state::GameState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptConfig {
    /// Probability that each party keeps its side of an agreement.
    pub honesty: f64,
    /// Chat probability for pairs whose units are within two steps.
    pub talk_near: f64,
    pub talk_far: f64,
    /// Probability that a chatting pair strikes an agreement.
    pub agree: f64,
    /// Probability of a turned-down proposal in a chat without agreement.
    pub rejected: f64,
    /// Probability of announcing a distant unit's move.
    pub announce: f64,
}

impl ScriptConfig {
    pub fn with_honesty(honesty: f64) -> Self {
        ScriptConfig {
            honesty,
            talk_near: 0.7,
            talk_far: 0.3,
            agree: 0.2,
            rejected: 0.35,
            announce: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Announcement {
    pub round: u32,
    pub unit: UnitId,
    pub order: Order,
}

#[derive(Debug, Default)]
struct RoundPlan {
    round: Option<u32>,
    passes: [Vec<Message>; 2],
    pledged: BTreeMap<UnitId, Order>,
}

/// State shared by the negotiators of one game.
#[derive(Debug)]
pub struct Director {
    config: ScriptConfig,
    proposal: HeuristicParams,
    plan: RoundPlan,
    pub agreements: Vec<Agreement>,
    pub announcements: Vec<Announcement>,
}

impl Director {
    pub fn new(config: ScriptConfig) -> Rc<RefCell<Director>> {
        Rc::new(RefCell::new(Director {
            config,
            proposal: HeuristicParams::default(),
            plan: RoundPlan::default(),
            agreements: Vec::new(),
            announcements: Vec::new(),
        }))
    }

    fn ensure_plan(&mut self, ctx: &TurnContext<'_>, rng: &mut ChaCha8Rng) {
        if self.plan.round == Some(ctx.state.round) {
            return;
        }
        self.plan = RoundPlan {
            round: Some(ctx.state.round),
            ..RoundPlan::default()
        };
        let map = ctx.map;
        let state = ctx.state;
        let powers = map.powers().to_vec();
        let mut committed: BTreeSet<UnitId> = BTreeSet::new();
        for a in 0..powers.len() {
            for b in a + 1..powers.len() {
                let (pa, pb) = (&powers[a], &powers[b]);
                if state.units_of(pa).next().is_none() || state.units_of(pb).next().is_none() {
                    continue;
                }
                let near = pair_distance(map, state, pa, pb) <= 2;
                let p_talk = if near {
                    self.config.talk_near
                } else {
                    self.config.talk_far
                };
                if !rng.gen_bool(p_talk) {
                    continue;
                }
                self.converse(map, state, pa, pb, &mut committed, rng);
            }
        }
    }

    fn converse(
        &mut self,
        map: &MapGraph,
        state: &GameState,
        pa: &Power,
        pb: &Power,
        committed: &mut BTreeSet<UnitId>,
        rng: &mut ChaCha8Rng,
    ) {
        // either side may open
        let (first, second) = if rng.gen_bool(0.5) { (pa, pb) } else { (pb, pa) };
        let mut struck = false;
        if rng.gen_bool(self.config.agree) {
            if let Some(deal) = pick_deal(map, state, first, second, committed, rng) {
                let (open, reply) = deal_text(map, state, &deal, rng);
                self.say(0, first, second, open);
                self.say(1, second, first, reply);
                committed.insert(deal.agreement.u1.clone());
                committed.insert(deal.agreement.u2.clone());
                self.plan
                    .pledged
                    .insert(deal.agreement.u1.clone(), deal.agreement.a1.clone());
                self.plan
                    .pledged
                    .insert(deal.agreement.u2.clone(), deal.agreement.a2.clone());
                self.agreements.push(deal.agreement);
                struck = true;
            }
        }
        if !struck && rng.gen_bool(self.config.rejected) {
            if let Some((open, reply)) = rejected_text(map, state, first, second, rng) {
                self.say(0, first, second, open);
                self.say(1, second, first, reply);
            }
        }
        if rng.gen_bool(self.config.announce) {
            let speaker = if rng.gen_bool(0.5) { first } else { second };
            let listener = if speaker == first { second } else { first };
            if let Some((unit, order, text)) = announcement(map, state, speaker, listener, committed, rng) {
                committed.insert(unit.clone());
                self.plan.pledged.insert(unit.clone(), order.clone());
                self.announcements.push(Announcement {
                    round: state.round,
                    unit,
                    order,
                });
                self.say(0, speaker, listener, text);
            }
        }
        if rng.gen_bool(0.6) {
            let t = SMALL_TALK.choose(rng).expect("non-empty").to_string();
            self.say(1, first, second, t);
        }
    }

    fn say(&mut self, pass: usize, from: &Power, to: &Power, text: String) {
        self.plan.passes[pass].push(Message::new(from, to, text));
    }
}

fn pair_distance(map: &MapGraph, state: &GameState, a: &Power, b: &Power) -> u32 {
    let mut best = u32::MAX;
    for (_, u) in state.units_of(a) {
        for (_, v) in state.units_of(b) {
            best = best.min(map.distance(&u.province, &v.province));
        }
    }
    best
}

fn unit_distance_to(map: &MapGraph, state: &GameState, province: &ProvinceId, other: &Power) -> u32 {
    state
        .units_of(other)
        .map(|(_, v)| map.distance(province, &v.province))
        .min()
        .unwrap_or(u32::MAX)
}

const SMALL_TALK: [&str; 8] = [
    "Good luck this season.",
    "Any news from the others?",
    "Let us keep talking next turn.",
    "I have no quarrel with you for now.",
    "Quiet turn on my side, nothing to report.",
    "Thanks for the message, I will think about it.",
    "Hope the game treats you well.",
    "Keep me posted if anything changes.",
];

#[derive(Debug, Clone)]
struct Deal {
    agreement: Agreement,
    kind: DealKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DealKind {
    SupportMove,
    MutualMoves,
    SupportHold,
}

fn free_units<'a>(state: &'a GameState, p: &'a Power, committed: &'a BTreeSet<UnitId>) -> Vec<&'a UnitId> {
    state
        .units_of(p)
        .map(|(id, _)| id)
        .filter(|id| !committed.contains(*id))
        .collect()
}

fn occupied_by(state: &GameState, dest: &ProvinceId, powers: [&Power; 2]) -> bool {
    state.unit_at(dest).is_some_and(|(_, u)| powers.contains(&&u.power))
}

fn pick_deal(
    map: &MapGraph,
    state: &GameState,
    first: &Power,
    second: &Power,
    committed: &BTreeSet<UnitId>,
    rng: &mut ChaCha8Rng,
) -> Option<Deal> {
    let fa = free_units(state, first, committed);
    let fb = free_units(state, second, committed);
    let mut support_moves = Vec::new();
    let mut mutual = Vec::new();
    let mut support_holds = Vec::new();
    let moves_of = |u: &UnitId| -> Vec<ProvinceId> {
        legal_orders(map, state, u)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|o| match o {
                Order::Move { dest } if !occupied_by(state, &dest, [first, second]) => Some(dest),
                _ => None,
            })
            .collect()
    };
    for &u in &fa {
        for &v in &fb {
            // either side may be the supporter
            for (sup, mov, sup_is_first) in [(u, v, true), (v, u, false)] {
                for dest in moves_of(mov) {
                    let o = Order::SupportMove {
                        target: mov.clone(),
                        dest: dest.clone(),
                    };
                    if check_legal(map, state, sup, &o).is_ok() {
                        support_moves.push((sup.clone(), o, mov.clone(), Order::Move { dest }, sup_is_first));
                    }
                }
                let o = Order::SupportHold { target: mov.clone() };
                if check_legal(map, state, sup, &o).is_ok() {
                    support_holds.push((sup.clone(), o, mov.clone(), Order::Hold, sup_is_first));
                }
            }
            let mu = moves_of(u);
            let mv = moves_of(v);
            if !mu.is_empty() && !mv.is_empty() {
                mutual.push((u.clone(), v.clone(), mu, mv));
            }
        }
    }

    let roll: f64 = rng.gen();
    let kind = if roll < 0.5 {
        DealKind::SupportMove
    } else if roll < 0.85 {
        DealKind::MutualMoves
    } else {
        DealKind::SupportHold
    };
    let sc_first = |dest: &ProvinceId| map.is_supply_center(dest);
    let (u1, a1, u2, a2) = match kind {
        DealKind::SupportMove | DealKind::SupportHold => {
            let pool = if kind == DealKind::SupportMove {
                &support_moves
            } else {
                &support_holds
            };
            if pool.is_empty() {
                return None;
            }
            let sc: Vec<_> = pool
                .iter()
                .filter(|c| matches!(&c.3, Order::Move { dest } if sc_first(dest)))
                .collect();
            let pick = if !sc.is_empty() && rng.gen_bool(0.7) {
                (*sc.choose(rng)?).clone()
            } else {
                pool.choose(rng)?.clone()
            };
            let (sup, so, mov, mo, sup_is_first) = pick;
            if sup_is_first {
                (sup, so, mov, mo)
            } else {
                (mov, mo, sup, so)
            }
        }
        DealKind::MutualMoves => {
            let (u, v, mu, mv) = mutual.choose(rng)?.clone();
            let pick_dest = |opts: &[ProvinceId], rng: &mut ChaCha8Rng| -> ProvinceId {
                let sc: Vec<&ProvinceId> = opts.iter().filter(|d| sc_first(d)).collect();
                if !sc.is_empty() && rng.gen_bool(0.7) {
                    (*sc.choose(rng).expect("non-empty")).clone()
                } else {
                    opts.choose(rng).expect("non-empty").clone()
                }
            };
            let x = pick_dest(&mu, rng);
            let rest: Vec<ProvinceId> = mv.into_iter().filter(|d| d != &x).collect();
            if rest.is_empty() {
                return None;
            }
            let y = pick_dest(&rest, rng);
            (u, Order::Move { dest: x }, v, Order::Move { dest: y })
        }
    };
    Some(Deal {
        agreement: Agreement {
            round: state.round,
            power_i: first.clone(),
            power_j: second.clone(),
            u1,
            u2,
            a1,
            a2,
        },
        kind,
    })
}

fn province_ref(map: &MapGraph, p: &ProvinceId, rng: &mut ChaCha8Rng) -> String {
    let mut forms = vec![p.to_string()];
    if let Ok(prov) = map.province(p) {
        if let Some(n) = &prov.name {
            forms.push(n.clone());
            forms.push(n.clone());
        }
        forms.extend(prov.aliases.iter().cloned());
    }
    forms.choose(rng).expect("non-empty").clone()
}

/// `A BUD` or `my army in Budapest`.
fn unit_ref(map: &MapGraph, state: &GameState, unit: &UnitId, owner_word: &str, rng: &mut ChaCha8Rng) -> String {
    let u = &state.units[unit];
    if rng.gen_bool(0.5) {
        u.reference()
    } else {
        let kind = match u.kind {
            crate::map::UnitKind::Army => "army",
            crate::map::UnitKind::Fleet => "fleet",
        };
        format!("{owner_word} {kind} in {}", province_ref(map, &u.province, rng))
    }
}

fn deal_text(map: &MapGraph, state: &GameState, deal: &Deal, rng: &mut ChaCha8Rng) -> (String, String) {
    let a = &deal.agreement;
    let my_u1 = unit_ref(map, state, &a.u1, "my", rng);
    let your_u2 = unit_ref(map, state, &a.u2, "your", rng);
    let my_u2 = unit_ref(map, state, &a.u2, "my", rng);
    match deal.kind {
        DealKind::SupportMove => {
            // the supporter is whichever side holds the support order
            let (dest, u1_supports) = match (&a.a1, &a.a2) {
                (Order::SupportMove { dest, .. }, _) => (dest.clone(), true),
                (_, Order::SupportMove { dest, .. }) => (dest.clone(), false),
                _ => unreachable!("support deal without support"),
            };
            let x = province_ref(map, &dest, rng);
            let x2 = province_ref(map, &dest, rng);
            if u1_supports {
                let open = [
                    format!("I can support {your_u2} into {x} with {my_u1}. Interested?"),
                    format!("How about {my_u1} supports {your_u2} to {x} this turn?"),
                    format!("Proposal: you go for {x} with {your_u2}, {my_u1} backs you up."),
                ];
                let reply = [
                    format!("Deal, {my_u2} moves to {x2}."),
                    format!("Agreed. Moving into {x2}, thanks for the support."),
                    format!("Yes, count on it, {x2} it is."),
                ];
                (open.choose(rng).unwrap().clone(), reply.choose(rng).unwrap().clone())
            } else {
                let open = [
                    format!("Could {your_u2} support {my_u1} into {x}?"),
                    format!("I want to take {x} with {my_u1}. Will you support me with {your_u2}?"),
                    format!("Help me into {x}? {my_u1} needs the support."),
                ];
                let reply = [
                    format!("Yes, {my_u2} will support you into {x2}."),
                    format!("Fine, you have my support for {x2}."),
                    format!("Agreed, support for {x2} coming from {my_u2}."),
                ];
                (open.choose(rng).unwrap().clone(), reply.choose(rng).unwrap().clone())
            }
        }
        DealKind::MutualMoves => {
            let dest = |o: &Order| match o {
                Order::Move { dest } => dest.clone(),
                _ => unreachable!("mutual deal without moves"),
            };
            let x = province_ref(map, &dest(&a.a1), rng);
            let y = province_ref(map, &dest(&a.a2), rng);
            let y2 = province_ref(map, &dest(&a.a2), rng);
            let open = [
                format!("{my_u1} goes to {x}, {your_u2} takes {y}. Fair split?"),
                format!("Let's split it: I move into {x} and you move {your_u2} to {y}."),
                format!("You take {y}, I take {x} with {my_u1}. No bouncing."),
            ];
            let reply = [
                format!("Fair. {my_u2} to {y2}, and you take {x}."),
                format!("Works for me, heading to {y2}."),
                format!("Deal, I go to {y2} and stay out of {x}."),
            ];
            (open.choose(rng).unwrap().clone(), reply.choose(rng).unwrap().clone())
        }
        DealKind::SupportHold => {
            let (held, u1_supports) = match (&a.a1, &a.a2) {
                (Order::SupportHold { .. }, _) => (state.units[&a.u2].province.clone(), true),
                _ => (state.units[&a.u1].province.clone(), false),
            };
            let p = province_ref(map, &held, rng);
            let p2 = province_ref(map, &held, rng);
            if u1_supports {
                (
                    format!("{my_u1} will support {your_u2} in {p} if you hold there."),
                    format!("Good, {my_u2} holds in {p2}."),
                )
            } else {
                (
                    format!("I'm holding {p} with {my_u1}. Can {your_u2} support me there?"),
                    format!("Sure, {my_u2} supports you in {p2}."),
                )
            }
        }
    }
}

fn rejected_text(
    map: &MapGraph,
    state: &GameState,
    first: &Power,
    second: &Power,
    rng: &mut ChaCha8Rng,
) -> Option<(String, String)> {
    let units: Vec<&UnitId> = state.units_of(first).map(|(id, _)| id).collect();
    let u = *units.choose(rng)?;
    let dests: Vec<ProvinceId> = legal_orders(map, state, u)
        .ok()?
        .into_iter()
        .filter_map(|o| match o {
            Order::Move { dest } => Some(dest),
            _ => None,
        })
        .filter(|d| unit_distance_to(map, state, d, second) <= 2)
        .collect();
    let dest = dests.choose(rng)?;
    let my_u = unit_ref(map, state, u, "my", rng);
    let x = province_ref(map, dest, rng);
    let x2 = province_ref(map, dest, rng);
    let open = [
        format!("Would you let {my_u} into {x}?"),
        format!("Any objection if {my_u} moves to {x}?"),
        format!("I was thinking about {x}. Support me there?"),
    ];
    let reply = [
        format!("No, I want {x2} myself."),
        format!("Sorry, {x2} is off the table."),
        format!("Not this turn, stay away from {x2}."),
    ];
    Some((open.choose(rng).unwrap().clone(), reply.choose(rng).unwrap().clone()))
}

fn announcement(
    map: &MapGraph,
    state: &GameState,
    speaker: &Power,
    listener: &Power,
    committed: &BTreeSet<UnitId>,
    rng: &mut ChaCha8Rng,
) -> Option<(UnitId, Order, String)> {
    let far: Vec<&UnitId> = state
        .units_of(speaker)
        .filter(|(id, u)| !committed.contains(*id) && unit_distance_to(map, state, &u.province, listener) > 2)
        .map(|(id, _)| id)
        .collect();
    let u = *far.choose(rng)?;
    let orders: Vec<Order> = legal_orders(map, state, u)
        .ok()?
        .into_iter()
        .filter(|o| o.is_move() || o.is_support())
        .collect();
    let order = orders.choose(rng)?.clone();
    let my_u = unit_ref(map, state, u, "my", rng);
    let text = match &order {
        Order::Move { dest } => {
            let x = province_ref(map, dest, rng);
            [
                format!("Just so you know, {my_u} is heading to {x}."),
                format!("Far from you, but {my_u} moves into {x} this turn."),
            ]
            .choose(rng)
            .unwrap()
            .clone()
        }
        Order::SupportHold { target } | Order::SupportMove { target, .. } => {
            let t = state.units[target].reference();
            let dest = order
                .target_provinces(state)
                .last()
                .cloned()
                .unwrap_or_else(|| state.units[target].province.clone());
            let x = province_ref(map, &dest, rng);
            format!("FYI {my_u} will back {t} around {x}.")
        }
        Order::Hold => unreachable!("holds are filtered out"),
    };
    Some((u.clone(), order, text))
}

/// One scripted player; all players of a game share a [`Director`].
pub struct ScriptedNegotiator {
    power: Power,
    director: Rc<RefCell<Director>>,
}

impl ScriptedNegotiator {
    pub fn new(power: Power, director: Rc<RefCell<Director>>) -> Self {
        ScriptedNegotiator { power, director }
    }
}

impl Agent for ScriptedNegotiator {
    fn power(&self) -> &Power {
        &self.power
    }

    fn negotiate(&mut self, ctx: &TurnContext<'_>, pass: usize, _: &[Message], rng: &mut ChaCha8Rng) -> Vec<Message> {
        let mut d = self.director.borrow_mut();
        d.ensure_plan(ctx, rng);
        d.plan
            .passes
            .get(pass)
            .map(|msgs| msgs.iter().filter(|m| m.from == self.power).cloned().collect())
            .unwrap_or_default()
    }

    fn orders(&mut self, ctx: &TurnContext<'_>, _: &DialogueRound, rng: &mut ChaCha8Rng) -> Vec<(UnitId, Order)> {
        let mut d = self.director.borrow_mut();
        d.ensure_plan(ctx, rng);
        let honesty = d.config.honesty;
        let mut out = Vec::new();
        for (id, _) in ctx.state.units_of(&self.power) {
            let legal = legal_orders(ctx.map, ctx.state, id).expect("unit exists");
            let order = match d.plan.pledged.get(id) {
                Some(p) if rng.gen_bool(honesty) => p.clone(),
                Some(_) => legal.choose(rng).expect("hold is always legal").clone(),
                None => sample_base(&d.proposal, ctx.map, ctx.state, id, &legal, rng),
            };
            out.push((id.clone(), order));
        }
        out
    }
}

fn sample_base(
    params: &HeuristicParams,
    map: &MapGraph,
    state: &GameState,
    unit: &UnitId,
    legal: &[Order],
    rng: &mut ChaCha8Rng,
) -> Order {
    let logits: Vec<f64> = legal
        .iter()
        .map(|o| params.base_logit(map, state, unit, o).unwrap_or(0.0) / params.temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (o, wi) in legal.iter().zip(&w) {
        if r < *wi {
            return o.clone();
        }
        r -= wi;
    }
    legal.last().expect("non-empty").clone()
}
