//! Constructive non-identifiability certificates: given one or more rooted
//! confounded trees over a shared target factor, build a pair of discrete
//! models that agree on every input factor table yet disagree on the target.
//!
//! Each model encodes one bit per input tree. Variables carry the modulo-2
//! sum of their parents and of one fair coin per bidirected edge; the second
//! model cuts the target variables off from everything outside the target,
//! which leaves every input table untouched but shifts the target factor.
//! With several trees the bits live side by side in one value, so a variable
//! holds a tuple of bits and the guarantee applies to each tree's own bit
//! slice of its table. For a single tree the slice is the whole table.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::detect_ctf_hedge;
use crate::expr::{CtfConjunction, CtfEvent, PotentialResponse, Val};
use crate::graph::{CausalDiagram, VarId, VarSet};
use crate::oracle::{DiscreteSCM, EndoSpec, ExoSpec, OracleError, ScmSpec};
use crate::rewrite::{SConj, SEvent, SVal};

/// Uniform mixing weight applied to the emitted models so every joint cell
/// is strictly positive. Mixing is global (one selector coin for the whole
/// model), which keeps the two models in exact agreement on the inputs.
pub const SMOOTHING: f64 = 1e-3;

const AGREEMENT_TOL: f64 = 1e-12;
const GAP_FLOOR: f64 = 0.05;
const CROSSCHECK_STATES: u128 = 1 << 20;

#[derive(Debug, Error)]
pub enum WitnessError {
    #[error("input {index} is not a rooted confounded tree over the target")]
    NotAHedge { index: usize },
    #[error("event on {name} carries a symbolic value; witnesses need concrete events")]
    SymbolicValue { name: String },
    #[error("event on {name} has value {value}; witness encodings are binary")]
    NonBinaryValue { name: String, value: Val },
    #[error("input {index} is declared over a different variable universe")]
    UniverseMismatch { index: usize },
    #[error("input {index}'s bidirected tree does not connect the target variables")]
    RootDisconnected { index: usize },
    #[error("constructed pair violates its contract: {detail}")]
    ContractViolated { detail: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A verified pair of models certifying non-identifiability. The models are
/// smoothed for positivity; the recorded figures cover both stages.
#[derive(Debug)]
pub struct WitnessPair {
    pub m1: DiscreteSCM,
    pub m2: DiscreteSCM,
    /// Largest input-table cell difference before smoothing.
    pub agreement: f64,
    /// Difference on the even-sum target probe before smoothing.
    pub parity_gap: f64,
    /// Difference on the exact target event before smoothing.
    pub event_gap: f64,
    pub smoothed_parity_gap: f64,
    pub smoothed_event_gap: f64,
    pub transcript: Vec<String>,
}

struct Frame<'a> {
    g0: &'a CausalDiagram,
    hedges: &'a [SConj],
    bits: usize,
    k: usize,
    tsets: Vec<VarSet>,
    cset: VarSet,
    dir: Vec<Vec<(VarId, VarId)>>,
    edges: Vec<(VarId, VarId)>,
    edge_bits: Vec<Vec<usize>>,
    missing: Vec<Vec<usize>>,
    delta: Vec<u8>,
}

/// Replace every symbolic value in `c` with the fixed value `v`. Engine
/// certificates leave the non-target chain values symbolic because the
/// obstruction holds for all of them; the witness constructor needs one
/// concrete instance. Chain ties survive because tied positions share the
/// replacement.
pub fn grounded(c: &SConj, v: Val) -> SConj {
    let fix = |s: SVal| match s {
        SVal::Fixed(x) => SVal::Fixed(x),
        SVal::Idx(_) => SVal::Fixed(v),
    };
    SConj::new(
        c.events()
            .iter()
            .map(|e| {
                let subscript = e.subscript.iter().map(|(&p, &s)| (p, fix(s))).collect();
                SEvent::new(e.var, subscript, fix(e.value))
            })
            .collect(),
    )
}

/// Build the model pair for one rooted confounded tree. `t` and `c` must
/// pass [`detect_ctf_hedge`] on `g` and carry binary concrete values. The
/// returned pair is asserted to match on the full input factor table and to
/// differ on the target factor before the figures are recorded.
pub fn hedge_witness(
    g: &CausalDiagram,
    t: &SConj,
    c: &SConj,
) -> Result<WitnessPair, WitnessError> {
    thicket_witness(std::slice::from_ref(g), std::slice::from_ref(t), c)
}

/// Build the model pair for several trees sharing one root factor, one bit
/// per tree. Each `(gs[i], hedges[i], c)` must pass [`detect_ctf_hedge`];
/// the diagrams must share a variable universe. Agreement is asserted on
/// each tree's own bit slice of its table; the gap is asserted on the target
/// event with every bit set to the queried value.
pub fn thicket_witness(
    gs: &[CausalDiagram],
    hedges: &[SConj],
    c: &SConj,
) -> Result<WitnessPair, WitnessError> {
    let frame = build_frame(gs, hedges, c)?;
    let raw1 = DiscreteSCM::from_spec(&build_spec(&frame, false, None))?;
    let raw2 = DiscreteSCM::from_spec(&build_spec(&frame, true, None))?;

    let mut transcript = Vec::new();
    let mut agreement = 0.0f64;
    for (i, t) in hedges.iter().enumerate() {
        let width = slice_agreement(&frame, &raw1, &raw2, i)?;
        transcript.push(format!(
            "input {}: {} events, bit {}, largest table gap {:.3e}",
            i,
            t.len(),
            i,
            width
        ));
        agreement = agreement.max(width);
    }

    let (p1, p2) = parity_probe(&frame, c, &raw1, &raw2)?;
    let parity_gap = (p1 - p2).abs();
    let e1 = raw1.l3_valuation(&replicated_conjunction(&frame, c))?;
    let e2 = raw2.l3_valuation(&replicated_conjunction(&frame, c))?;
    let event_gap = (e1 - e2).abs();
    transcript.push(format!(
        "even-sum target probe: {:.6} vs {:.6}, gap {:.6}",
        p1, p2, parity_gap
    ));
    transcript.push(format!(
        "target event: {:.6} vs {:.6}, gap {:.6}",
        e1, e2, event_gap
    ));

    if agreement > AGREEMENT_TOL {
        return Err(WitnessError::ContractViolated {
            detail: format!("input tables differ by {agreement:.3e}"),
        });
    }
    if event_gap < GAP_FLOOR || parity_gap < GAP_FLOOR {
        return Err(WitnessError::ContractViolated {
            detail: format!(
                "target gaps too small: event {event_gap:.6}, parity {parity_gap:.6}"
            ),
        });
    }

    let m1 = DiscreteSCM::from_spec(&build_spec(&frame, false, Some(SMOOTHING)))?;
    let m2 = DiscreteSCM::from_spec(&build_spec(&frame, true, Some(SMOOTHING)))?;
    // Global mixing scales every probability difference by the structural
    // weight, so the smoothed figures follow without re-enumeration.
    let smoothed_parity_gap = (1.0 - SMOOTHING) * parity_gap;
    let smoothed_event_gap = (1.0 - SMOOTHING) * event_gap;
    if m1.exo_states() <= CROSSCHECK_STATES {
        let uniform = (frame.k as f64).powi(-(c.len() as i32));
        let want = (1.0 - SMOOTHING) * e1 + SMOOTHING * uniform;
        let got = m1.l3_valuation(&replicated_conjunction(&frame, c))?;
        if (got - want).abs() > 1e-9 {
            return Err(WitnessError::ContractViolated {
                detail: format!("smoothed model drifts from the mixture: {got} vs {want}"),
            });
        }
    }
    transcript.push(format!(
        "smoothing {:.0e}: event gap {:.6}, even-sum gap {:.6}",
        SMOOTHING, smoothed_event_gap, smoothed_parity_gap
    ));

    Ok(WitnessPair {
        m1,
        m2,
        agreement,
        parity_gap,
        event_gap,
        smoothed_parity_gap,
        smoothed_event_gap,
        transcript,
    })
}

fn fixed_binary(g: &CausalDiagram, v: VarId, s: SVal) -> Result<Val, WitnessError> {
    match s {
        SVal::Fixed(x) if x < 2 => Ok(x),
        SVal::Fixed(x) => Err(WitnessError::NonBinaryValue {
            name: g.name(v).to_string(),
            value: x,
        }),
        SVal::Idx(_) => Err(WitnessError::SymbolicValue {
            name: g.name(v).to_string(),
        }),
    }
}

fn canonical(a: VarId, b: VarId) -> (VarId, VarId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn build_frame<'a>(
    gs: &'a [CausalDiagram],
    hedges: &'a [SConj],
    c: &SConj,
) -> Result<Frame<'a>, WitnessError> {
    assert!(!gs.is_empty() && gs.len() == hedges.len());
    let g0 = &gs[0];
    for (i, g) in gs.iter().enumerate().skip(1) {
        let same = g.n() == g0.n() && (0..g.n()).all(|v| g.name(v) == g0.name(v));
        if !same {
            return Err(WitnessError::UniverseMismatch { index: i });
        }
    }
    for t in hedges {
        for e in t.events() {
            fixed_binary(g0, e.var, e.value)?;
            for (&p, &s) in &e.subscript {
                fixed_binary(g0, p, s)?;
            }
        }
    }
    for (i, t) in hedges.iter().enumerate() {
        if !detect_ctf_hedge(&gs[i], t, c) {
            return Err(WitnessError::NotAHedge { index: i });
        }
    }

    let bits = hedges.len();
    let cset = c.vars();
    let tsets: Vec<VarSet> = hedges.iter().map(|t| t.vars()).collect();
    let mut dir = Vec::with_capacity(bits);
    let mut union_edges: BTreeSet<(VarId, VarId)> = BTreeSet::new();
    let mut per_tree: Vec<Vec<(VarId, VarId)>> = Vec::with_capacity(bits);
    for (i, g) in gs.iter().enumerate() {
        let tset = tsets[i];
        dir.push(
            g.directed_edges()
                .filter(|&(p, q)| {
                    tset.contains(p)
                        && tset.contains(q)
                        && !(cset.contains(p) && cset.contains(q))
                })
                .collect(),
        );
        let tree: Vec<(VarId, VarId)> = g
            .bidirected_edges()
            .iter()
            .filter(|&&(a, b)| tset.contains(a) && tset.contains(b))
            .map(|&(a, b)| canonical(a, b))
            .collect();
        let mut leader: BTreeMap<VarId, VarId> = cset.iter().map(|v| (v, v)).collect();
        for &(a, b) in &tree {
            if cset.contains(a) && cset.contains(b) {
                let (ra, rb) = (find(&mut leader, a), find(&mut leader, b));
                leader.insert(ra, rb);
            }
        }
        let head = find(&mut leader, cset.first().unwrap());
        if cset.iter().any(|v| find(&mut leader, v) != head) {
            return Err(WitnessError::RootDisconnected { index: i });
        }
        union_edges.extend(tree.iter().copied());
        per_tree.push(tree);
    }
    let edges: Vec<(VarId, VarId)> = union_edges.into_iter().collect();
    let edge_bits: Vec<Vec<usize>> = edges
        .iter()
        .map(|e| (0..bits).filter(|&i| per_tree[i].contains(e)).collect())
        .collect();
    let missing: Vec<Vec<usize>> = (0..g0.n())
        .map(|v| (0..bits).filter(|&i| !tsets[i].contains(v)).collect())
        .collect();

    let mut delta = vec![0u8; g0.n()];
    let mut parity = 0u8;
    for e in c.events() {
        parity ^= fixed_binary(g0, e.var, e.value)? as u8;
    }
    if parity == 1 {
        let last = cset.iter().last().unwrap();
        delta[last] = 1;
    }

    Ok(Frame {
        g0,
        hedges,
        bits,
        k: 1 << bits,
        tsets,
        cset,
        dir,
        edges,
        edge_bits,
        missing,
        delta,
    })
}

fn find(leader: &mut BTreeMap<VarId, VarId>, mut v: VarId) -> VarId {
    while leader[&v] != v {
        let up = leader[&leader[&v]];
        leader.insert(v, up);
        v = up;
    }
    v
}

/// Lay out a model: one fair latent per bidirected tree edge, per-variable
/// coins for the bits a variable sits outside of, and under smoothing one
/// global selector that reroutes every variable to its own uniform source.
fn build_spec(frame: &Frame, cut: bool, eps: Option<f64>) -> ScmSpec {
    let g = frame.g0;
    let k = frame.k;
    let n_edges = frame.edges.len();
    let mut exogenous = Vec::new();
    for (e, &(a, b)) in frame.edges.iter().enumerate() {
        let card = 1usize << frame.edge_bits[e].len();
        exogenous.push(ExoSpec {
            name: format!("U:{}:{}", g.name(a), g.name(b)),
            card,
            probs: vec![1.0 / card as f64; card],
        });
    }
    let mut noise_index = vec![None; g.n()];
    for v in 0..g.n() {
        let card = match eps {
            Some(_) => k,
            None => 1usize << frame.missing[v].len(),
        };
        if card > 1 {
            noise_index[v] = Some(exogenous.len());
            exogenous.push(ExoSpec {
                name: format!("N:{}", g.name(v)),
                card,
                probs: vec![1.0 / card as f64; card],
            });
        }
    }
    let sel_index = eps.map(|e| {
        exogenous.push(ExoSpec {
            name: "SEL".to_string(),
            card: 2,
            probs: vec![1.0 - e, e],
        });
        exogenous.len() - 1
    });

    let keep_edge = |v: VarId, e: usize| -> bool {
        let (a, b) = frame.edges[e];
        let other = if a == v { b } else { a };
        !(cut && frame.cset.contains(v) && !frame.cset.contains(other))
    };
    let keep_parent = |v: VarId, p: VarId| -> bool {
        !(cut && frame.cset.contains(v) && !frame.cset.contains(p))
    };

    let mut endogenous = Vec::new();
    for v in 0..g.n() {
        let my_edges: Vec<usize> = (0..n_edges)
            .filter(|&e| {
                let (a, b) = frame.edges[e];
                (a == v || b == v) && keep_edge(v, e)
            })
            .collect();
        let mut parents: Vec<VarId> = (0..frame.bits)
            .flat_map(|i| frame.dir[i].iter().copied())
            .filter(|&(p, q)| q == v && keep_parent(v, p))
            .map(|(p, _)| p)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        parents.sort_unstable();

        let mut exo_parents: Vec<usize> = my_edges.clone();
        if let Some(ni) = noise_index[v] {
            exo_parents.push(ni);
        }
        if let Some(si) = sel_index {
            exo_parents.push(si);
        }

        let cards: Vec<usize> = exo_parents
            .iter()
            .map(|&x| exogenous[x].card)
            .chain(parents.iter().map(|_| k))
            .collect();
        let total: usize = cards.iter().product();
        let mut mechanism = Vec::with_capacity(total);
        for flat in 0..total {
            let mut digits = vec![0usize; cards.len()];
            let mut rest = flat;
            for (slot, &card) in cards.iter().enumerate().rev() {
                digits[slot] = rest % card;
                rest /= card;
            }
            mechanism.push(mech_value(
                frame, cut, v, &my_edges, &parents, &digits, &noise_index, sel_index.is_some(),
            ));
        }
        endogenous.push(EndoSpec {
            name: g.name(v).to_string(),
            card: k,
            exo_parents: exo_parents.iter().map(|&x| exogenous[x].name.clone()).collect(),
            endo_parents: parents.iter().map(|&p| g.name(p).to_string()).collect(),
            mechanism,
        });
    }
    ScmSpec { endogenous, exogenous }
}

fn mech_value(
    frame: &Frame,
    cut: bool,
    v: VarId,
    my_edges: &[usize],
    parents: &[VarId],
    digits: &[usize],
    noise_index: &[Option<usize>],
    smoothed: bool,
) -> usize {
    let noise_slot = my_edges.len();
    let sel_slot = noise_slot + usize::from(noise_index[v].is_some());
    let parent_base = digits.len() - parents.len();
    let noise = noise_index[v].map(|_| digits[noise_slot]).unwrap_or(0);
    if smoothed && digits[sel_slot] == 1 {
        return noise;
    }
    let mut out = 0usize;
    for i in 0..frame.bits {
        let bit = if !frame.tsets[i].contains(v) {
            let rank = if smoothed {
                i
            } else {
                frame.missing[v].iter().position(|&m| m == i).unwrap()
            };
            (noise >> rank) & 1
        } else {
            let mut acc = frame.delta[v] as usize;
            for (slot, &p) in parents.iter().enumerate() {
                let used = frame.dir[i].contains(&(p, v))
                    && !(cut && frame.cset.contains(v) && !frame.cset.contains(p));
                if used {
                    acc ^= ((digits[parent_base + slot] >> i) & 1)
                        ^ frame.delta[p] as usize;
                }
            }
            for (slot, &e) in my_edges.iter().enumerate() {
                if let Some(rank) = frame.edge_bits[e].iter().position(|&b| b == i) {
                    acc ^= (digits[slot] >> rank) & 1;
                }
            }
            acc & 1
        };
        out |= bit << i;
    }
    out
}

fn replicate(frame: &Frame, v: Val) -> Val {
    v * (frame.k - 1)
}

fn replicated_conjunction(frame: &Frame, c: &SConj) -> CtfConjunction {
    let events = c
        .events()
        .iter()
        .map(|e| {
            let entries: Vec<(VarId, Val)> = e
                .subscript
                .iter()
                .map(|(&p, &s)| (p, replicate(frame, fixed(s))))
                .collect();
            let value = replicate(frame, fixed(e.value));
            CtfEvent::new(PotentialResponse::with_values(e.var, &entries), value)
        })
        .collect();
    CtfConjunction::new(events)
}

fn fixed(s: SVal) -> Val {
    match s {
        SVal::Fixed(v) => v,
        SVal::Idx(_) => unreachable!("validated during frame construction"),
    }
}

/// Sum of target-event probabilities over the binary assignments whose
/// shifted bit sum is even; the cut model pins this at one before smoothing.
fn parity_probe(
    frame: &Frame,
    c: &SConj,
    m1: &DiscreteSCM,
    m2: &DiscreteSCM,
) -> Result<(f64, f64), WitnessError> {
    let cvars: Vec<VarId> = frame.cset.iter().collect();
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for mask in 0..(1usize << cvars.len()) {
        let assign: BTreeMap<VarId, Val> = cvars
            .iter()
            .enumerate()
            .map(|(slot, &v)| (v, (mask >> slot) & 1))
            .collect();
        let parity: usize = cvars
            .iter()
            .map(|&v| assign[&v] ^ frame.delta[v] as usize)
            .sum::<usize>()
            & 1;
        if parity != 0 {
            continue;
        }
        let events: Vec<CtfEvent> = c
            .events()
            .iter()
            .map(|e| {
                let entries: Vec<(VarId, Val)> = e
                    .subscript
                    .iter()
                    .map(|(&p, &s)| (p, replicate(frame, fixed(s))))
                    .collect();
                CtfEvent::new(
                    PotentialResponse::with_values(e.var, &entries),
                    replicate(frame, assign[&e.var]),
                )
            })
            .collect();
        let conj = CtfConjunction::new(events);
        p1 += m1.l3_valuation(&conj)?;
        p2 += m2.l3_valuation(&conj)?;
    }
    Ok((p1, p2))
}

/// Largest cell difference between the two models on tree `i`'s own bit
/// slice of its factor table: every event value and every in-tree subscript
/// entry ranges over the binary assignments, with only bit `i` compared.
fn slice_agreement(
    frame: &Frame,
    m1: &DiscreteSCM,
    m2: &DiscreteSCM,
    i: usize,
) -> Result<f64, WitnessError> {
    let tset = frame.tsets[i];
    let tvars: Vec<VarId> = tset.iter().collect();
    let slot_of: BTreeMap<VarId, usize> =
        tvars.iter().enumerate().map(|(s, &v)| (v, s)).collect();
    let events = frame.hedges[i].events();
    let in_keys: Vec<Vec<VarId>> = events
        .iter()
        .map(|e| e.subscript.keys().copied().filter(|p| tset.contains(*p)).collect())
        .collect();

    let spec = m1.to_spec();
    let exo_cards: Vec<usize> = spec.exogenous.iter().map(|e| e.card).collect();
    let exo_probs: Vec<Vec<f64>> = spec.exogenous.iter().map(|e| e.probs.clone()).collect();
    let states: usize = exo_cards.iter().product();
    let cells = 1usize << tvars.len();
    let mut t1 = vec![0.0f64; cells];
    let mut t2 = vec![0.0f64; cells];

    let mut unit = vec![0usize; exo_cards.len()];
    for flat in 0..states {
        let mut rest = flat;
        for x in (0..exo_cards.len()).rev() {
            unit[x] = rest % exo_cards[x];
            rest /= exo_cards[x];
        }
        let weight: f64 = unit.iter().enumerate().map(|(x, &d)| exo_probs[x][d]).product();

        // Bit `i` of each event's response under every binary pin combo,
        // reused across all table cells for this unit.
        let mut bits1: Vec<Vec<usize>> = Vec::with_capacity(events.len());
        let mut bits2: Vec<Vec<usize>> = Vec::with_capacity(events.len());
        for (e, event) in events.iter().enumerate() {
            let combos = 1usize << in_keys[e].len();
            let mut b1 = Vec::with_capacity(combos);
            let mut b2 = Vec::with_capacity(combos);
            for combo in 0..combos {
                let entries: Vec<(VarId, Val)> = event
                    .subscript
                    .iter()
                    .map(|(&p, &s)| {
                        let raw = match in_keys[e].iter().position(|&q| q == p) {
                            Some(pos) => (combo >> pos) & 1,
                            None => fixed(s),
                        };
                        (p, replicate(frame, raw))
                    })
                    .collect();
                let pr = PotentialResponse::with_values(event.var, &entries);
                b1.push((m1.eval_response(&pr, &unit) >> i) & 1);
                b2.push((m2.eval_response(&pr, &unit) >> i) & 1);
            }
            bits1.push(b1);
            bits2.push(b2);
        }

        for cell in 0..cells {
            let value_of = |v: VarId| (cell >> slot_of[&v]) & 1;
            let combo_of = |e: usize| {
                in_keys[e]
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (pos, &p)| acc | (value_of(p) << pos))
            };
            let hold = |bits: &[Vec<usize>]| {
                events
                    .iter()
                    .enumerate()
                    .all(|(e, ev)| bits[e][combo_of(e)] == value_of(ev.var))
            };
            if hold(&bits1) {
                t1[cell] += weight;
            }
            if hold(&bits2) {
                t2[cell] += weight;
            }
        }
    }
    Ok(t1
        .iter()
        .zip(&t2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::fig3;

    fn f(v: Val) -> SVal {
        SVal::Fixed(v)
    }

    fn ev(g: &CausalDiagram, var: &str, sub: &[(&str, SVal)], value: SVal) -> SEvent {
        let subscript = sub
            .iter()
            .map(|&(name, s)| (g.var(name).unwrap(), s))
            .collect();
        SEvent::new(g.var(var).unwrap(), subscript, value)
    }

    fn fig3_hedge(g: &CausalDiagram) -> (SConj, SConj) {
        let c = SConj::new(vec![
            ev(g, "F", &[("D", f(0))], f(1)),
            ev(g, "E", &[("G", f(0)), ("H", f(0))], f(1)),
        ]);
        let t = c.and(&SConj::new(vec![
            ev(g, "S", &[], f(0)),
            ev(g, "C", &[], f(0)),
            ev(g, "B", &[("S", f(0)), ("C", f(0))], f(1)),
            ev(g, "D", &[("B", f(1))], f(0)),
        ]));
        (t, c)
    }

    fn second_tree(g0: &CausalDiagram) -> (CausalDiagram, SConj) {
        let vars: Vec<(&str, usize)> = (0..g0.n()).map(|v| (g0.name(v), g0.card(v))).collect();
        let g2 = CausalDiagram::new(
            &vars,
            &[("B", "H"), ("H", "E"), ("G", "E")],
            &[("B", "F"), ("F", "E"), ("E", "G"), ("G", "H")],
        )
        .unwrap();
        let t2 = SConj::new(vec![
            ev(&g2, "B", &[], f(1)),
            ev(&g2, "H", &[("B", f(1))], f(0)),
            ev(&g2, "G", &[], f(0)),
            ev(&g2, "E", &[("G", f(0)), ("H", f(0))], f(1)),
            ev(&g2, "F", &[("D", f(0))], f(1)),
        ]);
        (g2, t2)
    }

    #[test]
    fn single_tree_pair_matches_the_documented_figures() {
        let g = fig3();
        let (t, c) = fig3_hedge(&g);
        let pair = hedge_witness(&g, &t, &c).unwrap();
        assert!(pair.agreement <= 1e-12, "agreement {}", pair.agreement);
        assert!((pair.parity_gap - 0.5).abs() < 1e-12, "parity {}", pair.parity_gap);
        assert!((pair.event_gap - 0.25).abs() < 1e-12, "event {}", pair.event_gap);
        assert!((pair.smoothed_event_gap - 0.999 * 0.25).abs() < 1e-12);
        assert!((pair.smoothed_parity_gap - 0.999 * 0.5).abs() < 1e-12);
        assert!(pair.transcript.iter().any(|l| l.contains("target event")));
    }

    #[test]
    fn engine_certificates_feed_the_constructor_directly() {
        let g = fig3();
        let (t, c) = fig3_hedge(&g);
        let cert = crate::engine::tests::chained_values_certificate();
        assert_eq!(cert.t, t);
        assert_eq!(cert.c, c);
        let pair = hedge_witness(&cert.subgraph, &cert.t, &cert.c).unwrap();
        assert!(pair.agreement <= 1e-12);
        assert!((pair.event_gap - 0.25).abs() < 1e-12);
        assert!((pair.parity_gap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        let g = fig3();
        let (t, c) = fig3_hedge(&g);

        let shrunk = SConj::new(t.events()[..t.len() - 1].to_vec());
        assert!(matches!(
            hedge_witness(&g, &shrunk, &c),
            Err(WitnessError::NotAHedge { index: 0 })
        ));

        let mut events = t.events().to_vec();
        events[0] = SEvent::new(events[0].var, events[0].subscript.clone(), SVal::Idx(7));
        assert!(matches!(
            hedge_witness(&g, &SConj::new(events), &c),
            Err(WitnessError::SymbolicValue { .. })
        ));

        let mut events = t.events().to_vec();
        let wide = SEvent::new(events[0].var, events[0].subscript.clone(), f(2));
        events[0] = wide;
        assert!(matches!(
            hedge_witness(&g, &SConj::new(events), &c),
            Err(WitnessError::NonBinaryValue { .. })
        ));
    }

    #[test]
    fn smoothed_models_cover_the_support_and_mix_exactly() {
        let g = fig3();
        let (t, c) = fig3_hedge(&g);
        let pair = hedge_witness(&g, &t, &c).unwrap();

        // Without mixing both models force E and F to coincide, so the off
        // cells expose the uniform arm alone.
        let fvar = g.var("F").unwrap();
        let evar = g.var("E").unwrap();
        for (fv, ev_) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let conj = CtfConjunction::new(vec![
                CtfEvent::new(PotentialResponse::natural(fvar), fv),
                CtfEvent::new(PotentialResponse::natural(evar), ev_),
            ]);
            let p1 = pair.m1.l3_valuation(&conj).unwrap();
            let p2 = pair.m2.l3_valuation(&conj).unwrap();
            assert!(p1 > 0.0 && p2 > 0.0, "cell F={fv}, E={ev_} must be positive");
            if fv != ev_ {
                assert!((p1 - SMOOTHING / 4.0).abs() < 1e-15, "got {p1}");
                assert!((p2 - SMOOTHING / 4.0).abs() < 1e-15, "got {p2}");
            }
        }
    }

    #[test]
    fn mixing_preserves_the_input_agreement() {
        let g = fig3();
        let (t, c) = fig3_hedge(&g);
        let frame = build_frame(
            std::slice::from_ref(&g),
            std::slice::from_ref(&t),
            &c,
        )
        .unwrap();
        let m1 = DiscreteSCM::from_spec(&build_spec(&frame, false, Some(SMOOTHING))).unwrap();
        let m2 = DiscreteSCM::from_spec(&build_spec(&frame, true, Some(SMOOTHING))).unwrap();
        let width = slice_agreement(&frame, &m1, &m2, 0).unwrap();
        assert!(width <= 1e-12, "smoothed tables drift by {width}");
    }

    #[test]
    fn two_trees_share_the_root_with_one_bit_each() {
        let g1 = fig3();
        let (t1, c) = fig3_hedge(&g1);
        let (g2, t2) = second_tree(&g1);
        let pair = thicket_witness(&[g1, g2], &[t1, t2], &c).unwrap();
        assert!(pair.agreement <= 1e-12, "agreement {}", pair.agreement);
        assert!((pair.event_gap - 0.1875).abs() < 1e-12, "event {}", pair.event_gap);
        assert!((pair.parity_gap - 0.375).abs() < 1e-12, "parity {}", pair.parity_gap);
        assert_eq!(pair.m1.induced_diagram().card(0), 4);
        assert!(pair.transcript.iter().any(|l| l.contains("bit 1")));
    }

    #[test]
    fn witness_models_round_trip_through_json() {
        let g = fig3();
        let (t, c) = fig3_hedge(&g);
        let pair = hedge_witness(&g, &t, &c).unwrap();
        let back = DiscreteSCM::from_json(&pair.m1.to_json()).unwrap();
        let conj = CtfConjunction::new(vec![CtfEvent::new(
            PotentialResponse::natural(g.var("F").unwrap()),
            1,
        )]);
        let a = pair.m1.l3_valuation(&conj).unwrap();
        let b = back.l3_valuation(&conj).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}
