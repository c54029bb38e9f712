//! Data-collection regimes and the template describing what a regime
//! measures.
//!
//! A regime is a set of actions. `CtfRand(X, C)` fixes the value of `X` as
//! perceived by the children in `C` while `X` itself and the remaining
//! children keep the natural value; `Rand(X)` replaces `X`'s mechanism with
//! an assigned value, leaving `X` unmeasured. The empty action set is the
//! observational regime.
//!
//! `regime_regex` maps a regime to a symbolic conjunction with one event per
//! measured variable; its axes are the assigned values (one per action) and
//! the measured outcomes. Instantiating the template at concrete axis values
//! yields an ordinary counterfactual conjunction.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{CtfConjunction, CtfEvent, PotentialResponse, Val};
use crate::graph::{CausalDiagram, VarId, VarSet};

/// One physical action taken while collecting data.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Action {
    Observe,
    Rand(VarId),
    CtfRand { source: VarId, children: VarSet },
}

impl Action {
    pub fn source(&self) -> Option<VarId> {
        match self {
            Action::Observe => None,
            Action::Rand(x) => Some(*x),
            Action::CtfRand { source, .. } => Some(*source),
        }
    }
}

#[derive(Debug, Error)]
pub enum RegimeError {
    #[error("`{child}` is not a child of `{var}`")]
    NotAChild { var: String, child: String },
    #[error("ctf-rand action on `{var}` has no target children")]
    EmptyChildren { var: String },
    #[error("rand and ctf-rand actions overlap on edges out of `{var}`")]
    RandConflict { var: String },
}

/// A validated, normalized action set. Actions keep declaration order;
/// duplicate (source, child) control pairs are removed from later actions,
/// so every controlled edge has exactly one controlling action.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RegimeSpec {
    actions: Vec<Action>,
    controlled: BTreeMap<(VarId, VarId), usize>,
}

impl RegimeSpec {
    pub fn new(g: &CausalDiagram, actions: Vec<Action>) -> Result<RegimeSpec, RegimeError> {
        let mut normalized: Vec<Action> = Vec::new();
        let mut controlled: BTreeMap<(VarId, VarId), usize> = BTreeMap::new();
        let mut rand_sources = VarSet::EMPTY;
        let mut ctf_sources = VarSet::EMPTY;
        for action in actions {
            match action {
                Action::Observe => {}
                Action::Rand(x) => {
                    if rand_sources.contains(x) {
                        continue;
                    }
                    if ctf_sources.contains(x) {
                        return Err(RegimeError::RandConflict { var: g.name(x).to_string() });
                    }
                    rand_sources.insert(x);
                    let idx = normalized.len();
                    for c in g.children(x).iter() {
                        controlled.insert((x, c), idx);
                    }
                    normalized.push(Action::Rand(x));
                }
                Action::CtfRand { source, children } => {
                    if children.is_empty() {
                        return Err(RegimeError::EmptyChildren {
                            var: g.name(source).to_string(),
                        });
                    }
                    for c in children.iter() {
                        if !g.children(source).contains(c) {
                            return Err(RegimeError::NotAChild {
                                var: g.name(source).to_string(),
                                child: g.name(c).to_string(),
                            });
                        }
                    }
                    if rand_sources.contains(source) {
                        return Err(RegimeError::RandConflict {
                            var: g.name(source).to_string(),
                        });
                    }
                    ctf_sources.insert(source);
                    let mut fresh = VarSet::EMPTY;
                    for c in children.iter() {
                        if !controlled.contains_key(&(source, c)) {
                            fresh.insert(c);
                        }
                    }
                    if fresh.is_empty() {
                        continue;
                    }
                    let idx = normalized.len();
                    for c in fresh.iter() {
                        controlled.insert((source, c), idx);
                    }
                    normalized.push(Action::CtfRand { source, children: fresh });
                }
            }
        }
        Ok(RegimeSpec { actions: normalized, controlled })
    }

    pub fn observational(g: &CausalDiagram) -> RegimeSpec {
        RegimeSpec::new(g, Vec::new()).expect("empty action set is always valid")
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn is_observational(&self) -> bool {
        self.actions.is_empty()
    }

    /// Variables whose natural value is erased and never measured.
    pub fn unmeasured(&self) -> VarSet {
        self.actions
            .iter()
            .filter_map(|a| match a {
                Action::Rand(x) => Some(*x),
                _ => None,
            })
            .collect()
    }

    /// Measured variables in declaration order.
    pub fn measured(&self, g: &CausalDiagram) -> VarSet {
        g.all_vars().minus(self.unmeasured())
    }

    /// Action controlling the edge, if any.
    pub fn controller(&self, source: VarId, child: VarId) -> Option<usize> {
        self.controlled.get(&(source, child)).copied()
    }

    fn controlled_edges(&self) -> Vec<(VarId, VarId)> {
        self.controlled.keys().copied().collect()
    }
}

/// An axis of a regime table: a value assigned by an action or a measured
/// natural outcome.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Dim {
    Assigned(usize),
    Natural(VarId),
}

/// A template event: a potential response whose subscript entries and value
/// are table axes rather than concrete values.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SymEvent {
    pub var: VarId,
    pub subscript: BTreeMap<VarId, Dim>,
    pub value: Dim,
}

/// Symbolic description of everything a regime measures.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RegimeTemplate {
    pub actions: Vec<Action>,
    pub events: Vec<SymEvent>,
}

impl RegimeTemplate {
    /// Cardinality of a table axis.
    pub fn dim_card(&self, g: &CausalDiagram, dim: Dim) -> usize {
        match dim {
            Dim::Assigned(a) => {
                g.card(self.actions[a].source().expect("normalized actions have a source"))
            }
            Dim::Natural(v) => g.card(v),
        }
    }

    /// Concrete conjunction at the given axis values.
    pub fn instantiate(
        &self,
        assigned: &[Val],
        measured: &BTreeMap<VarId, Val>,
    ) -> CtfConjunction {
        let value_of = |dim: Dim| match dim {
            Dim::Assigned(a) => assigned[a],
            Dim::Natural(v) => measured[&v],
        };
        self.events
            .iter()
            .map(|e| {
                let entries: Vec<(VarId, Val)> =
                    e.subscript.iter().map(|(&k, &d)| (k, value_of(d))).collect();
                CtfEvent::new(PotentialResponse::with_values(e.var, &entries), value_of(e.value))
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Entry {
    /// The edge into the template variable is controlled: its source reads
    /// as the action's assigned value, which no later child-pin may touch.
    EdgePin(usize),
    /// The keyed variable is pinned to its own regime outcome.
    ChildPin,
}

/// Map a regime to its measurement template: one event per measured
/// variable, subscripts built action by action, then un-nested by pinning
/// referenced children to their measured (or assigned) symbols.
pub fn regime_regex(g: &CausalDiagram, spec: &RegimeSpec) -> RegimeTemplate {
    let cut = g.remove_directed_edges(&spec.controlled_edges());
    let unmeasured = spec.unmeasured();
    let mut events = Vec::new();
    for v in 0..g.n() {
        if unmeasured.contains(v) {
            continue;
        }
        let anc = cut.ancestors(VarSet::singleton(v));
        let mut sub: BTreeMap<VarId, Entry> = BTreeMap::new();
        for (ai, action) in spec.actions.iter().enumerate() {
            let x = action.source().expect("normalized actions have a source");
            let affected: VarSet = g
                .children(x)
                .iter()
                .filter(|&c| spec.controller(x, c) == Some(ai))
                .collect();
            for c in affected.intersect(anc).iter() {
                if c == v {
                    sub.insert(x, Entry::EdgePin(ai));
                } else {
                    match sub.get(&c) {
                        Some(Entry::EdgePin(_)) => {}
                        _ => {
                            sub.insert(c, Entry::ChildPin);
                        }
                    }
                }
            }
            for c in g.children(x).minus(affected).intersect(anc).iter() {
                if c == v {
                    continue;
                }
                if matches!(spec.controller(x, c), Some(prev) if prev < ai) {
                    continue;
                }
                match sub.get(&c) {
                    Some(Entry::EdgePin(_)) => {}
                    _ => {
                        sub.insert(c, Entry::ChildPin);
                    }
                }
            }
        }
        let subscript: BTreeMap<VarId, Dim> = sub
            .into_iter()
            .map(|(k, entry)| {
                let dim = match entry {
                    Entry::EdgePin(ai) => Dim::Assigned(ai),
                    Entry::ChildPin => {
                        if unmeasured.contains(k) {
                            let rand_ai = spec
                                .actions
                                .iter()
                                .position(|a| *a == Action::Rand(k))
                                .expect("unmeasured variables come from rand actions");
                            Dim::Assigned(rand_ai)
                        } else {
                            Dim::Natural(k)
                        }
                    }
                };
                (k, dim)
            })
            .collect();
        events.push(SymEvent { var: v, subscript, value: Dim::Natural(v) });
    }
    RegimeTemplate { actions: spec.actions().to_vec(), events }
}

fn primes(n: usize) -> String {
    "'".repeat(n)
}

/// Display symbol for an assigned value: the source's lowercase name with
/// one prime per earlier action on the same source.
pub fn assigned_symbol(g: &CausalDiagram, actions: &[Action], ai: usize) -> String {
    let x = actions[ai].source().expect("normalized actions have a source");
    let earlier = actions[..ai].iter().filter(|a| a.source() == Some(x)).count();
    format!("{}{}", g.name(x).to_lowercase(), primes(earlier))
}

/// Display symbol for a measured outcome: the lowercase name primed past
/// every assigned symbol of the same variable.
pub fn natural_symbol(g: &CausalDiagram, actions: &[Action], v: VarId) -> String {
    let taken = actions.iter().filter(|a| a.source() == Some(v)).count();
    format!("{}{}", g.name(v).to_lowercase(), primes(taken))
}

/// Render a template in the query DSL with display symbols.
pub fn render_template(g: &CausalDiagram, t: &RegimeTemplate) -> String {
    let sym = |dim: Dim| match dim {
        Dim::Assigned(ai) => assigned_symbol(g, &t.actions, ai),
        Dim::Natural(v) => natural_symbol(g, &t.actions, v),
    };
    let mut out = String::from("P(");
    let mut first = true;
    for e in &t.events {
        if !first {
            out.push_str(", ");
        }
        first = false;
        out.push_str(g.name(e.var));
        if !e.subscript.is_empty() {
            out.push('[');
            let mut sfirst = true;
            for (&k, &dim) in &e.subscript {
                if !sfirst {
                    out.push_str(", ");
                }
                sfirst = false;
                out.push_str(g.name(k));
                out.push('=');
                out.push_str(&sym(dim));
            }
            out.push(']');
        }
        out.push('=');
        out.push_str(&sym(e.value));
    }
    out.push(')');
    out
}
