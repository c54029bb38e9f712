//! Realizability and PCH-layer classification of counterfactual queries.
//!
//! A conjunction is realizable when some sequence of rand/ctf-rand actions
//! can sample its distribution directly. The test is the ancestor-conflict
//! check: the counterfactual ancestor closure must not place one variable
//! under two distinct regimes. Classification returns the lowest layer
//! whose membership condition the written query satisfies.

use crate::expr::Query;
use crate::graph::{CausalDiagram, VarId, VarSet};
use crate::rewrite::{ctf_ancestors, SConj, SSubscript, SVal};

/// Strata of the Pearl Causal Hierarchy distinguished by the actions needed
/// to sample the distribution: none, rand, one all-children ctf-rand per
/// variable, unrestricted ctf-rand, or nothing physical at all.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Layer {
    L1,
    L2,
    L2_25,
    L2_5,
    L3NotL2_5,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::L1 => "L1",
            Layer::L2 => "L2",
            Layer::L2_25 => "L2.25",
            Layer::L2_5 => "L2.5",
            Layer::L3NotL2_5 => "L3-not-L2.5",
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether the conjunction's distribution can be sampled by some action
/// sequence: no variable may appear under two distinct regimes in the
/// counterfactual ancestor closure.
pub fn realizable_check(g: &CausalDiagram, conj: &SConj) -> bool {
    let closure = ctf_ancestors(g, conj);
    closure
        .iter()
        .zip(closure.iter().skip(1))
        .all(|((v, s), (w, t))| v != w || s == t)
}

/// Classify the query (joint and condition together) into the lowest
/// matching layer. The L1 and L2 checks are syntactic on the query as
/// written; L2.25 additionally demands a single assigned value per
/// intervened variable and that every ancestrally affected response records
/// that value, so one all-children ctf-rand per variable suffices; L2.5 is
/// the realizability check.
pub fn classify_layer(g: &CausalDiagram, q: &Query) -> Layer {
    let mut conj = SConj::from_unnested(&q.joint);
    if let Some(given) = &q.given {
        conj = conj.and(&SConj::from_unnested(given));
    }
    if conj.events().iter().all(|e| e.subscript.is_empty()) {
        return Layer::L1;
    }
    if is_single_world(&conj) {
        return Layer::L2;
    }
    if realizable_check(g, &conj) {
        if one_action_per_variable(g, &conj) {
            return Layer::L2_25;
        }
        return Layer::L2_5;
    }
    Layer::L3NotL2_5
}

/// One shared subscript vector: every event carries the same non-empty
/// subscript and no event measures an intervened variable.
fn is_single_world(conj: &SConj) -> bool {
    let Some(world) = conj.events().first().map(|e| e.subscript.clone()) else {
        return false;
    };
    !world.is_empty()
        && conj
            .events()
            .iter()
            .all(|e| e.subscript == world && !world.contains_key(&e.var))
}

/// Both conditions for one all-children ctf-rand per variable, checked on
/// the ancestor closure: each intervened variable carries a single assigned
/// value everywhere, and whenever an intervened variable remains an
/// ancestor of a response once the other interventions are cut, the
/// response's subscript includes it.
fn one_action_per_variable(g: &CausalDiagram, conj: &SConj) -> bool {
    let closure = ctf_ancestors(g, conj);
    let mut assigned: std::collections::BTreeMap<VarId, SVal> = std::collections::BTreeMap::new();
    for (_, sub) in &closure {
        for (&b, &v) in sub {
            match assigned.get(&b) {
                Some(&prev) if prev != v => return false,
                _ => {
                    assigned.insert(b, v);
                }
            }
        }
    }
    let intervened: VarSet = assigned.keys().copied().collect();
    for (w, sub) in &closure {
        let others = intervened.minus(VarSet::singleton(*w));
        let cut = g.mutilate(others, VarSet::EMPTY);
        for b in others.iter() {
            if cut.ancestors(VarSet::singleton(*w)).contains(b) && !sub.contains_key(&b) {
                return false;
            }
        }
    }
    true
}

/// Responses of the counterfactual ancestor closure of the query, for
/// reporting which pair conflicts.
pub fn closure_responses(g: &CausalDiagram, conj: &SConj) -> Vec<(VarId, SSubscript)> {
    ctf_ancestors(g, conj)
}
