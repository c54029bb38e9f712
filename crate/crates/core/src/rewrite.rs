//! Rewrite operations on counterfactual conjunctions.
//!
//! The identification engine manipulates conjunctions whose values may be
//! symbolic: a [`SVal`] is either a fixed integer or a summation index bound
//! by an enclosing sum. Every operation here is a semantics-preserving
//! rewrite of the Layer-3 valuation (summed over the bound indices), or a
//! syntactic predicate on the conjunction. All graph reasoning uses directed
//! edges only; bidirected edges matter solely for the c-component partition.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{CtfConjunction, CtfEvent, PotentialResponse, Term, Val};
use crate::graph::{CausalDiagram, VarId, VarSet};

/// Symbolic value: a concrete integer or a reference to a summation index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum SVal {
    /// Fixed integer in `0..card`.
    Fixed(Val),
    /// Summation index, identified by its allocation number.
    Idx(usize),
}

/// Subscript of a symbolic event: intervened variable to symbolic value.
pub type SSubscript = BTreeMap<VarId, SVal>;

/// Un-nested event with symbolic values: `var` under the interventions in
/// `subscript` attains `value`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct SEvent {
    pub var: VarId,
    pub subscript: SSubscript,
    pub value: SVal,
}

impl SEvent {
    pub fn new(var: VarId, subscript: SSubscript, value: SVal) -> Self {
        SEvent {
            var,
            subscript,
            value,
        }
    }

    /// The event's potential response: its variable and subscript, without
    /// the attained value.
    pub fn response(&self) -> (VarId, SSubscript) {
        (self.var, self.subscript.clone())
    }
}

/// Canonical conjunction of symbolic events (sorted, exact duplicates
/// removed). Two events with equal response but different values may
/// coexist; whether that is a contradiction is decided by
/// [`trivial_conflict`] and [`canonicalize`].
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct SConj {
    events: Vec<SEvent>,
}

impl SConj {
    pub fn new(mut events: Vec<SEvent>) -> Self {
        events.sort();
        events.dedup();
        SConj { events }
    }

    pub fn events(&self) -> &[SEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Variables carrying an event (subscript-only variables excluded).
    pub fn vars(&self) -> VarSet {
        self.events.iter().map(|e| e.var).collect()
    }

    /// Distinct responses, in canonical order.
    pub fn responses(&self) -> Vec<(VarId, SSubscript)> {
        let mut out: Vec<_> = self.events.iter().map(SEvent::response).collect();
        out.dedup();
        out
    }

    /// Conjunction of both event lists.
    pub fn and(&self, other: &SConj) -> SConj {
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        SConj::new(events)
    }

    /// Events whose variable lies in `keep`.
    pub fn restrict(&self, keep: VarSet) -> SConj {
        SConj::new(
            self.events
                .iter()
                .filter(|e| keep.contains(e.var))
                .cloned()
                .collect(),
        )
    }

    /// Summation indices referenced anywhere (values and subscripts).
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &self.events {
            for v in e.subscript.values().chain(std::iter::once(&e.value)) {
                if let SVal::Idx(i) = v {
                    out.push(*i);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Lift an un-nested concrete conjunction; every value becomes `Fixed`.
    ///
    /// # Panics
    ///
    /// Panics if any subscript entry is a nested response; apply [`unnest`]
    /// first.
    pub fn from_unnested(c: &CtfConjunction) -> SConj {
        let events = c
            .events()
            .iter()
            .map(|e| {
                let subscript = e
                    .response
                    .subscript
                    .iter()
                    .map(|(&k, t)| match t {
                        Term::Value(v) => (k, SVal::Fixed(*v)),
                        Term::Nested(_) => panic!("nested subscript in from_unnested"),
                    })
                    .collect();
                SEvent::new(e.var(), subscript, SVal::Fixed(e.value))
            })
            .collect();
        SConj::new(events)
    }

    /// Resolve every index through `env` and return the concrete conjunction.
    ///
    /// # Panics
    ///
    /// Panics if an index is missing from `env`.
    pub fn instantiate(&self, env: &BTreeMap<usize, Val>) -> CtfConjunction {
        let resolve = |v: &SVal| match v {
            SVal::Fixed(x) => *x,
            SVal::Idx(i) => *env.get(i).unwrap_or_else(|| panic!("unbound index {i}")),
        };
        CtfConjunction::new(
            self.events
                .iter()
                .map(|e| {
                    let entries: Vec<(VarId, Val)> = e
                        .subscript
                        .iter()
                        .map(|(&k, v)| (k, resolve(v)))
                        .collect();
                    CtfEvent::new(
                        PotentialResponse::with_values(e.var, &entries),
                        resolve(&e.value),
                    )
                })
                .collect(),
        )
    }

    /// The concrete conjunction, if no index occurs.
    pub fn to_concrete(&self) -> Option<CtfConjunction> {
        if self.indices().is_empty() {
            Some(self.instantiate(&BTreeMap::new()))
        } else {
            None
        }
    }
}

impl FromIterator<SEvent> for SConj {
    fn from_iter<I: IntoIterator<Item = SEvent>>(iter: I) -> Self {
        SConj::new(iter.into_iter().collect())
    }
}

/// Summation index introduced by [`unnest`]: the index number, the variable
/// it ranges over (giving its cardinality), and a display name.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SumVar {
    pub idx: usize,
    pub var: VarId,
    pub name: String,
}

/// Rewrite failure.
#[derive(Error, Debug)]
pub enum RewriteError {
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error("conjunction is not ancestral: missing response for variable {var}")]
    NotAncestral { var: String },
    #[error("no event determines the value of parent {var}")]
    MissingParent { var: String },
    #[error("conjunction assigns conflicting values to {var}")]
    Inconsistent { var: String },
    #[error("event value is not a distinct index, table dimensions undefined")]
    BadTableFactor,
    #[error("zero marginal encountered while forming a component table")]
    ZeroMarginal,
}

/// Replace every nested subscript term with a fresh summation index and add
/// the defining event for the nested response, recursively, so that
///
/// ```text
/// P(.., Y[.., Z = Z[w]] = y, ..)  =  sum_z P(.., Y[.., Z = z] = y, Z[w] = z, ..)
/// ```
///
/// holds for the Layer-3 valuation. The returned conjunction is fully
/// un-nested; summing the valuation of its instantiations over the returned
/// indices reproduces the input's valuation. Index numbers and names
/// (`z0`, `w1`, ...) are allocated deterministically in traversal order.
pub fn unnest(g: &CausalDiagram, c: &CtfConjunction) -> (SConj, Vec<SumVar>) {
    let mut events = Vec::new();
    let mut sums = Vec::new();
    for e in c.events() {
        let subscript = flatten_subscript(g, &e.response.subscript, &mut events, &mut sums);
        events.push(SEvent::new(e.var(), subscript, SVal::Fixed(e.value)));
    }
    (SConj::new(events), sums)
}

fn flatten_subscript(
    g: &CausalDiagram,
    sub: &BTreeMap<VarId, Term>,
    events: &mut Vec<SEvent>,
    sums: &mut Vec<SumVar>,
) -> SSubscript {
    sub.iter()
        .map(|(&k, t)| {
            let v = match t {
                Term::Value(v) => SVal::Fixed(*v),
                Term::Nested(pr) => {
                    let inner = flatten_subscript(g, &pr.subscript, events, sums);
                    let idx = sums.len();
                    sums.push(SumVar {
                        idx,
                        var: pr.var,
                        name: format!("{}{}", g.name(pr.var).to_lowercase(), idx),
                    });
                    events.push(SEvent::new(pr.var, inner, SVal::Idx(idx)));
                    SVal::Idx(idx)
                }
            };
            (k, v)
        })
        .collect()
}

/// Enumerate the concrete summands of [`unnest`]: one conjunction per
/// assignment of the summation indices, in row-major index order.
pub fn enumerate_unnest(g: &CausalDiagram, c: &CtfConjunction) -> Vec<CtfConjunction> {
    let (conj, sums) = unnest(g, c);
    let cards: Vec<usize> = sums.iter().map(|s| g.card(s.var)).collect();
    let total: usize = cards.iter().product();
    (0..total)
        .map(|mut cell| {
            let mut env = BTreeMap::new();
            for (s, &card) in sums.iter().zip(&cards).rev() {
                env.insert(s.idx, cell % card);
                cell /= card;
            }
            conj.instantiate(&env)
        })
        .collect()
}

/// Outcome of [`canonicalize`].
#[derive(Clone, PartialEq, Debug)]
pub enum Canonical {
    /// Two fixed values on one response: the valuation is identically zero.
    Zero,
    /// Deduplicated conjunction plus the index substitution that was applied
    /// (eliminated index to its replacement).
    Conj(SConj, BTreeMap<usize, SVal>),
}

/// Merge events that share a response. Two values on one response force
/// equality of the values: a fixed pair that differs makes the conjunction
/// zero, an index is substituted by the other value everywhere. Summing an
/// enclosing sum's surviving instantiations is unchanged because every
/// dropped instantiation has valuation zero.
pub fn canonicalize(c: &SConj) -> Canonical {
    let mut conj = c.clone();
    let mut subst: BTreeMap<usize, SVal> = BTreeMap::new();
    loop {
        let mut replace: Option<(usize, SVal)> = None;
        'scan: for (i, a) in conj.events().iter().enumerate() {
            for b in conj.events()[i + 1..].iter() {
                if b.response() != a.response() {
                    continue;
                }
                match (a.value, b.value) {
                    (SVal::Fixed(x), SVal::Fixed(y)) => {
                        if x != y {
                            return Canonical::Zero;
                        }
                    }
                    (SVal::Idx(i), v) | (v, SVal::Idx(i)) => {
                        replace = Some((i, v));
                        break 'scan;
                    }
                }
            }
        }
        let Some((idx, val)) = replace else {
            return Canonical::Conj(conj, subst);
        };
        for v in subst.values_mut() {
            if *v == SVal::Idx(idx) {
                *v = val;
            }
        }
        subst.insert(idx, val);
        let sub_sval = |v: &SVal| if *v == SVal::Idx(idx) { val } else { *v };
        conj = conj
            .events()
            .iter()
            .map(|e| {
                SEvent::new(
                    e.var,
                    e.subscript.iter().map(|(&k, v)| (k, sub_sval(v))).collect(),
                    sub_sval(&e.value),
                )
            })
            .collect();
    }
}

/// Drop subscript entries that cannot influence the event's variable: keep
/// only subscript variables that are ancestors of `var` once the in-edges of
/// every subscripted variable are cut. The event's distribution is
/// unchanged.
pub fn exclusion_event(g: &CausalDiagram, var: VarId, sub: &SSubscript) -> SSubscript {
    let cut: VarSet = sub.keys().copied().collect();
    let keep = g.mutilate(cut, VarSet::EMPTY).ancestors(VarSet::singleton(var));
    sub.iter()
        .filter(|(k, _)| keep.contains(**k))
        .map(|(&k, &v)| (k, v))
        .collect()
}

/// Event-wise [`exclusion_event`] over a conjunction.
pub fn exclusion(g: &CausalDiagram, c: &SConj) -> SConj {
    c.events()
        .iter()
        .map(|e| SEvent::new(e.var, exclusion_event(g, e.var, &e.subscript), e.value))
        .collect()
}

/// Counterfactual ancestors of the conjunction's responses: for an event on
/// `Y` subscripted by `x`, every `W` that is an ancestor of `Y` once the
/// out-edges of the subscripted variables are cut contributes the response
/// `W` subscripted by the part of `x` that remains ancestral to `W` when
/// the subscripted variables' in-edges are cut. Sorted and deduplicated.
pub fn ctf_ancestors(g: &CausalDiagram, c: &SConj) -> Vec<(VarId, SSubscript)> {
    let mut out = Vec::new();
    for e in c.events() {
        let cut: VarSet = e.subscript.keys().copied().collect();
        let g_out = g.mutilate(VarSet::EMPTY, cut);
        let g_in = g.mutilate(cut, VarSet::EMPTY);
        for w in g_out.ancestors(VarSet::singleton(e.var)).iter() {
            let keep = g_in.ancestors(VarSet::singleton(w));
            let sub: SSubscript = e
                .subscript
                .iter()
                .filter(|(k, _)| keep.contains(**k))
                .map(|(&k, &v)| (k, v))
                .collect();
            out.push((w, sub));
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Whether the conjunction's response set equals its own counterfactual
/// ancestor closure.
pub fn is_ancestral(g: &CausalDiagram, c: &SConj) -> bool {
    let mut have = c.responses();
    have.sort();
    ctf_ancestors(g, c) == have
}

/// Re-subscript every event by exactly its parents. A parent already in the
/// subscript keeps its value; any other parent takes the value of the
/// conjunction's event on that parent's ancestor-closure response. Requires
/// an ancestral conjunction; the result is a ctf-factor (each subscript is
/// exactly the parent set) with the same Layer-3 valuation.
pub fn ancestral_set_transform(g: &CausalDiagram, c: &SConj) -> Result<SConj, RewriteError> {
    if !is_ancestral(g, c) {
        let var = c.events().first().map_or("?", |e| g.name(e.var));
        return Err(RewriteError::NotAncestral {
            var: var.to_string(),
        });
    }
    let mut events = Vec::new();
    for e in c.events() {
        let cut: VarSet = e.subscript.keys().copied().collect();
        let g_in = g.mutilate(cut, VarSet::EMPTY);
        let mut sub = SSubscript::new();
        for p in g.parents(e.var).iter() {
            if let Some(&v) = e.subscript.get(&p) {
                sub.insert(p, v);
                continue;
            }
            let keep = g_in.ancestors(VarSet::singleton(p));
            let wanted: SSubscript = e
                .subscript
                .iter()
                .filter(|(k, _)| keep.contains(**k))
                .map(|(&k, &v)| (k, v))
                .collect();
            let donor = c
                .events()
                .iter()
                .find(|d| d.var == p && d.subscript == wanted)
                .ok_or_else(|| RewriteError::MissingParent {
                    var: g.name(p).to_string(),
                })?;
            sub.insert(p, donor.value);
        }
        events.push(SEvent::new(e.var, sub, e.value));
    }
    Ok(SConj::new(events))
}

/// Whether every subscript of every event is exactly the parent set of its
/// variable.
pub fn is_ctf_factor(g: &CausalDiagram, c: &SConj) -> bool {
    c.events().iter().all(|e| {
        let keys: VarSet = e.subscript.keys().copied().collect();
        keys == g.parents(e.var)
    })
}

/// Partition the events by the c-components of the subgraph induced on the
/// conjunction's variables. Blocks follow the component order of the
/// diagram.
pub fn ctf_factorize(g: &CausalDiagram, c: &SConj) -> Vec<SConj> {
    g.c_components_within(c.vars())
        .into_iter()
        .map(|comp| c.restrict(comp))
        .collect()
}

/// Whether no variable is given two different values, collecting the value
/// of each event's variable and every subscript entry. Symbolic values are
/// compared syntactically.
pub fn is_consistent(c: &SConj) -> bool {
    value_map(c).is_ok()
}

fn value_map(c: &SConj) -> Result<BTreeMap<VarId, SVal>, RewriteError> {
    let mut seen: BTreeMap<VarId, SVal> = BTreeMap::new();
    for e in c.events() {
        for (&k, &v) in e.subscript.iter().chain(std::iter::once((&e.var, &e.value))) {
            match seen.get(&k) {
                Some(&prev) if prev != v => {
                    return Err(RewriteError::Inconsistent { var: k.to_string() })
                }
                _ => {
                    seen.insert(k, v);
                }
            }
        }
    }
    Ok(seen)
}

/// A consistent conjunction collapsed to a c-factor descriptor: the set of
/// event variables and the single value attached to every mentioned
/// variable (event variables and subscript-only context variables alike).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CollapsedFactor {
    pub component: VarSet,
    pub values: BTreeMap<VarId, SVal>,
}

/// Collapse a consistent conjunction to its c-factor descriptor; errors on
/// an inconsistent conjunction.
pub fn collapse(c: &SConj) -> Result<CollapsedFactor, RewriteError> {
    let values = value_map(c)?;
    Ok(CollapsedFactor {
        component: c.vars(),
        values,
    })
}

/// Whether the conjunction is trivially zero: one response carries two
/// different values, or an event's subscript pins the event's own variable
/// to a different value. Symbolic values are compared syntactically, so run
/// [`canonicalize`] first when indices may alias.
pub fn trivial_conflict(c: &SConj) -> bool {
    for (i, a) in c.events().iter().enumerate() {
        if let Some(&pinned) = a.subscript.get(&a.var) {
            if pinned != a.value {
                return true;
            }
        }
        for b in c.events()[i + 1..].iter() {
            if a.response() == b.response() && a.value != b.value {
                return true;
            }
        }
    }
    false
}

/// Remove events whose subscript pins the event's own variable to the
/// attained value; such an event holds with probability one. Check
/// [`trivial_conflict`] first: a mismatched pin makes the conjunction zero,
/// not droppable.
pub fn drop_certain_self_events(c: &SConj) -> SConj {
    c.events()
        .iter()
        .filter(|e| e.subscript.get(&e.var) != Some(&e.value))
        .cloned()
        .collect()
}

/// Probability table over the event values of a factor: one dimension per
/// event, identified by the event's summation index and variable, in
/// canonical event order. Probabilities are row-major in dimension order.
#[derive(Clone, PartialEq, Debug)]
pub struct FactorTable {
    pub dims: Vec<(usize, VarId)>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl FactorTable {
    pub fn get(&self, cell: &[Val]) -> f64 {
        let mut flat = 0;
        for (d, (&v, &card)) in cell.iter().zip(&self.cards).enumerate() {
            debug_assert!(v < card, "cell out of range in dimension {d}");
            flat = flat * card + v;
        }
        self.probs[flat]
    }

    fn cells(&self) -> impl Iterator<Item = Vec<Val>> + '_ {
        let total: usize = self.cards.iter().product();
        (0..total).map(move |mut flat| {
            let mut cell = vec![0; self.cards.len()];
            for (i, &card) in self.cards.iter().enumerate().rev() {
                cell[i] = flat % card;
                flat /= card;
            }
            cell
        })
    }
}

/// Evaluate the joint table of a factor whose event values are distinct
/// summation indices, one cell per index assignment, by Layer-3 valuation
/// under `m`. Subscript entries may be fixed or reference event indices.
pub fn factor_joint_table(
    m: &crate::oracle::DiscreteSCM,
    c: &SConj,
) -> Result<FactorTable, RewriteError> {
    let g = m.induced_diagram();
    let mut dims = Vec::new();
    for e in c.events() {
        match e.value {
            SVal::Idx(i) if !dims.iter().any(|&(j, _)| j == i) => dims.push((i, e.var)),
            _ => return Err(RewriteError::BadTableFactor),
        }
    }
    let cards: Vec<usize> = dims.iter().map(|&(_, v)| g.card(v)).collect();
    let total: usize = cards.iter().product();
    let mut probs = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut env = BTreeMap::new();
        for (&(idx, _), &card) in dims.iter().zip(&cards).rev() {
            env.insert(idx, flat % card);
            flat /= card;
        }
        probs.push(m.l3_valuation(&c.instantiate(&env))?);
    }
    Ok(FactorTable { dims, cards, probs })
}

/// C-factor of `block` extracted from a joint factor table by telescoping
/// quotients of partial marginals taken in `topo` order (a topological
/// order of the table's variables): for each block variable, the marginal
/// over the variables up to and including it divided by the marginal up to
/// its predecessor. The result spans the same dimensions as `joint`.
pub fn ctf_component_table(
    joint: &FactorTable,
    block: VarSet,
    topo: &[VarId],
) -> Result<FactorTable, RewriteError> {
    let rank_of = |var: VarId| topo.iter().position(|&t| t == var).expect("var in topo");
    let ranks: Vec<usize> = joint.dims.iter().map(|&(_, v)| rank_of(v)).collect();
    let marginal = |cell: &[Val], upto: usize| -> f64 {
        let mut sum = 0.0;
        for other in joint.cells() {
            if cell
                .iter()
                .zip(&other)
                .zip(&ranks)
                .all(|((a, b), &r)| r > upto || a == b)
            {
                sum += joint.get(&other);
            }
        }
        sum
    };
    let mut probs = Vec::with_capacity(joint.probs.len());
    for cell in joint.cells() {
        let mut q = 1.0;
        for (d, &(_, var)) in joint.dims.iter().enumerate() {
            if !block.contains(var) {
                continue;
            }
            let num = marginal(&cell, ranks[d]);
            let den = if ranks[d] == 0 {
                1.0
            } else {
                marginal(&cell, ranks[d] - 1)
            };
            if den == 0.0 {
                return Err(RewriteError::ZeroMarginal);
            }
            q *= num / den;
        }
        probs.push(q);
    }
    Ok(FactorTable {
        dims: joint.dims.clone(),
        cards: joint.cards.clone(),
        probs,
    })
}
