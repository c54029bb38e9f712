//! Identification engine: decides whether a counterfactual conjunction is
//! computable from the tables a set of regimes can deliver, returning a
//! symbolic estimand on success and a certificate on failure.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::estimand::{simplify, Estimand, InputRef};
use crate::expr::{CtfConjunction, Query};
use crate::graph::{CausalDiagram, VarId, VarSet};
use crate::regime::{regime_regex, Dim, RegimeSpec, RegimeTemplate};
use crate::rewrite::{
    ancestral_set_transform, canonicalize, ctf_ancestors, ctf_factorize, drop_certain_self_events,
    exclusion, is_ancestral, trivial_conflict, unnest, Canonical, RewriteError, SConj, SEvent,
    SSubscript, SVal, SumVar,
};

/// Engine failure that is not an identification verdict: a malformed call
/// or a rewrite that could not be applied.
#[derive(Error, Debug)]
pub enum EngineError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
}

/// Render a symbolic value: fixed values as integers, summation indices as
/// `#n`.
pub fn render_sval(v: SVal) -> String {
    match v {
        SVal::Fixed(x) => x.to_string(),
        SVal::Idx(i) => format!("#{i}"),
    }
}

/// Render a symbolic conjunction, e.g. `{W[D=0]=1, Y[B=1, W=#2]=1}`.
pub fn render_sconj(g: &CausalDiagram, c: &SConj) -> String {
    let mut out = String::from("{");
    for (i, e) in c.events().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(g.name(e.var));
        if !e.subscript.is_empty() {
            out.push('[');
            for (j, (k, v)) in e.subscript.iter().enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                out.push_str(&format!("{}={}", g.name(*k), render_sval(*v)));
            }
            out.push(']');
        }
        out.push_str(&format!("={}", render_sval(e.value)));
    }
    out.push('}');
    out
}

fn set_names(g: &CausalDiagram, s: VarSet) -> String {
    s.iter().map(|v| g.name(v)).collect::<Vec<_>>().join(", ")
}

/// Derived input quantity: a regime table, a confounded-block factor of one,
/// or a marginal of one, composed recursively.
#[derive(Clone, PartialEq, Debug)]
pub enum QExpr {
    /// Joint table of one regime's measured variables at the given assigned
    /// slices; `vars` lists the measured variables in topological order.
    Table {
        regime: usize,
        assigned: BTreeMap<usize, SVal>,
        vars: Vec<VarId>,
    },
    /// Marginal of `inner` onto `keep`.
    Marginal { inner: Box<QExpr>, keep: VarSet },
    /// Confounded-block factor of `inner` over `block`, the chain of
    /// prefix-conditional slices of `inner` for the block's variables.
    Telescope { inner: Box<QExpr>, block: VarSet },
}

impl QExpr {
    /// Variables the expression is a function of.
    pub fn scope(&self) -> VarSet {
        match self {
            QExpr::Table { vars, .. } => vars.iter().copied().collect(),
            QExpr::Marginal { keep, .. } => *keep,
            QExpr::Telescope { block, .. } => *block,
        }
    }

    /// Marginal onto `keep`; collapses nested marginals and disappears when
    /// nothing is dropped.
    pub fn marginal(inner: QExpr, keep: VarSet) -> QExpr {
        debug_assert!(keep.is_subset(inner.scope()));
        if keep == inner.scope() {
            return inner;
        }
        if let QExpr::Marginal { inner: deeper, .. } = inner {
            return QExpr::marginal(*deeper, keep);
        }
        QExpr::Marginal {
            inner: Box::new(inner),
            keep,
        }
    }

    /// Block factor of `inner` over `block`; disappears when the block
    /// covers the whole scope.
    pub fn telescope(inner: QExpr, block: VarSet) -> QExpr {
        debug_assert!(block.is_subset(inner.scope()));
        if block == inner.scope() {
            return inner;
        }
        QExpr::Telescope {
            inner: Box::new(inner),
            block,
        }
    }
}

fn fresh_sum(g: &CausalDiagram, v: VarId, fresh: &mut usize) -> SumVar {
    let idx = *fresh;
    *fresh += 1;
    SumVar {
        idx,
        var: v,
        name: format!("{}{}", g.name(v).to_lowercase(), idx),
    }
}

/// Materialize a derived quantity as an estimand, reading each variable's
/// value from `env`. Marginals of a plain table stay a single table
/// reference with the dropped axes summed by the evaluator; deeper
/// marginals bind fresh summation indices.
fn q_to_estimand(
    g: &CausalDiagram,
    q: &QExpr,
    env: &BTreeMap<VarId, SVal>,
    fresh: &mut usize,
) -> Estimand {
    let value_of = |v: VarId, env: &BTreeMap<VarId, SVal>| {
        env.get(&v).copied().unwrap_or(SVal::Fixed(0))
    };
    match q {
        QExpr::Table {
            regime,
            assigned,
            vars,
        } => Estimand::Input(InputRef {
            regime: *regime,
            assigned: assigned.clone(),
            measured: vars.iter().map(|&v| (v, value_of(v, env))).collect(),
        }),
        QExpr::Marginal { inner, keep } => {
            if let QExpr::Table {
                regime,
                assigned,
                vars,
            } = &**inner
            {
                return Estimand::Input(InputRef {
                    regime: *regime,
                    assigned: assigned.clone(),
                    measured: vars
                        .iter()
                        .filter(|v| keep.contains(**v))
                        .map(|&v| (v, value_of(v, env)))
                        .collect(),
                });
            }
            let mut env2 = env.clone();
            let mut indices = Vec::new();
            for v in inner.scope().minus(*keep).iter() {
                let s = fresh_sum(g, v, fresh);
                env2.insert(v, SVal::Idx(s.idx));
                indices.push(s);
            }
            Estimand::Sum {
                indices,
                body: Box::new(q_to_estimand(g, inner, &env2, fresh)),
            }
        }
        QExpr::Telescope { inner, block } => {
            let order = g.topological_order_within(inner.scope());
            let mut factors = Vec::new();
            let mut prefix = VarSet::EMPTY;
            for v in order {
                let mut with = prefix;
                with.insert(v);
                if block.contains(v) {
                    let num =
                        q_to_estimand(g, &QExpr::marginal((**inner).clone(), with), env, fresh);
                    let factor = if prefix.is_empty() {
                        num
                    } else {
                        let den = q_to_estimand(
                            g,
                            &QExpr::marginal((**inner).clone(), prefix),
                            env,
                            fresh,
                        );
                        Estimand::Quotient(Box::new(num), Box::new(den))
                    };
                    factors.push(factor);
                }
                prefix = with;
            }
            if factors.len() == 1 {
                factors.pop().expect("length checked")
            } else {
                Estimand::Product(factors)
            }
        }
    }
}

/// Value-chained non-identifiability witness: the conjunction `t` with its
/// rooted subset `c`, together with the pruned subgraph on which the
/// structural conditions hold.
#[derive(Clone, PartialEq, Debug)]
pub struct HedgeCertificate {
    pub t: SConj,
    pub c: SConj,
    pub subgraph: CausalDiagram,
}

/// Verdict of one block identification call.
#[derive(Clone, PartialEq, Debug)]
pub enum IdOutcome {
    Identified(Estimand),
    Fail(Box<HedgeCertificate>),
}

/// Successful identification of a full query.
#[derive(Clone, PartialEq, Debug)]
pub struct Identification {
    pub estimand: Estimand,
    pub templates: Vec<RegimeTemplate>,
    pub log: Vec<String>,
}

/// Non-identifiability verdict: the block no input regime could deliver,
/// with a hedge witness when one was detected.
#[derive(Clone, PartialEq, Debug)]
pub struct FailCertificate {
    pub block: SConj,
    pub hedge: Option<HedgeCertificate>,
    pub log: Vec<String>,
}

/// Verdict of a full query identification call.
#[derive(Clone, PartialEq, Debug)]
pub enum CtfIdOutcome {
    Identified(Identification),
    Fail(FailCertificate),
}

impl CtfIdOutcome {
    pub fn is_identified(&self) -> bool {
        matches!(self, CtfIdOutcome::Identified(_))
    }
}

fn contains_event(c: &SConj, e: &SEvent) -> bool {
    c.events().iter().any(|x| x == e)
}

/// Whether `t` with root set `c` has the shape of a rooted confounded tree:
/// variables occur once, the bidirected edges over `t` form a spanning
/// tree, every variable of `t` is an ancestor of `c` inside the subgraph,
/// and no variable has two children inside it.
pub fn detect_ctf_forest(g: &CausalDiagram, t: &SConj, c: &SConj) -> bool {
    if !c.events().iter().all(|e| contains_event(t, e)) {
        return false;
    }
    let tvars = t.vars();
    if t.len() != tvars.len() {
        return false;
    }
    if !g.bidirected_spanning_tree_check(tvars) {
        return false;
    }
    if g.ancestors_within(c.vars(), tvars) != tvars {
        return false;
    }
    tvars
        .iter()
        .all(|v| g.children(v).intersect(tvars).len() <= 1)
}

/// Whether `t` rooted at `c` witnesses non-identifiability: a strict rooted
/// confounded tree where every non-root variable's attained value reappears
/// as the subscript entry of its unique child's event.
pub fn detect_ctf_hedge(g: &CausalDiagram, t: &SConj, c: &SConj) -> bool {
    if !detect_ctf_forest(g, t, c) || t.len() <= c.len() {
        return false;
    }
    let tvars = t.vars();
    for e in t.events() {
        if contains_event(c, e) {
            continue;
        }
        let children = g.children(e.var).intersect(tvars);
        let Some(child) = children.first() else {
            return false;
        };
        if children.len() != 1 {
            return false;
        }
        let Some(child_event) = t.events().iter().find(|x| x.var == child) else {
            return false;
        };
        if child_event.subscript.get(&e.var) != Some(&e.value) {
            return false;
        }
    }
    true
}

fn union_find(leader: &mut BTreeMap<VarId, VarId>, mut v: VarId) -> VarId {
    while leader[&v] != v {
        let up = leader[&leader[&v]];
        leader.insert(v, up);
        v = up;
    }
    v
}

/// Assemble the witnessing subgraph for a failed call: each pulled event
/// keeps one directed edge into the event that retained it, and the
/// bidirected edges are thinned to a spanning tree.
fn hedge_certificate(
    g: &CausalDiagram,
    input: &SConj,
    target: &SConj,
    witness: &BTreeMap<VarId, VarId>,
) -> HedgeCertificate {
    let tvars = input.vars();
    let cvars = target.vars();
    let mut leader: BTreeMap<VarId, VarId> = tvars.iter().map(|v| (v, v)).collect();
    let mut tree = Vec::new();
    let inside = |a: VarId, b: VarId, s: VarSet| s.contains(a) && s.contains(b);
    let candidates = g
        .bidirected_edges()
        .iter()
        .filter(|&&(a, b)| inside(a, b, tvars));
    // Root-internal edges first, so the tree restricted to the root set
    // stays connected; the witness construction relies on that.
    let ordered = candidates
        .clone()
        .filter(|&&(a, b)| inside(a, b, cvars))
        .chain(candidates.filter(|&&(a, b)| !inside(a, b, cvars)));
    for &(a, b) in ordered {
        let (ra, rb) = (union_find(&mut leader, a), union_find(&mut leader, b));
        if ra != rb {
            leader.insert(ra, rb);
            tree.push((a, b));
        }
    }
    let vars: Vec<(&str, usize)> = (0..g.n()).map(|v| (g.name(v), g.card(v))).collect();
    let directed: Vec<(&str, &str)> = witness
        .iter()
        .map(|(&v, &child)| (g.name(v), g.name(child)))
        .collect();
    let bidirected: Vec<(&str, &str)> =
        tree.iter().map(|&(a, b)| (g.name(a), g.name(b))).collect();
    let subgraph = CausalDiagram::new(&vars, &directed, &bidirected)
        .expect("pruned subgraph reuses validated variables and edges");
    HedgeCertificate {
        t: input.clone(),
        c: target.clone(),
        subgraph,
    }
}

/// Identify the block factor of `target` from the derived input quantity
/// `q` over `input`, a single confounded component with each variable
/// occurring once. Events outside the growing retained set are pulled in
/// when a retained event's subscript carries their attained value; the
/// fixed point either reduces to a marginal, splits into a smaller
/// component, or certifies failure.
pub fn identify_plus(
    g: &CausalDiagram,
    target: &SConj,
    input: &SConj,
    q: &QExpr,
    env: &BTreeMap<VarId, SVal>,
    fresh: &mut usize,
    log: &mut Vec<String>,
) -> Result<IdOutcome, EngineError> {
    for e in target.events() {
        if !contains_event(input, e) {
            return Err(EngineError::Precondition(format!(
                "target event on {} is not an input event",
                g.name(e.var)
            )));
        }
    }
    if input.vars().len() != input.len() {
        return Err(EngineError::Precondition(
            "input mentions a variable twice".to_string(),
        ));
    }
    if g.c_components_within(input.vars()).len() != 1 {
        return Err(EngineError::Precondition(
            "input is not a single confounded component".to_string(),
        ));
    }
    debug_assert_eq!(q.scope(), input.vars());

    let mut retained: Vec<bool> = input
        .events()
        .iter()
        .map(|e| contains_event(target, e))
        .collect();
    let mut witness: BTreeMap<VarId, VarId> = BTreeMap::new();
    loop {
        let mut pulled = None;
        'scan: for (i, e) in input.events().iter().enumerate() {
            if retained[i] {
                continue;
            }
            for (j, r) in input.events().iter().enumerate() {
                if retained[j] && r.subscript.get(&e.var) == Some(&e.value) {
                    pulled = Some((i, e.var, r.var));
                    break 'scan;
                }
            }
        }
        let Some((i, v, via)) = pulled else { break };
        retained[i] = true;
        witness.insert(v, via);
        log.push(format!("pull {} via {}", g.name(v), g.name(via)));
    }

    if witness.is_empty() {
        let keep = target.vars();
        log.push(format!(
            "base: retained set equals the target, marginalize to {}",
            set_names(g, keep)
        ));
        let est = q_to_estimand(g, &QExpr::marginal(q.clone(), keep), env, fresh);
        return Ok(IdOutcome::Identified(est));
    }
    if retained.iter().all(|&r| r) {
        log.push(format!(
            "hedge: retained set grew to the whole input {}",
            render_sconj(g, input)
        ));
        let cert = hedge_certificate(g, input, target, &witness);
        debug_assert!(detect_ctf_hedge(&cert.subgraph, &cert.t, &cert.c));
        return Ok(IdOutcome::Fail(Box::new(cert)));
    }

    let kept = SConj::new(
        input
            .events()
            .iter()
            .zip(&retained)
            .filter(|(_, &r)| r)
            .map(|(e, _)| e.clone())
            .collect(),
    );
    let dropped = input.vars().minus(kept.vars());
    log.push(format!("marginalize out {}", set_names(g, dropped)));
    let q_kept = QExpr::marginal(q.clone(), kept.vars());
    let blocks = g.c_components_within(kept.vars());
    let cvars = target.vars();
    let block = blocks
        .into_iter()
        .find(|b| cvars.is_subset(*b))
        .ok_or_else(|| {
            EngineError::Precondition("target spans several confounded components".to_string())
        })?;
    log.push(format!("restrict to component {}", set_names(g, block)));
    let sub_input = kept.restrict(block);
    let q_block = QExpr::telescope(q_kept, block);
    identify_plus(g, target, &sub_input, &q_block, env, fresh, log)
}

struct PreparedRegime {
    ast: SConj,
    blocks: Vec<SConj>,
    nat: BTreeMap<VarId, usize>,
    asg: Vec<Option<usize>>,
    measured: Vec<VarId>,
    mset: VarSet,
}

fn prepare_regime(
    g: &CausalDiagram,
    template: &RegimeTemplate,
    fresh: &mut usize,
) -> Result<PreparedRegime, EngineError> {
    let mut nat: BTreeMap<VarId, usize> = BTreeMap::new();
    for e in &template.events {
        nat.insert(e.var, *fresh);
        *fresh += 1;
    }
    let mut asg: Vec<Option<usize>> = vec![None; template.actions.len()];
    let sym_of = |dim: Dim, asg: &mut Vec<Option<usize>>, fresh: &mut usize| match dim {
        Dim::Natural(v) => SVal::Idx(nat[&v]),
        Dim::Assigned(ai) => {
            let slot = asg[ai].get_or_insert_with(|| {
                let s = *fresh;
                *fresh += 1;
                s
            });
            SVal::Idx(*slot)
        }
    };
    let events: Vec<SEvent> = template
        .events
        .iter()
        .map(|e| {
            let sub: SSubscript = e
                .subscript
                .iter()
                .map(|(&k, &d)| (k, sym_of(d, &mut asg, fresh)))
                .collect();
            SEvent::new(e.var, sub, SVal::Idx(nat[&e.var]))
        })
        .collect();
    let raw = exclusion(g, &SConj::new(events));
    let ast = ancestral_set_transform(g, &raw)?;
    let blocks = ctf_factorize(g, &ast);
    let mset: VarSet = nat.keys().copied().collect();
    Ok(PreparedRegime {
        ast,
        blocks,
        nat,
        asg,
        measured: g.topological_order_within(mset),
        mset,
    })
}

fn subst_sval(v: SVal, bind: &BTreeMap<usize, SVal>) -> SVal {
    match v {
        SVal::Idx(i) => bind.get(&i).copied().unwrap_or(v),
        SVal::Fixed(_) => v,
    }
}

fn subst_sconj(c: &SConj, bind: &BTreeMap<usize, SVal>) -> SConj {
    SConj::new(
        c.events()
            .iter()
            .map(|e| {
                SEvent::new(
                    e.var,
                    e.subscript
                        .iter()
                        .map(|(&k, &v)| (k, subst_sval(v, bind)))
                        .collect(),
                    subst_sval(e.value, bind),
                )
            })
            .collect(),
    )
}

fn bind_sym(bind: &mut BTreeMap<usize, SVal>, tv: SVal, qv: SVal) -> bool {
    match tv {
        SVal::Idx(i) => match bind.get(&i) {
            None => {
                bind.insert(i, qv);
                true
            }
            Some(&prev) => prev == qv,
        },
        SVal::Fixed(_) => tv == qv,
    }
}

/// Bind the template block's symbols so it covers the query block exactly;
/// `None` when some symbol would need two different values.
fn unify_block(cblock: &SConj, tblock: &SConj) -> Option<BTreeMap<usize, SVal>> {
    let mut bind = BTreeMap::new();
    for e in cblock.events() {
        let t = tblock.events().iter().find(|t| t.var == e.var)?;
        if !bind_sym(&mut bind, t.value, e.value) {
            return None;
        }
        if t.subscript.len() != e.subscript.len() {
            return None;
        }
        for (k, &tv) in &t.subscript {
            let &qv = e.subscript.get(k)?;
            if !bind_sym(&mut bind, tv, qv) {
                return None;
            }
        }
    }
    Some(bind)
}

enum Inner {
    Est(Estimand),
    Fail {
        block: SConj,
        hedge: Option<HedgeCertificate>,
    },
}

/// Substitute self-pinned events away: an event whose subscript pins its
/// own variable either fixes a summation index or reduces to a certain or
/// impossible event. `None` means the conjunction is identically zero.
fn resolve_self_pins(c: &SConj, eliminated: &mut BTreeSet<usize>) -> Option<SConj> {
    let mut conj = match canonicalize(c) {
        Canonical::Zero => return None,
        Canonical::Conj(conj, subst) => {
            eliminated.extend(subst.keys());
            conj
        }
    };
    loop {
        let mut forced: Option<(usize, SVal)> = None;
        for e in conj.events() {
            let Some(&pin) = e.subscript.get(&e.var) else {
                continue;
            };
            if pin == e.value {
                continue;
            }
            match (pin, e.value) {
                (SVal::Fixed(_), SVal::Fixed(_)) => return None,
                (pin, SVal::Idx(i)) => forced = Some((i, pin)),
                (SVal::Idx(i), value) => forced = Some((i, value)),
            }
            break;
        }
        let Some((idx, val)) = forced else {
            return Some(conj);
        };
        eliminated.insert(idx);
        let single: BTreeMap<usize, SVal> = [(idx, val)].into();
        conj = match canonicalize(&subst_sconj(&conj, &single)) {
            Canonical::Zero => return None,
            Canonical::Conj(conj, subst) => {
                eliminated.extend(subst.keys());
                conj
            }
        };
    }
}

fn identify_conjunction(
    g: &CausalDiagram,
    conj: &CtfConjunction,
    regimes: &[RegimeSpec],
    log: &mut Vec<String>,
) -> Result<Inner, EngineError> {
    let (raw, sums) = unnest(g, conj);
    if !sums.is_empty() {
        log.push(format!(
            "un-nest: sum over {} of {}",
            sums.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", "),
            render_sconj(g, &raw)
        ));
    }
    let mut eliminated = BTreeSet::new();
    let Some(merged) = resolve_self_pins(&raw, &mut eliminated) else {
        log.push("zero: two values forced on one response".to_string());
        return Ok(Inner::Est(Estimand::Const(0)));
    };
    let reduced = exclusion(g, &merged);
    if reduced != merged {
        log.push(format!("exclusion: {}", render_sconj(g, &reduced)));
    }
    let Some(resolved) = resolve_self_pins(&reduced, &mut eliminated) else {
        log.push("zero: two values forced on one response".to_string());
        return Ok(Inner::Est(Estimand::Const(0)));
    };
    if trivial_conflict(&resolved) {
        log.push("zero: an event contradicts its own subscript".to_string());
        return Ok(Inner::Est(Estimand::Const(0)));
    }
    let dropped = drop_certain_self_events(&resolved);
    if dropped.is_empty() {
        log.push("certain: every event holds by consistency".to_string());
        return Ok(Inner::Est(Estimand::Const(1)));
    }

    let mut fresh = sums.len();
    let mut binders: Vec<SumVar> = sums
        .into_iter()
        .filter(|s| !eliminated.contains(&s.idx))
        .collect();
    let have: BTreeSet<(VarId, SSubscript)> = dropped.responses().into_iter().collect();
    let mut expansion = Vec::new();
    for (w, sub) in ctf_ancestors(g, &dropped) {
        if have.contains(&(w, sub.clone())) {
            continue;
        }
        let s = fresh_sum(g, w, &mut fresh);
        expansion.push(SEvent::new(w, sub, SVal::Idx(s.idx)));
        binders.push(s);
    }
    let closed = dropped.and(&SConj::new(expansion.clone()));
    if !expansion.is_empty() {
        log.push(format!(
            "closure: added {}",
            render_sconj(g, &SConj::new(expansion))
        ));
    }
    debug_assert!(is_ancestral(g, &closed));
    let ast = ancestral_set_transform(g, &closed)?;
    log.push(format!("ctf-factor form: {}", render_sconj(g, &ast)));
    let blocks = ctf_factorize(g, &ast);
    log.push(format!(
        "blocks: {}",
        blocks
            .iter()
            .map(|b| render_sconj(g, b))
            .collect::<Vec<_>>()
            .join(" | ")
    ));

    let mut prepared = Vec::with_capacity(regimes.len());
    for spec in regimes {
        let template = regime_regex(g, spec);
        prepared.push(prepare_regime(g, &template, &mut fresh)?);
    }

    let mut block_ests = Vec::with_capacity(blocks.len());
    'blocks: for cb in &blocks {
        let mut first_hedge: Option<HedgeCertificate> = None;
        for (k, pr) in prepared.iter().enumerate() {
            if !cb.vars().is_subset(pr.mset) {
                continue;
            }
            let Some(tb) = pr.blocks.iter().find(|b| cb.vars().is_subset(b.vars())) else {
                continue;
            };
            let Some(bind) = unify_block(cb, tb) else {
                log.push(format!(
                    "block {}: regime {} does not cover it",
                    render_sconj(g, cb),
                    k
                ));
                continue;
            };
            let input = subst_sconj(tb, &bind);
            debug_assert!(cb.events().iter().all(|e| contains_event(&input, e)));
            let env: BTreeMap<VarId, SVal> = pr
                .measured
                .iter()
                .map(|&v| {
                    (
                        v,
                        bind.get(&pr.nat[&v]).copied().unwrap_or(SVal::Fixed(0)),
                    )
                })
                .collect();
            let assigned: BTreeMap<usize, SVal> = pr
                .asg
                .iter()
                .enumerate()
                .filter_map(|(ai, slot)| {
                    slot.and_then(|s| bind.get(&s).copied()).map(|v| (ai, v))
                })
                .collect();
            let table = QExpr::Table {
                regime: k,
                assigned,
                vars: pr.measured.clone(),
            };
            let q0 = QExpr::telescope(table, tb.vars());
            log.push(format!(
                "block {}: regime {} input {}",
                render_sconj(g, cb),
                k,
                render_sconj(g, &input)
            ));
            match identify_plus(g, cb, &input, &q0, &env, &mut fresh, log)? {
                IdOutcome::Identified(est) => {
                    log.push(format!(
                        "block {} identified from regime {}",
                        render_sconj(g, cb),
                        k
                    ));
                    block_ests.push(est);
                    continue 'blocks;
                }
                IdOutcome::Fail(cert) => {
                    log.push(format!(
                        "block {}: regime {} fails with a hedge",
                        render_sconj(g, cb),
                        k
                    ));
                    first_hedge.get_or_insert(*cert);
                }
            }
        }
        log.push(format!(
            "block {} is not identifiable from any input regime",
            render_sconj(g, cb)
        ));
        return Ok(Inner::Fail {
            block: cb.clone(),
            hedge: first_hedge,
        });
    }

    let body = if block_ests.len() == 1 {
        block_ests.pop().expect("length checked")
    } else {
        Estimand::Product(block_ests)
    };
    if binders.is_empty() {
        return Ok(Inner::Est(body));
    }
    log.push(format!(
        "recomposition: sum over {}",
        binders.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", ")
    ));
    Ok(Inner::Est(Estimand::Sum {
        indices: binders,
        body: Box::new(body),
    }))
}

/// Decide whether `query` is computable from the tables of `regimes` and
/// return either a symbolic estimand over those tables or the block that
/// defeats every regime. Conditional queries are the quotient of two
/// unconditional runs; the numerator is attempted first.
pub fn ctfidu_plus(
    g: &CausalDiagram,
    query: &Query,
    regimes: &[RegimeSpec],
) -> Result<CtfIdOutcome, EngineError> {
    let templates: Vec<RegimeTemplate> = regimes.iter().map(|r| regime_regex(g, r)).collect();
    let mut log = Vec::new();
    let joint = match &query.given {
        None => query.joint.clone(),
        Some(given) => {
            log.push("numerator:".to_string());
            query.joint.and(given)
        }
    };
    let num = match identify_conjunction(g, &joint, regimes, &mut log)? {
        Inner::Est(e) => e,
        Inner::Fail { block, hedge } => {
            return Ok(CtfIdOutcome::Fail(FailCertificate { block, hedge, log }))
        }
    };
    let estimand = match &query.given {
        None => num,
        Some(given) => {
            log.push("denominator:".to_string());
            match identify_conjunction(g, given, regimes, &mut log)? {
                Inner::Est(den) => Estimand::Quotient(Box::new(num), Box::new(den)),
                Inner::Fail { block, hedge } => {
                    return Ok(CtfIdOutcome::Fail(FailCertificate { block, hedge, log }))
                }
            }
        }
    };
    Ok(CtfIdOutcome::Identified(Identification {
        estimand: simplify(estimand),
        templates,
        log,
    }))
}

/// Identify the block factor over `c` from the derived quantity `q` over
/// the component `t`, by ancestral reduction alone: no value chasing, so
/// this covers interventional targets from a single regime's table.
pub fn classic_identify(
    g: &CausalDiagram,
    c: VarSet,
    t: VarSet,
    q: &QExpr,
    env: &BTreeMap<VarId, SVal>,
    fresh: &mut usize,
    log: &mut Vec<String>,
) -> Result<Option<Estimand>, EngineError> {
    if !c.is_subset(t) {
        return Err(EngineError::Precondition(
            "target variables leave the component".to_string(),
        ));
    }
    let a = g.ancestors_within(c, t);
    if a == c {
        log.push(format!("base: marginalize to {}", set_names(g, c)));
        return Ok(Some(q_to_estimand(
            g,
            &QExpr::marginal(q.clone(), c),
            env,
            fresh,
        )));
    }
    if a == t {
        log.push(format!(
            "fail: every variable of {} is an ancestor of the target",
            set_names(g, t)
        ));
        return Ok(None);
    }
    log.push(format!("reduce to ancestors {}", set_names(g, a)));
    let q_a = QExpr::marginal(q.clone(), a);
    let block = g
        .c_components_within(a)
        .into_iter()
        .find(|b| c.is_subset(*b))
        .ok_or_else(|| {
            EngineError::Precondition("target spans several confounded components".to_string())
        })?;
    classic_identify(g, c, block, &QExpr::telescope(q_a, block), env, fresh, log)
}

/// Identify an interventional distribution `P(y; do(x))` from one regime
/// that measures every variable, factorizing over the confounded components
/// of the ancestors of `y` with `x` removed. `None` means some component
/// factor is not identifiable this way.
pub fn classic_do(
    g: &CausalDiagram,
    y: &BTreeMap<VarId, SVal>,
    x: &BTreeMap<VarId, SVal>,
    regime: usize,
    log: &mut Vec<String>,
) -> Result<Option<Estimand>, EngineError> {
    let yset: VarSet = y.keys().copied().collect();
    let xset: VarSet = x.keys().copied().collect();
    if yset.intersects(xset) {
        return Err(EngineError::Precondition(
            "outcome and intervention overlap".to_string(),
        ));
    }
    let mut fresh = 0usize;
    let d = g.ancestors_within(yset, g.all_vars().minus(xset));
    let mut env: BTreeMap<VarId, SVal> = BTreeMap::new();
    env.extend(y.iter().map(|(&v, &s)| (v, s)));
    env.extend(x.iter().map(|(&v, &s)| (v, s)));
    let mut binders = Vec::new();
    for v in d.minus(yset).iter() {
        let s = fresh_sum(g, v, &mut fresh);
        env.insert(v, SVal::Idx(s.idx));
        binders.push(s);
    }
    let all = g.topological_order_within(g.all_vars());
    let mut factors = Vec::new();
    for dj in g.c_components_within(d) {
        let sj = g.c_component_of(dj.first().expect("components are non-empty"));
        log.push(format!(
            "factor {} inside component {}",
            set_names(g, dj),
            set_names(g, sj)
        ));
        let table = QExpr::Table {
            regime,
            assigned: BTreeMap::new(),
            vars: all.clone(),
        };
        let q = QExpr::telescope(table, sj);
        match classic_identify(g, dj, sj, &q, &env, &mut fresh, log)? {
            Some(est) => factors.push(est),
            None => return Ok(None),
        }
    }
    let body = if factors.len() == 1 {
        factors.pop().expect("length checked")
    } else {
        Estimand::Product(factors)
    };
    let est = if binders.is_empty() {
        body
    } else {
        Estimand::Sum {
            indices: binders,
            body: Box::new(body),
        }
    };
    Ok(Some(simplify(est)))
}
