//! Fully specified discrete SCMs: exhaustive counterfactual valuation,
//! regime simulation, sampling, and random-model generation.
//!
//! The valuation enumerates the exogenous space, so it is exact and serves
//! as the ground truth the identification engine is verified against.
//! Enumeration is capped (configurable via `CTFID_CAP`); callers needing
//! larger models use Monte Carlo approximation explicitly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{CtfConjunction, PotentialResponse, Query, Term, Val};
use crate::graph::{CausalDiagram, GraphError, VarId};
use crate::regime::{
    assigned_symbol, natural_symbol, regime_regex, Action, Dim, RegimeSpec, RegimeTemplate,
};

/// Hard floor for the enumeration cap.
const MIN_CAP: u64 = 1 << 10;

/// Default cap on exogenous states, overridable via `CTFID_CAP`.
pub fn default_cap() -> u64 {
    match std::env::var("CTFID_CAP").ok().and_then(|s| s.parse::<u64>().ok()) {
        Some(n) => n.max(MIN_CAP),
        None => 1 << 24,
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("unknown exogenous variable `{0}`")]
    UnknownExogenous(String),
    #[error("exogenous `{name}` has {got} probabilities, expected {expect}")]
    ProbabilityLength { name: String, expect: usize, got: usize },
    #[error("exogenous `{name}` probabilities sum to {sum}, expected 1")]
    ProbabilitySum { name: String, sum: f64 },
    #[error("exogenous `{name}` has a negative probability")]
    NegativeProbability { name: String },
    #[error("mechanism of `{name}` has {got} entries, expected {expect}")]
    MechanismLength { name: String, expect: usize, got: usize },
    #[error("mechanism of `{name}` outputs {value}, outside its domain of size {card}")]
    MechanismValue { name: String, value: usize, card: usize },
    #[error("parents of `{name}` must be listed in declaration order")]
    UnsortedParents { name: String },
    #[error("edge `{source_name}` -> `{child}` is not in the induced diagram")]
    EdgeNotInDiagram { source_name: String, child: String },
    #[error("exogenous space has {states} states, over the cap of {cap} (set CTFID_CAP to raise)")]
    CapExceeded { states: u128, cap: u64 },
    #[error("sample size must be at least 1")]
    EmptySample,
}

/// On-disk form of a model: JSON with flat row-major mechanism tables whose
/// index runs over exogenous parents first, then endogenous parents, each in
/// declaration order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScmSpec {
    pub endogenous: Vec<EndoSpec>,
    pub exogenous: Vec<ExoSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExoSpec {
    pub name: String,
    pub card: usize,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EndoSpec {
    pub name: String,
    pub card: usize,
    pub exo_parents: Vec<String>,
    pub endo_parents: Vec<String>,
    pub mechanism: Vec<usize>,
}

/// Per-edge forced values: the child's mechanism reads the forced value in
/// place of the source's natural value; the source itself is untouched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeIntervention {
    forced: BTreeMap<(VarId, VarId), Val>,
}

impl EdgeIntervention {
    pub fn none() -> Self {
        EdgeIntervention::default()
    }

    pub fn new(
        g: &CausalDiagram,
        forced: &[((VarId, VarId), Val)],
    ) -> Result<Self, OracleError> {
        let mut map = BTreeMap::new();
        for &((source, child), val) in forced {
            if !g.children(source).contains(child) {
                return Err(OracleError::EdgeNotInDiagram {
                    source_name: g.name(source).to_string(),
                    child: g.name(child).to_string(),
                });
            }
            map.insert((source, child), val);
        }
        Ok(EdgeIntervention { forced: map })
    }

    pub fn force(&mut self, source: VarId, child: VarId, val: Val) {
        self.forced.insert((source, child), val);
    }
}

/// A fully specified finite SCM with cached induced diagram and topological
/// order.
#[derive(Clone, Debug)]
pub struct DiscreteSCM {
    diagram: CausalDiagram,
    exo_names: Vec<String>,
    exo_cards: Vec<usize>,
    exo_probs: Vec<Vec<f64>>,
    exo_parents: Vec<Vec<usize>>,
    endo_parents: Vec<Vec<VarId>>,
    mechanisms: Vec<Vec<usize>>,
    topo: Vec<VarId>,
    cap: u64,
}

impl DiscreteSCM {
    pub fn from_spec(spec: &ScmSpec) -> Result<DiscreteSCM, OracleError> {
        let mut exo_index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, e) in spec.exogenous.iter().enumerate() {
            if exo_index.insert(&e.name, i).is_some() {
                return Err(OracleError::DuplicateName(e.name.clone()));
            }
            if e.probs.len() != e.card {
                return Err(OracleError::ProbabilityLength {
                    name: e.name.clone(),
                    expect: e.card,
                    got: e.probs.len(),
                });
            }
            if e.probs.iter().any(|&p| p < 0.0) {
                return Err(OracleError::NegativeProbability { name: e.name.clone() });
            }
            let sum: f64 = e.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(OracleError::ProbabilitySum { name: e.name.clone(), sum });
            }
        }
        for e in &spec.endogenous {
            if exo_index.contains_key(e.name.as_str()) {
                return Err(OracleError::DuplicateName(e.name.clone()));
            }
        }

        let vars: Vec<(&str, usize)> =
            spec.endogenous.iter().map(|e| (e.name.as_str(), e.card)).collect();
        let mut directed: Vec<(&str, &str)> = Vec::new();
        for e in &spec.endogenous {
            for p in &e.endo_parents {
                directed.push((p.as_str(), e.name.as_str()));
            }
        }
        // Two mechanisms reading the same exogenous variable induce a
        // bidirected edge.
        let mut users: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for e in &spec.endogenous {
            for x in &e.exo_parents {
                let xi = *exo_index
                    .get(x.as_str())
                    .ok_or_else(|| OracleError::UnknownExogenous(x.clone()))?;
                users.entry(xi).or_default().push(&e.name);
            }
        }
        let mut bidirected: Vec<(&str, &str)> = Vec::new();
        for names in users.values() {
            for i in 0..names.len() {
                for j in i + 1..names.len() {
                    if names[i] != names[j] {
                        bidirected.push((names[i], names[j]));
                    }
                }
            }
        }
        let diagram = CausalDiagram::new(&vars, &directed, &bidirected)?;

        let exo_cards: Vec<usize> = spec.exogenous.iter().map(|e| e.card).collect();
        let exo_probs: Vec<Vec<f64>> = spec.exogenous.iter().map(|e| e.probs.clone()).collect();
        let exo_names: Vec<String> = spec.exogenous.iter().map(|e| e.name.clone()).collect();

        let mut exo_parents = Vec::with_capacity(spec.endogenous.len());
        let mut endo_parents = Vec::with_capacity(spec.endogenous.len());
        let mut mechanisms = Vec::with_capacity(spec.endogenous.len());
        for (v, e) in spec.endogenous.iter().enumerate() {
            let eps: Vec<usize> = e.exo_parents.iter().map(|x| exo_index[x.as_str()]).collect();
            if eps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(OracleError::UnsortedParents { name: e.name.clone() });
            }
            let nps: Vec<VarId> =
                e.endo_parents.iter().map(|p| diagram.var(p)).collect::<Result<_, _>>()?;
            if nps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(OracleError::UnsortedParents { name: e.name.clone() });
            }
            let mut expect = 1usize;
            for &x in &eps {
                expect *= exo_cards[x];
            }
            for &p in &nps {
                expect *= diagram.card(p);
            }
            if e.mechanism.len() != expect {
                return Err(OracleError::MechanismLength {
                    name: e.name.clone(),
                    expect,
                    got: e.mechanism.len(),
                });
            }
            if let Some(&bad) = e.mechanism.iter().find(|&&m| m >= e.card) {
                return Err(OracleError::MechanismValue {
                    name: e.name.clone(),
                    value: bad,
                    card: e.card,
                });
            }
            debug_assert_eq!(v, diagram.var(&e.name).unwrap());
            exo_parents.push(eps);
            endo_parents.push(nps);
            mechanisms.push(e.mechanism.clone());
        }

        let topo = diagram.topological_order();
        Ok(DiscreteSCM {
            diagram,
            exo_names,
            exo_cards,
            exo_probs,
            exo_parents,
            endo_parents,
            mechanisms,
            topo,
            cap: default_cap(),
        })
    }

    pub fn to_spec(&self) -> ScmSpec {
        ScmSpec {
            endogenous: (0..self.diagram.n())
                .map(|v| EndoSpec {
                    name: self.diagram.name(v).to_string(),
                    card: self.diagram.card(v),
                    exo_parents: self.exo_parents[v]
                        .iter()
                        .map(|&x| self.exo_names[x].clone())
                        .collect(),
                    endo_parents: self.endo_parents[v]
                        .iter()
                        .map(|&p| self.diagram.name(p).to_string())
                        .collect(),
                    mechanism: self.mechanisms[v].clone(),
                })
                .collect(),
            exogenous: (0..self.exo_names.len())
                .map(|x| ExoSpec {
                    name: self.exo_names[x].clone(),
                    card: self.exo_cards[x],
                    probs: self.exo_probs[x].clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<DiscreteSCM, OracleError> {
        let spec: ScmSpec = serde_json::from_str(text)
            .map_err(|e| OracleError::DuplicateName(format!("invalid SCM JSON: {e}")))?;
        DiscreteSCM::from_spec(&spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("spec serializes")
    }

    pub fn induced_diagram(&self) -> &CausalDiagram {
        &self.diagram
    }

    /// Override the exogenous enumeration cap (floored at 2^10).
    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap.max(MIN_CAP);
        self
    }

    pub fn exo_states(&self) -> u128 {
        self.exo_cards.iter().map(|&c| c as u128).product()
    }

    fn check_cap(&self) -> Result<u64, OracleError> {
        let states = self.exo_states();
        if states > self.cap as u128 {
            return Err(OracleError::CapExceeded { states, cap: self.cap });
        }
        Ok(states as u64)
    }

    fn decode_exo(&self, mut flat: u64, out: &mut [Val]) {
        for x in (0..self.exo_cards.len()).rev() {
            let c = self.exo_cards[x] as u64;
            out[x] = (flat % c) as usize;
            flat /= c;
        }
    }

    fn unit_weight(&self, u: &[Val]) -> f64 {
        let mut w = 1.0;
        for (x, &val) in u.iter().enumerate() {
            w *= self.exo_probs[x][val];
        }
        w
    }

    /// Evaluate one unit: `do` replaces mechanisms with constants, `ei`
    /// substitutes per-edge perceived values without touching the source.
    pub fn eval_unit(
        &self,
        u: &[Val],
        ei: &EdgeIntervention,
        do_map: &BTreeMap<VarId, Val>,
    ) -> Vec<Val> {
        let mut out = vec![0usize; self.diagram.n()];
        for &v in &self.topo {
            if let Some(&val) = do_map.get(&v) {
                out[v] = val;
                continue;
            }
            let mut idx = 0usize;
            for &x in &self.exo_parents[v] {
                idx = idx * self.exo_cards[x] + u[x];
            }
            for &p in &self.endo_parents[v] {
                let perceived = ei.forced.get(&(p, v)).copied().unwrap_or(out[p]);
                idx = idx * self.diagram.card(p) + perceived;
            }
            out[v] = self.mechanisms[v][idx];
        }
        out
    }

    /// Value of a potential response for one unit; nested subscripts are
    /// resolved recursively against the same unit.
    pub fn eval_response(&self, pr: &PotentialResponse, u: &[Val]) -> Val {
        let mut do_map = BTreeMap::new();
        for (&k, term) in &pr.subscript {
            let val = match term {
                Term::Value(v) => *v,
                Term::Nested(inner) => self.eval_response(inner, u),
            };
            do_map.insert(k, val);
        }
        self.eval_unit(u, &EdgeIntervention::none(), &do_map)[pr.var]
    }

    fn holds(&self, conj: &CtfConjunction, u: &[Val]) -> bool {
        conj.events().iter().all(|e| self.eval_response(&e.response, u) == e.value)
    }

    /// Exact probability of a counterfactual conjunction by exhaustive
    /// enumeration of the exogenous space.
    pub fn l3_valuation(&self, conj: &CtfConjunction) -> Result<f64, OracleError> {
        let states = self.check_cap()?;
        let chunk: u64 = 1 << 13;
        let ranges: Vec<(u64, u64)> =
            (0..states.div_ceil(chunk)).map(|i| (i * chunk, ((i + 1) * chunk).min(states))).collect();
        let partials: Vec<f64> = ranges
            .par_iter()
            .map(|&(a, b)| {
                let mut u = vec![0usize; self.exo_cards.len()];
                let mut s = 0.0;
                for flat in a..b {
                    self.decode_exo(flat, &mut u);
                    if self.holds(conj, &u) {
                        s += self.unit_weight(&u);
                    }
                }
                s
            })
            .collect();
        Ok(partials.iter().sum())
    }

    /// Conditional query probability; `None` when the conditioning event has
    /// probability zero.
    pub fn l3_query(&self, q: &Query) -> Result<Option<f64>, OracleError> {
        match &q.given {
            None => Ok(Some(self.l3_valuation(&q.joint)?)),
            Some(given) => {
                let den = self.l3_valuation(given)?;
                if den == 0.0 {
                    return Ok(None);
                }
                let num = self.l3_valuation(&q.joint.and(given))?;
                Ok(Some(num / den))
            }
        }
    }

    /// Monte Carlo fallback for models over the enumeration cap; returns the
    /// estimate and its standard error.
    pub fn l3_valuation_approx(
        &self,
        conj: &CtfConjunction,
        n: usize,
        seed: u64,
    ) -> Result<(f64, f64), OracleError> {
        if n == 0 {
            return Err(OracleError::EmptySample);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        let mut u = vec![0usize; self.exo_cards.len()];
        for _ in 0..n {
            self.sample_exo(&mut rng, &mut u);
            if self.holds(conj, &u) {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        Ok((p, (p * (1.0 - p) / n as f64).sqrt()))
    }

    fn sample_exo(&self, rng: &mut ChaCha8Rng, out: &mut [Val]) {
        for (x, slot) in out.iter_mut().enumerate() {
            let roll: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = self.exo_cards[x] - 1;
            for (val, &p) in self.exo_probs[x].iter().enumerate() {
                acc += p;
                if roll < acc {
                    pick = val;
                    break;
                }
            }
            *slot = pick;
        }
    }

    /// Exact distribution of everything a regime measures, by physical
    /// simulation: the table axes are the template's assigned values
    /// followed by the measured outcomes, row-major.
    pub fn regime_distribution(&self, spec: &RegimeSpec) -> Result<RegimeTable, OracleError> {
        let states = self.check_cap()?;
        let g = &self.diagram;
        let template = regime_regex(g, spec);
        let mut dims: Vec<Dim> = (0..template.actions.len()).map(Dim::Assigned).collect();
        let measured: Vec<VarId> = spec.measured(g).iter().collect();
        dims.extend(measured.iter().map(|&v| Dim::Natural(v)));
        let cards: Vec<usize> = dims.iter().map(|&d| template.dim_card(g, d)).collect();
        let assigned_size: usize = cards[..template.actions.len()].iter().product();
        let measured_size: usize = cards[template.actions.len()..].iter().product();

        let mut probs = vec![0.0; assigned_size * measured_size];
        for aflat in 0..assigned_size {
            let assigned = decode_digits(aflat, &cards[..template.actions.len()]);
            let mut ei = EdgeIntervention::none();
            let mut do_map = BTreeMap::new();
            for (ai, action) in template.actions.iter().enumerate() {
                match action {
                    Action::CtfRand { source, children } => {
                        for c in children.iter() {
                            ei.force(*source, c, assigned[ai]);
                        }
                    }
                    Action::Rand(x) => {
                        do_map.insert(*x, assigned[ai]);
                    }
                    Action::Observe => {}
                }
            }
            let chunk: u64 = 1 << 13;
            let ranges: Vec<(u64, u64)> = (0..states.div_ceil(chunk))
                .map(|i| (i * chunk, ((i + 1) * chunk).min(states)))
                .collect();
            let partials: Vec<Vec<f64>> = ranges
                .par_iter()
                .map(|&(a, b)| {
                    let mut cell = vec![0.0; measured_size];
                    let mut u = vec![0usize; self.exo_cards.len()];
                    for flat in a..b {
                        self.decode_exo(flat, &mut u);
                        let outcome = self.eval_unit(&u, &ei, &do_map);
                        let mut idx = 0usize;
                        for &v in &measured {
                            idx = idx * g.card(v) + outcome[v];
                        }
                        cell[idx] += self.unit_weight(&u);
                    }
                    cell
                })
                .collect();
            let base = aflat * measured_size;
            for cell in partials {
                for (i, p) in cell.into_iter().enumerate() {
                    probs[base + i] += p;
                }
            }
        }
        Ok(RegimeTable { template, dims, cards, probs })
    }

    /// Seeded iid draws under a regime: assigned values uniform, exogenous
    /// values from their distribution.
    pub fn sample_regime(
        &self,
        spec: &RegimeSpec,
        n: usize,
        seed: u64,
    ) -> Result<RegimeDataset, OracleError> {
        if n == 0 {
            return Err(OracleError::EmptySample);
        }
        let g = &self.diagram;
        let template = regime_regex(g, spec);
        let mut dims: Vec<Dim> = (0..template.actions.len()).map(Dim::Assigned).collect();
        let measured: Vec<VarId> = spec.measured(g).iter().collect();
        dims.extend(measured.iter().map(|&v| Dim::Natural(v)));
        let cards: Vec<usize> = dims.iter().map(|&d| template.dim_card(g, d)).collect();

        let header: Vec<String> = dims
            .iter()
            .map(|&d| match d {
                Dim::Assigned(ai) => assigned_symbol(g, &template.actions, ai),
                Dim::Natural(v) => {
                    let event = template
                        .events
                        .iter()
                        .find(|e| e.var == v)
                        .expect("every measured variable has a template event");
                    let mut s = g.name(v).to_string();
                    if !event.subscript.is_empty() {
                        s.push('[');
                        let parts: Vec<String> = event
                            .subscript
                            .iter()
                            .map(|(&k, &dim)| {
                                let sym = match dim {
                                    Dim::Assigned(ai) => {
                                        assigned_symbol(g, &template.actions, ai)
                                    }
                                    Dim::Natural(w) => natural_symbol(g, &template.actions, w),
                                };
                                format!("{}={}", g.name(k), sym)
                            })
                            .collect();
                        s.push_str(&parts.join(", "));
                        s.push(']');
                    }
                    s
                }
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut u = vec![0usize; self.exo_cards.len()];
        for _ in 0..n {
            let mut row = Vec::with_capacity(dims.len());
            let mut ei = EdgeIntervention::none();
            let mut do_map = BTreeMap::new();
            for (ai, action) in template.actions.iter().enumerate() {
                let val = rng.gen_range(0..cards[ai]);
                row.push(val);
                match action {
                    Action::CtfRand { source, children } => {
                        for c in children.iter() {
                            ei.force(*source, c, val);
                        }
                    }
                    Action::Rand(x) => {
                        do_map.insert(*x, val);
                    }
                    Action::Observe => {}
                }
            }
            self.sample_exo(&mut rng, &mut u);
            let outcome = self.eval_unit(&u, &ei, &do_map);
            for &v in &measured {
                row.push(outcome[v]);
            }
            rows.push(row);
        }
        Ok(RegimeDataset { n_assigned: template.actions.len(), header, cards, rows })
    }
}

fn decode_digits(mut flat: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize; cards.len()];
    for i in (0..cards.len()).rev() {
        out[i] = flat % cards[i];
        flat /= cards[i];
    }
    out
}

/// Exact probability table of a regime, indexed by the template's axes.
#[derive(Clone, Debug)]
pub struct RegimeTable {
    pub template: RegimeTemplate,
    pub dims: Vec<Dim>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl RegimeTable {
    pub fn flat_index(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.cards.len());
        let mut idx = 0usize;
        for (i, &d) in digits.iter().enumerate() {
            debug_assert!(d < self.cards[i]);
            idx = idx * self.cards[i] + d;
        }
        idx
    }

    pub fn get(&self, digits: &[usize]) -> f64 {
        self.probs[self.flat_index(digits)]
    }

    /// Probability of the template instantiated at the given axis values.
    pub fn digits(&self, assigned: &[Val], measured: &BTreeMap<VarId, Val>) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&d| match d {
                Dim::Assigned(ai) => assigned[ai],
                Dim::Natural(v) => measured[&v],
            })
            .collect()
    }

    pub fn n_assigned(&self) -> usize {
        self.template.actions.len()
    }
}

/// Rows of iid regime draws; one column per table axis.
#[derive(Clone, Debug)]
pub struct RegimeDataset {
    pub n_assigned: usize,
    pub header: Vec<String>,
    pub cards: Vec<usize>,
    pub rows: Vec<Vec<Val>>,
}

impl RegimeDataset {
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains(',') || s.contains('"') || s.contains('\n') {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::new();
        out.push_str(&self.header.iter().map(|h| quote(h)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(
                &row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            );
            out.push('\n');
        }
        out
    }

    /// Empirical conditional table: within each assigned-value slice, cell
    /// counts normalized by the slice total.
    pub fn empirical_probs(&self) -> Vec<f64> {
        let measured_size: usize = self.cards[self.n_assigned..].iter().product();
        let assigned_size: usize = self.cards[..self.n_assigned].iter().product();
        let mut counts = vec![0.0f64; assigned_size * measured_size];
        for row in &self.rows {
            let mut idx = 0usize;
            for (i, &d) in row.iter().enumerate() {
                idx = idx * self.cards[i] + d;
            }
            counts[idx] += 1.0;
        }
        for a in 0..assigned_size {
            let total: f64 = counts[a * measured_size..(a + 1) * measured_size].iter().sum();
            if total > 0.0 {
                for c in counts[a * measured_size..(a + 1) * measured_size].iter_mut() {
                    *c /= total;
                }
            }
        }
        counts
    }
}

/// Random positive model inducing exactly `g`: one private exogenous
/// variable per endogenous variable plus one shared per bidirected edge.
/// Each mechanism is surjective in its private noise for every fixed setting
/// of the remaining inputs, so every interventional distribution is strictly
/// positive; exogenous weights are Dirichlet draws floored at 1e-3.
pub fn random_scm(
    g: &CausalDiagram,
    seed: u64,
    exo_card: usize,
    endo_card: Option<usize>,
) -> DiscreteSCM {
    assert!(exo_card >= 2, "exogenous cardinality must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let card_of = |v: VarId| endo_card.unwrap_or(g.card(v)).max(2);

    let mut exogenous = Vec::new();
    let floored_probs = |rng: &mut ChaCha8Rng, card: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..card).map(|_| -(rng.gen::<f64>().max(1e-300)).ln()).collect();
        let total: f64 = raw.iter().sum();
        let denom = 1.0 + card as f64 * 1e-3;
        raw.into_iter().map(|e| (e / total + 1e-3) / denom).collect()
    };
    for v in 0..g.n() {
        let card = exo_card.max(card_of(v));
        exogenous.push(ExoSpec {
            name: format!("U_{}", g.name(v)),
            card,
            probs: floored_probs(&mut rng, card),
        });
    }
    for &(a, b) in g.bidirected_edges() {
        exogenous.push(ExoSpec {
            name: format!("U_{}{}", g.name(a), g.name(b)),
            card: exo_card,
            probs: floored_probs(&mut rng, exo_card),
        });
    }

    let mut endogenous = Vec::new();
    for v in 0..g.n() {
        let card = card_of(v);
        let mut exo_parents = vec![exogenous[v].name.clone()];
        let mut shared_dims = Vec::new();
        for (ei, &(a, b)) in g.bidirected_edges().iter().enumerate() {
            if a == v || b == v {
                exo_parents.push(exogenous[g.n() + ei].name.clone());
                shared_dims.push(exogenous[g.n() + ei].card);
            }
        }
        let own_card = exogenous[v].card;
        let mut rest_size = 1usize;
        for &c in &shared_dims {
            rest_size *= c;
        }
        let endo_parents: Vec<String> =
            g.parents(v).iter().map(|p| g.name(p).to_string()).collect();
        for p in g.parents(v).iter() {
            rest_size *= card_of(p);
        }
        let mut mechanism = vec![0usize; own_card * rest_size];
        let mut values: Vec<usize> = (0..card).collect();
        for rest in 0..rest_size {
            values.shuffle(&mut rng);
            for uv in 0..own_card {
                mechanism[uv * rest_size + rest] =
                    if uv < card { values[uv] } else { rng.gen_range(0..card) };
            }
        }
        endogenous.push(EndoSpec {
            name: g.name(v).to_string(),
            card,
            exo_parents,
            endo_parents,
            mechanism,
        });
    }

    DiscreteSCM::from_spec(&ScmSpec { endogenous, exogenous })
        .expect("constructed model is valid by design")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_query, CtfEvent};
    use crate::graph::VarSet;

    fn fig1a() -> CausalDiagram {
        crate::graph::tests::fig1a()
    }

    /// Deterministic two-variable model with confounding: X = U1, Y = X xor
    /// U1 (so Y = 0 always observationally, but Y_x varies).
    fn bow_scm() -> DiscreteSCM {
        DiscreteSCM::from_spec(&ScmSpec {
            endogenous: vec![
                EndoSpec {
                    name: "X".into(),
                    card: 2,
                    exo_parents: vec!["U1".into()],
                    endo_parents: vec![],
                    mechanism: vec![0, 1],
                },
                EndoSpec {
                    name: "Y".into(),
                    card: 2,
                    exo_parents: vec!["U1".into()],
                    endo_parents: vec!["X".into()],
                    mechanism: vec![0, 1, 1, 0],
                },
            ],
            exogenous: vec![ExoSpec { name: "U1".into(), card: 2, probs: vec![0.5, 0.5] }],
        })
        .unwrap()
    }

    #[test]
    fn shared_exogenous_induces_bidirected_edge() {
        let m = bow_scm();
        let g = m.induced_diagram();
        assert_eq!(g.directed_edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(g.bidirected_edges(), &[(0, 1)]);
    }

    #[test]
    fn independent_exogenous_induces_no_bidirected_edge() {
        let m = random_scm(
            &CausalDiagram::new(&[("A", 2), ("B", 2)], &[("A", "B")], &[]).unwrap(),
            1,
            2,
            None,
        );
        assert!(m.induced_diagram().bidirected_edges().is_empty());
    }

    #[test]
    fn example2_wiring_induces_fig9a() {
        let g = CausalDiagram::new(
            &[("X", 2), ("Z", 2), ("Y", 2)],
            &[("X", "Z"), ("X", "Y"), ("Z", "Y")],
            &[("X", "Y"), ("Z", "Y")],
        )
        .unwrap();
        let m = random_scm(&g, 7, 2, None);
        assert_eq!(m.induced_diagram(), &g);
    }

    #[test]
    fn edge_intervention_leaves_other_children_natural() {
        let g = fig1a();
        let m = random_scm(&g, 3, 2, None);
        let (x, z, y) = (0, 1, 2);
        let n_exo = m.exo_cards.len();
        for flat in 0..16u64.min(m.exo_states() as u64) {
            let mut u = vec![0; n_exo];
            m.decode_exo(flat, &mut u);
            let natural = m.eval_unit(&u, &EdgeIntervention::none(), &BTreeMap::new());
            let forced = 1 - natural[x];
            let ei = EdgeIntervention::new(&g, &[((x, y), forced)]).unwrap();
            let out = m.eval_unit(&u, &ei, &BTreeMap::new());
            assert_eq!(out[x], natural[x]);
            assert_eq!(out[z], natural[z]);
            let done = m.eval_unit(&u, &EdgeIntervention::none(), &[(x, forced)].into());
            assert_eq!(done[z], m.eval_response(&PotentialResponse::with_values(z, &[(x, forced)]), &u));
            assert_eq!(out[y], {
                let mut dm = BTreeMap::new();
                dm.insert(x, forced);
                dm.insert(z, natural[z]);
                m.eval_unit(&u, &EdgeIntervention::none(), &dm)[y]
            });
        }
    }

    #[test]
    fn do_interventions_reach_every_child() {
        let g = fig1a();
        let m = random_scm(&g, 4, 2, None);
        let (x, z, y) = (0, 1, 2);
        let mut u = vec![0; m.exo_cards.len()];
        m.decode_exo(5 % m.exo_states() as u64, &mut u);
        for xv in 0..2 {
            let out = m.eval_unit(&u, &EdgeIntervention::none(), &[(x, xv)].into());
            assert_eq!(out[x], xv);
            assert_eq!(out[z], m.eval_response(&PotentialResponse::with_values(z, &[(x, xv)]), &u));
            assert_eq!(out[y], m.eval_response(&PotentialResponse::with_values(y, &[(x, xv)]), &u));
        }
    }

    #[test]
    fn empty_conjunction_has_probability_one() {
        let m = bow_scm();
        assert_eq!(m.l3_valuation(&CtfConjunction::default()).unwrap(), 1.0);
    }

    #[test]
    fn contradictory_events_have_probability_zero() {
        let m = bow_scm();
        let (x, y) = (0, 1);
        let conj: CtfConjunction = [
            CtfEvent::new(PotentialResponse::with_values(y, &[(x, 1)]), 1),
            CtfEvent::new(PotentialResponse::with_values(y, &[(x, 1)]), 0),
        ]
        .into_iter()
        .collect();
        assert_eq!(m.l3_valuation(&conj).unwrap(), 0.0);
    }

    #[test]
    fn bow_counterfactual_matches_hand_computation() {
        let m = bow_scm();
        let g = m.induced_diagram().clone();
        // Y = X xor U1 and X = U1, so Y = 0 surely; Y_{X=1} = 1 xor U1.
        let q = parse_query(&g, "P(Y = 0)").unwrap();
        assert!((m.l3_query(&q).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let q = parse_query(&g, "P(Y[X=1] = 1, X = 0)").unwrap();
        assert!((m.l3_query(&q).unwrap().unwrap() - 0.5).abs() < 1e-12);
        let q = parse_query(&g, "P(Y[X=1] = 1 | X = 1)").unwrap();
        assert!((m.l3_query(&q).unwrap().unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn consistency_identity_on_random_models() {
        let g = fig1a();
        let (x, z, y) = (0, 1, 2);
        for seed in 0..3 {
            let m = random_scm(&g, seed, 2, None);
            for (xv, zv, yv, xnat) in [(0, 0, 1, 1), (1, 1, 0, 0)] {
                let lhs: CtfConjunction = [
                    CtfEvent::new(PotentialResponse::with_values(y, &[(x, xv), (z, zv)]), yv),
                    CtfEvent::new(PotentialResponse::with_values(z, &[(x, xnat)]), zv),
                    CtfEvent::new(PotentialResponse::natural(x), xnat),
                ]
                .into_iter()
                .collect();
                // The edge-level regime measures Y under assigned X and the
                // natural (nested, per-unit) Z.
                let mut sub = BTreeMap::new();
                sub.insert(x, Term::Value(xv));
                sub.insert(z, Term::Nested(Box::new(PotentialResponse::natural(z))));
                let rhs: CtfConjunction = [
                    CtfEvent::new(PotentialResponse { var: y, subscript: sub }, yv),
                    CtfEvent::new(PotentialResponse::natural(z), zv),
                    CtfEvent::new(PotentialResponse::natural(x), xnat),
                ]
                .into_iter()
                .collect();
                let l = m.l3_valuation(&lhs).unwrap();
                let r = m.l3_valuation(&rhs).unwrap();
                assert!((l - r).abs() < 1e-9, "seed {seed}: {l} vs {r}");
            }
        }
    }

    #[test]
    fn observational_regime_reproduces_joint() {
        let g = fig1a();
        let m = random_scm(&g, 11, 2, None);
        let spec = RegimeSpec::observational(&g);
        let table = m.regime_distribution(&spec).unwrap();
        assert_eq!(table.cards, vec![2, 2, 2]);
        let total: f64 = table.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for xv in 0..2 {
            for zv in 0..2 {
                for yv in 0..2 {
                    let q = parse_query(&g, &format!("P(X={xv}, Z={zv}, Y={yv})")).unwrap();
                    let exact = m.l3_valuation(&q.joint).unwrap();
                    assert!((table.get(&[xv, zv, yv]) - exact).abs() < 1e-12);
                }
            }
        }
    }

    fn assert_table_matches_template(m: &DiscreteSCM, spec: &RegimeSpec) {
        let table = m.regime_distribution(spec).unwrap();
        let n_assigned = table.n_assigned();
        let assigned_size: usize = table.cards[..n_assigned].iter().product();
        let measured_size: usize = table.cards[n_assigned..].iter().product();
        for aflat in 0..assigned_size {
            let assigned = decode_digits(aflat, &table.cards[..n_assigned]);
            let mut slice_total = 0.0;
            for mflat in 0..measured_size {
                let mdigits = decode_digits(mflat, &table.cards[n_assigned..]);
                let measured: BTreeMap<VarId, Val> = table.dims[n_assigned..]
                    .iter()
                    .zip(&mdigits)
                    .map(|(&d, &val)| match d {
                        Dim::Natural(v) => (v, val),
                        Dim::Assigned(_) => unreachable!("assigned dims come first"),
                    })
                    .collect();
                let conj = table.template.instantiate(&assigned, &measured);
                let exact = m.l3_valuation(&conj).unwrap();
                let cell = table.get(&table.digits(&assigned, &measured));
                assert!(
                    (cell - exact).abs() < 1e-9,
                    "cell {assigned:?}/{measured:?}: simulated {cell} vs valuation {exact}"
                );
                slice_total += cell;
            }
            assert!((slice_total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_agrees_with_template_valuation_on_fig1a() {
        let g = fig1a();
        let x = g.var("X").unwrap();
        let y = g.var("Y").unwrap();
        for seed in 0..3 {
            let m = random_scm(&g, seed, 2, None);
            let spec = RegimeSpec::new(
                &g,
                vec![Action::CtfRand { source: x, children: VarSet::singleton(y) }],
            )
            .unwrap();
            assert_table_matches_template(&m, &spec);
        }
    }

    #[test]
    fn simulation_agrees_with_template_valuation_on_chained_actions() {
        let g = CausalDiagram::new(
            &[("W", 2), ("X", 2), ("V", 2)],
            &[("W", "X"), ("X", "V")],
            &[("W", "V")],
        )
        .unwrap();
        let (w, x, v) = (0, 1, 2);
        for seed in 0..3 {
            let m = random_scm(&g, seed, 2, None);
            let spec = RegimeSpec::new(
                &g,
                vec![
                    Action::CtfRand { source: x, children: VarSet::singleton(v) },
                    Action::CtfRand { source: w, children: VarSet::singleton(x) },
                ],
            )
            .unwrap();
            assert_table_matches_template(&m, &spec);
        }
    }

    #[test]
    fn simulation_agrees_with_template_valuation_on_diamond_actions() {
        let g = CausalDiagram::new(
            &[("X", 2), ("C", 2), ("M", 2), ("V", 2)],
            &[("X", "C"), ("C", "V"), ("C", "M"), ("M", "V")],
            &[("X", "M")],
        )
        .unwrap();
        let (x, c, _m, v) = (0, 1, 2, 3);
        for seed in 0..3 {
            let m = random_scm(&g, seed, 2, None);
            let spec = RegimeSpec::new(
                &g,
                vec![
                    Action::CtfRand { source: c, children: VarSet::singleton(v) },
                    Action::CtfRand { source: x, children: VarSet::singleton(c) },
                ],
            )
            .unwrap();
            assert_table_matches_template(&m, &spec);
        }
    }

    #[test]
    fn simulation_agrees_with_template_valuation_under_rand() {
        let g = fig1a();
        let x = g.var("X").unwrap();
        for seed in 0..2 {
            let m = random_scm(&g, seed, 2, None);
            let spec = RegimeSpec::new(&g, vec![Action::Rand(x)]).unwrap();
            assert_table_matches_template(&m, &spec);
        }
    }

    #[test]
    fn two_edge_regime_measures_split_responses() {
        // Both edges out of X controlled separately: the table carries
        // P(y_x, z_x') jointly with the natural X.
        let g = CausalDiagram::new(
            &[("X", 2), ("Y", 2), ("Z", 2)],
            &[("X", "Y"), ("X", "Z")],
            &[],
        )
        .unwrap();
        let (x, y, z) = (0, 1, 2);
        let m = random_scm(&g, 9, 2, None);
        let spec = RegimeSpec::new(
            &g,
            vec![
                Action::CtfRand { source: x, children: VarSet::singleton(y) },
                Action::CtfRand { source: x, children: VarSet::singleton(z) },
            ],
        )
        .unwrap();
        assert_table_matches_template(&m, &spec);
        let table = m.regime_distribution(&spec).unwrap();
        // Marginalizing the natural X from the table matches the free joint
        // P(Y_x = y, Z_x' = z).
        for xv in 0..2 {
            for xpv in 0..2 {
                for yv in 0..2 {
                    for zv in 0..2 {
                        let free: CtfConjunction = [
                            CtfEvent::new(PotentialResponse::with_values(y, &[(x, xv)]), yv),
                            CtfEvent::new(PotentialResponse::with_values(z, &[(x, xpv)]), zv),
                        ]
                        .into_iter()
                        .collect();
                        let exact = m.l3_valuation(&free).unwrap();
                        let summed: f64 = (0..2)
                            .map(|xnat| table.get(&[xv, xpv, xnat, yv, zv]))
                            .sum();
                        assert!((summed - exact).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn marginal_coherence_over_one_event() {
        let g = fig1a();
        let m = random_scm(&g, 13, 2, None);
        let x = g.var("X").unwrap();
        let y = g.var("Y").unwrap();
        let spec = RegimeSpec::new(
            &g,
            vec![Action::CtfRand { source: x, children: VarSet::singleton(y) }],
        )
        .unwrap();
        let table = m.regime_distribution(&spec).unwrap();
        // Sum over Y's value: reduced conjunction P(X=x', Z=z) at each
        // assigned x.
        for xa in 0..2 {
            for xv in 0..2 {
                for zv in 0..2 {
                    let summed: f64 = (0..2).map(|yv| table.get(&[xa, xv, zv, yv])).sum();
                    let q = parse_query(&g, &format!("P(X={xv}, Z={zv})")).unwrap();
                    let exact = m.l3_valuation(&q.joint).unwrap();
                    assert!((summed - exact).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sampling_is_seed_reproducible_and_converges() {
        let g = fig1a();
        let m = random_scm(&g, 17, 2, None);
        let x = g.var("X").unwrap();
        let y = g.var("Y").unwrap();
        let spec = RegimeSpec::new(
            &g,
            vec![Action::CtfRand { source: x, children: VarSet::singleton(y) }],
        )
        .unwrap();
        let a = m.sample_regime(&spec, 2000, 42).unwrap();
        let b = m.sample_regime(&spec, 2000, 42).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = m.sample_regime(&spec, 2000, 43).unwrap();
        assert_ne!(a.rows, c.rows);
        assert!(matches!(m.sample_regime(&spec, 0, 1), Err(OracleError::EmptySample)));

        let n = 100_000;
        let big = m.sample_regime(&spec, n, 7).unwrap();
        let empirical = big.empirical_probs();
        let table = m.regime_distribution(&spec).unwrap();
        // Law of large numbers at 3 sigma per cell (conditional within each
        // assigned slice, which holds roughly n/2 draws).
        let per_slice = n as f64 / 2.0;
        for (cell, (&emp, &exact)) in empirical.iter().zip(&table.probs).enumerate() {
            let sigma = (exact * (1.0 - exact) / per_slice).sqrt();
            assert!(
                (emp - exact).abs() <= 3.0 * sigma + 1e-9,
                "cell {cell}: empirical {emp} vs exact {exact}"
            );
            assert!((emp - exact).abs() < 0.01);
        }
    }

    #[test]
    fn csv_has_template_header() {
        let g = fig1a();
        let m = random_scm(&g, 19, 2, None);
        let x = g.var("X").unwrap();
        let y = g.var("Y").unwrap();
        let spec = RegimeSpec::new(
            &g,
            vec![Action::CtfRand { source: x, children: VarSet::singleton(y) }],
        )
        .unwrap();
        let data = m.sample_regime(&spec, 3, 5).unwrap();
        let csv = data.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "x,X,Z,\"Y[X=x, Z=z]\"");
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn random_models_are_positive_and_deterministic() {
        let g = fig1a();
        for seed in 0..5 {
            let m = random_scm(&g, seed, 2, None);
            assert_eq!(m.induced_diagram(), &g);
            let table = m.regime_distribution(&RegimeSpec::observational(&g)).unwrap();
            let min = table.probs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "seed {seed}: observational cell at zero");
        }
        let a = random_scm(&g, 3, 3, None);
        let b = random_scm(&g, 3, 3, None);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn json_round_trip_preserves_the_model() {
        let g = fig1a();
        let m = random_scm(&g, 23, 2, None);
        let back = DiscreteSCM::from_json(&m.to_json()).unwrap();
        assert_eq!(back.to_json(), m.to_json());
        let conj = parse_query(&g, "P(Y[X=0] = 1, X = 1)").unwrap().joint;
        assert_eq!(m.l3_valuation(&conj).unwrap(), back.l3_valuation(&conj).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        let g = fig1a();
        let m = random_scm(&g, 29, 2, None).with_cap(0);
        let conj = parse_query(&g, "P(X = 0)").unwrap().joint;
        // Floor keeps the cap at 2^10, which this 3-exogenous model fits.
        assert!(m.l3_valuation(&conj).is_ok());
        let big = CausalDiagram::new(
            &[
                ("A", 2), ("B", 2), ("C", 2), ("D", 2), ("E", 2), ("F", 2),
                ("G", 2), ("H", 2), ("I", 2), ("J", 2), ("K", 2),
            ],
            &[],
            &[],
        )
        .unwrap();
        let m = random_scm(&big, 1, 4, None).with_cap(0);
        let conj = parse_query(&big, "P(A = 0)").unwrap().joint;
        assert!(matches!(m.l3_valuation(&conj), Err(OracleError::CapExceeded { .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = bow_scm().to_spec();
        spec.exogenous[0].probs = vec![0.6, 0.6];
        assert!(matches!(
            DiscreteSCM::from_spec(&spec),
            Err(OracleError::ProbabilitySum { .. })
        ));
        let mut spec = bow_scm().to_spec();
        spec.endogenous[1].mechanism = vec![0, 1];
        assert!(matches!(
            DiscreteSCM::from_spec(&spec),
            Err(OracleError::MechanismLength { .. })
        ));
        let mut spec = bow_scm().to_spec();
        spec.endogenous[1].mechanism = vec![0, 1, 2, 0];
        assert!(matches!(
            DiscreteSCM::from_spec(&spec),
            Err(OracleError::MechanismValue { .. })
        ));
        let mut spec = bow_scm().to_spec();
        spec.endogenous[0].endo_parents = vec!["Y".into()];
        spec.endogenous[0].mechanism = vec![0, 1, 1, 0];
        assert!(matches!(DiscreteSCM::from_spec(&spec), Err(OracleError::Graph(_))));
    }

    #[test]
    fn approximate_valuation_tracks_exact() {
        let g = fig1a();
        let m = random_scm(&g, 31, 2, None);
        let conj = parse_query(&g, "P(Y[X=1] = 1, X = 0)").unwrap().joint;
        let exact = m.l3_valuation(&conj).unwrap();
        let (approx, se) = m.l3_valuation_approx(&conj, 200_000, 11).unwrap();
        assert!((approx - exact).abs() < 4.0 * se + 1e-4);
    }

    /// Conditioning on the natural treatment makes three readings of the
    /// edge-randomized effect coincide: Y under (x, natural Z) given X=x',
    /// Y under (x, Z_{x'}) given X=x', and the unconditional Y under
    /// (x, Z_{x'}).
    #[test]
    fn edge_randomization_readings_coincide() {
        let g = fig1a();
        let (x, z, y) = (0, 1, 2);
        let mut nested_natural = BTreeMap::new();
        nested_natural.insert(x, Term::Value(0));
        nested_natural.insert(z, Term::Nested(Box::new(PotentialResponse::natural(z))));
        let y_x_natural_z = CtfConjunction::new(vec![CtfEvent::new(
            PotentialResponse { var: y, subscript: nested_natural },
            1,
        )]);
        let mut nested_ctf = BTreeMap::new();
        nested_ctf.insert(x, Term::Value(0));
        nested_ctf.insert(
            z,
            Term::Nested(Box::new(PotentialResponse::with_values(z, &[(x, 1)]))),
        );
        let y_x_z_xprime = CtfConjunction::new(vec![CtfEvent::new(
            PotentialResponse { var: y, subscript: nested_ctf },
            1,
        )]);
        let given = Some(parse_query(&g, "P(X = 1)").unwrap().joint);
        for seed in 0..10 {
            let m = random_scm(&g, seed, 3, None);
            let a = m
                .l3_query(&Query { joint: y_x_natural_z.clone(), given: given.clone() })
                .unwrap()
                .unwrap();
            let b = m
                .l3_query(&Query { joint: y_x_z_xprime.clone(), given: given.clone() })
                .unwrap()
                .unwrap();
            let c = m.l3_valuation(&y_x_z_xprime).unwrap();
            assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
            assert!((b - c).abs() < 1e-9, "seed {seed}: {b} vs {c}");
        }
    }
}
