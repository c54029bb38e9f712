//! Counterfactual expression types and the query DSL.
//!
//! Events are potential responses paired with concrete values; conjunctions
//! canonicalize (sort, deduplicate) so equality is set equality. The DSL
//! grammar:
//!
//! ```text
//! query      := 'P(' conj ('|' conj)? ')'
//! conj       := event (',' event)*
//! event      := var sub? '=' value
//! sub        := '[' assignment (',' assignment)* ']'
//! assignment := var '=' (value | var sub)
//! ```
//!
//! A value is an integer literal or a symbol such as `x`, `x'`, `x''`;
//! symbols bind to distinct integers per variable in order of first
//! appearance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{CausalDiagram, GraphError, VarId, VarSet};

/// Concrete value of a variable: an integer in `0..card`.
pub type Val = usize;

/// Subscript entry: a concrete value or a nested potential response.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Term {
    Value(Val),
    Nested(Box<PotentialResponse>),
}

/// A variable under a (possibly nested) intervention regime.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct PotentialResponse {
    pub var: VarId,
    pub subscript: BTreeMap<VarId, Term>,
}

impl PotentialResponse {
    /// Natural response: empty subscript.
    pub fn natural(var: VarId) -> Self {
        PotentialResponse { var, subscript: BTreeMap::new() }
    }

    /// Un-nested response with concrete subscript values.
    pub fn with_values(var: VarId, entries: &[(VarId, Val)]) -> Self {
        PotentialResponse {
            var,
            subscript: entries.iter().map(|&(k, v)| (k, Term::Value(v))).collect(),
        }
    }

    /// True when every subscript term is a concrete value.
    pub fn is_unnested(&self) -> bool {
        self.subscript.values().all(|t| matches!(t, Term::Value(_)))
    }

    /// Subscript keys as a variable set.
    pub fn subscript_vars(&self) -> VarSet {
        self.subscript.keys().copied().collect()
    }

    /// Concrete subscript entries; panics on nested terms.
    pub fn subscript_values(&self) -> BTreeMap<VarId, Val> {
        self.subscript
            .iter()
            .map(|(&k, t)| match t {
                Term::Value(v) => (k, *v),
                Term::Nested(_) => panic!("nested subscript where un-nested was required"),
            })
            .collect()
    }
}

/// A potential response constrained to a concrete value.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct CtfEvent {
    pub response: PotentialResponse,
    pub value: Val,
}

impl CtfEvent {
    pub fn new(response: PotentialResponse, value: Val) -> Self {
        CtfEvent { response, value }
    }

    pub fn var(&self) -> VarId {
        self.response.var
    }
}

/// Conjunction of counterfactual events, canonicalized to set form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct CtfConjunction {
    events: Vec<CtfEvent>,
}

impl CtfConjunction {
    pub fn new(mut events: Vec<CtfEvent>) -> Self {
        events.sort();
        events.dedup();
        CtfConjunction { events }
    }

    pub fn events(&self) -> &[CtfEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Variables carrying at least one event.
    pub fn vars(&self) -> VarSet {
        self.events.iter().map(|e| e.var()).collect()
    }

    /// True when every event is un-nested.
    pub fn is_unnested(&self) -> bool {
        self.events.iter().all(|e| e.response.is_unnested())
    }

    /// Union of two conjunctions (set semantics).
    pub fn and(&self, other: &CtfConjunction) -> CtfConjunction {
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        CtfConjunction::new(events)
    }

    /// Remove the given events.
    pub fn without(&self, drop: &[CtfEvent]) -> CtfConjunction {
        CtfConjunction::new(
            self.events.iter().filter(|e| !drop.contains(e)).cloned().collect(),
        )
    }

    /// True when every event of `self` appears in `other`.
    pub fn is_subset(&self, other: &CtfConjunction) -> bool {
        self.events.iter().all(|e| other.events.contains(e))
    }
}

impl FromIterator<CtfEvent> for CtfConjunction {
    fn from_iter<I: IntoIterator<Item = CtfEvent>>(iter: I) -> Self {
        CtfConjunction::new(iter.into_iter().collect())
    }
}

/// A joint query with an optional conditioning side.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Query {
    pub joint: CtfConjunction,
    pub given: Option<CtfConjunction>,
}

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("value {value} out of domain for `{var}` (cardinality {card})")]
    ValueOutOfDomain { var: String, value: Val, card: usize },
    #[error("symbol `{symbol}` needs value {value} but `{var}` has cardinality {card}")]
    SymbolOverflow { var: String, symbol: String, value: Val, card: usize },
    #[error("query joint side is empty")]
    EmptyJoint,
}

#[derive(Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eq,
    Bar,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            '[' => {
                toks.push((i, Tok::LBracket));
                i += 1;
            }
            ']' => {
                toks.push((i, Tok::RBracket));
                i += 1;
            }
            ',' => {
                toks.push((i, Tok::Comma));
                i += 1;
            }
            '=' => {
                toks.push((i, Tok::Eq));
                i += 1;
            }
            '|' => {
                toks.push((i, Tok::Bar));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: usize = text[start..i].parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    msg: "integer too large".into(),
                })?;
                toks.push((start, Tok::Int(n)));
            }
            _ if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() {
                    let c = bytes[i] as char;
                    if c.is_alphanumeric() || c == '_' {
                        i += 1;
                    } else {
                        break;
                    }
                }
                // Trailing primes belong to the identifier: x, x', x''.
                while i < bytes.len() && bytes[i] == b'\'' {
                    i += 1;
                }
                toks.push((start, Tok::Ident(text[start..i].to_string())));
            }
            _ => {
                return Err(ExprError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    g: &'a CausalDiagram,
    toks: Vec<(usize, Tok)>,
    at: usize,
    /// Per-variable binding of value symbols, in order of first appearance.
    symbols: BTreeMap<VarId, Vec<String>>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|&(p, _)| p).unwrap_or(usize::MAX)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get_mut(self.at).map(|(_, t)| std::mem::replace(t, Tok::Comma));
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(ExprError::Syntax { pos, msg: format!("expected {what}") }),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(ExprError::Syntax { pos, msg: format!("expected {what}") }),
        }
    }

    fn bind_symbol(&mut self, var: VarId, symbol: &str) -> Result<Val, ExprError> {
        let seen = self.symbols.entry(var).or_default();
        let value = match seen.iter().position(|s| s == symbol) {
            Some(i) => i,
            None => {
                seen.push(symbol.to_string());
                seen.len() - 1
            }
        };
        let card = self.g.card(var);
        if value >= card {
            return Err(ExprError::SymbolOverflow {
                var: self.g.name(var).to_string(),
                symbol: symbol.to_string(),
                value,
                card,
            });
        }
        Ok(value)
    }

    fn check_domain(&self, var: VarId, value: Val) -> Result<Val, ExprError> {
        let card = self.g.card(var);
        if value >= card {
            return Err(ExprError::ValueOutOfDomain {
                var: self.g.name(var).to_string(),
                value,
                card,
            });
        }
        Ok(value)
    }

    /// value | var sub — an identifier followed by `[` is a nested response,
    /// any other identifier a value symbol of `of_var`.
    fn term(&mut self, of_var: VarId) -> Result<Term, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Int(n)) => Ok(Term::Value(self.check_domain(of_var, n)?)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LBracket) {
                    let var = self.g.var(&name)?;
                    let subscript = self.subscript()?;
                    Ok(Term::Nested(Box::new(PotentialResponse { var, subscript })))
                } else {
                    Ok(Term::Value(self.bind_symbol(of_var, &name)?))
                }
            }
            _ => Err(ExprError::Syntax { pos, msg: "expected value or nested response".into() }),
        }
    }

    fn subscript(&mut self) -> Result<BTreeMap<VarId, Term>, ExprError> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut map = BTreeMap::new();
        loop {
            let name = self.ident("variable in subscript")?;
            let var = self.g.var(&name)?;
            self.expect(Tok::Eq, "`=`")?;
            let term = self.term(var)?;
            map.insert(var, term);
            match self.peek() {
                Some(Tok::Comma) => {
                    self.bump();
                }
                _ => break,
            }
        }
        self.expect(Tok::RBracket, "`]`")?;
        Ok(map)
    }

    fn event(&mut self) -> Result<CtfEvent, ExprError> {
        let name = self.ident("variable")?;
        let var = self.g.var(&name)?;
        let subscript = if self.peek() == Some(&Tok::LBracket) {
            self.subscript()?
        } else {
            BTreeMap::new()
        };
        self.expect(Tok::Eq, "`=`")?;
        let pos = self.pos();
        let value = match self.bump() {
            Some(Tok::Int(n)) => self.check_domain(var, n)?,
            Some(Tok::Ident(sym)) => self.bind_symbol(var, &sym)?,
            _ => return Err(ExprError::Syntax { pos, msg: "expected value".into() }),
        };
        Ok(CtfEvent::new(PotentialResponse { var, subscript }, value))
    }

    fn conj(&mut self) -> Result<CtfConjunction, ExprError> {
        let mut events = vec![self.event()?];
        while self.peek() == Some(&Tok::Comma) {
            self.bump();
            events.push(self.event()?);
        }
        Ok(CtfConjunction::new(events))
    }
}

/// Parse a query in the DSL against a diagram.
pub fn parse_query(g: &CausalDiagram, text: &str) -> Result<Query, ExprError> {
    let toks = tokenize(text)?;
    let mut p = Parser { g, toks, at: 0, symbols: BTreeMap::new() };
    let head = p.ident("`P`")?;
    if head != "P" {
        return Err(ExprError::Syntax { pos: 0, msg: "query must start with `P(`".into() });
    }
    p.expect(Tok::LParen, "`(`")?;
    let joint = p.conj()?;
    let given = if p.peek() == Some(&Tok::Bar) {
        p.bump();
        Some(p.conj()?)
    } else {
        None
    };
    p.expect(Tok::RParen, "`)`")?;
    if p.at != p.toks.len() {
        return Err(ExprError::Syntax { pos: p.pos(), msg: "trailing input".into() });
    }
    if joint.is_empty() {
        return Err(ExprError::EmptyJoint);
    }
    Ok(Query { joint, given })
}

fn render_response(g: &CausalDiagram, pr: &PotentialResponse, out: &mut String) {
    out.push_str(g.name(pr.var));
    if pr.subscript.is_empty() {
        return;
    }
    out.push('[');
    let mut first = true;
    for (&k, term) in &pr.subscript {
        if !first {
            out.push_str(", ");
        }
        first = false;
        out.push_str(g.name(k));
        out.push('=');
        match term {
            Term::Value(v) => {
                let _ = write!(out, "{v}");
            }
            Term::Nested(inner) => render_response(g, inner, out),
        }
    }
    out.push(']');
}

/// Render a conjunction in the DSL (concrete values).
pub fn render_conjunction(g: &CausalDiagram, c: &CtfConjunction) -> String {
    let mut out = String::new();
    let mut first = true;
    for e in c.events() {
        if !first {
            out.push_str(", ");
        }
        first = false;
        render_response(g, &e.response, &mut out);
        let _ = write!(out, " = {}", e.value);
    }
    out
}

/// Render a query in the DSL.
pub fn render_query(g: &CausalDiagram, q: &Query) -> String {
    let mut out = String::from("P(");
    out.push_str(&render_conjunction(g, &q.joint));
    if let Some(given) = &q.given {
        out.push_str(" | ");
        out.push_str(&render_conjunction(g, given));
    }
    out.push(')');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig1a() -> CausalDiagram {
        CausalDiagram::new(
            &[("X", 2), ("Z", 2), ("Y", 2)],
            &[("X", "Z"), ("X", "Y"), ("Z", "Y")],
            &[("Z", "Y")],
        )
        .unwrap()
    }

    #[test]
    fn parses_conditional_query() {
        let g = fig1a();
        let q = parse_query(&g, "P(Y[X=1] = 1 | X = 0)").unwrap();
        let y = g.var("Y").unwrap();
        let x = g.var("X").unwrap();
        assert_eq!(
            q.joint,
            CtfConjunction::new(vec![CtfEvent::new(
                PotentialResponse::with_values(y, &[(x, 1)]),
                1
            )])
        );
        assert_eq!(
            q.given.unwrap(),
            CtfConjunction::new(vec![CtfEvent::new(PotentialResponse::natural(x), 0)])
        );
    }

    #[test]
    fn parses_nested_query() {
        let g = fig1a();
        let q = parse_query(&g, "P(Y[X=1, Z=Z[X=0]] = 1)").unwrap();
        let (x, z, y) = (g.var("X").unwrap(), g.var("Z").unwrap(), g.var("Y").unwrap());
        let nested = PotentialResponse::with_values(z, &[(x, 0)]);
        let mut subscript = BTreeMap::new();
        subscript.insert(x, Term::Value(1));
        subscript.insert(z, Term::Nested(Box::new(nested)));
        assert_eq!(
            q.joint,
            CtfConjunction::new(vec![CtfEvent::new(PotentialResponse { var: y, subscript }, 1)])
        );
        assert!(q.given.is_none());
    }

    #[test]
    fn conflicting_events_parse() {
        let g = fig1a();
        let q = parse_query(&g, "P(Y[X=1] = 1, Y[X=1] = 0)").unwrap();
        assert_eq!(q.joint.len(), 2);
    }

    #[test]
    fn duplicate_events_collapse() {
        let g = fig1a();
        let q = parse_query(&g, "P(Y[X=1] = 1, Y[X=1] = 1)").unwrap();
        assert_eq!(q.joint.len(), 1);
    }

    #[test]
    fn symbols_bind_in_first_appearance_order() {
        let g = fig1a();
        let q = parse_query(&g, "P(Y[X=x] = y | X = x', Y = y')").unwrap();
        let (x, y) = (g.var("X").unwrap(), g.var("Y").unwrap());
        let joint = q.joint.events();
        assert_eq!(joint[0].response.subscript_values()[&x], 0);
        assert_eq!(joint[0].value, 0);
        let given = q.given.unwrap();
        let xe = given.events().iter().find(|e| e.var() == x).unwrap();
        let ye = given.events().iter().find(|e| e.var() == y).unwrap();
        assert_eq!(xe.value, 1);
        assert_eq!(ye.value, 1);
    }

    #[test]
    fn symbol_overflow_is_reported() {
        let g = fig1a();
        let err = parse_query(&g, "P(X = x, X = x', X = x'')");
        assert!(matches!(err, Err(ExprError::SymbolOverflow { .. })));
    }

    #[test]
    fn value_out_of_domain_is_reported() {
        let g = fig1a();
        let err = parse_query(&g, "P(Y[X=1] = 2)");
        assert!(matches!(err, Err(ExprError::ValueOutOfDomain { .. })));
    }

    #[test]
    fn syntax_error_carries_position() {
        let g = fig1a();
        match parse_query(&g, "P(Y[X=1] == 1)") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 10),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    fn arb_unnested_conjunction() -> impl Strategy<Value = CtfConjunction> {
        // Events over the three fig1a variables with subscripts drawn from
        // the other two.
        proptest::collection::vec(
            (0usize..3, proptest::collection::btree_map(0usize..3, 0usize..2, 0..=2), 0usize..2),
            1..=4,
        )
        .prop_map(|raw| {
            CtfConjunction::new(
                raw.into_iter()
                    .map(|(var, mut sub, value)| {
                        sub.remove(&var);
                        CtfEvent::new(
                            PotentialResponse {
                                var,
                                subscript: sub.into_iter().map(|(k, v)| (k, Term::Value(v))).collect(),
                            },
                            value,
                        )
                    })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn prop_render_parse_round_trip(joint in arb_unnested_conjunction(), given in proptest::option::of(arb_unnested_conjunction())) {
            let g = fig1a();
            let q = Query { joint, given };
            let text = render_query(&g, &q);
            let back = parse_query(&g, &text).unwrap();
            prop_assert_eq!(back, q);
        }
    }
}
