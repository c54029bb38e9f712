//! Causal-diagram representation and the graph primitives every algorithm consumes.
//!
//! A diagram holds an ordered variable list (declaration order is the
//! deterministic tie-break everywhere), directed edges forming a DAG, and
//! bidirected edges marking latent confounding. Variable sets are `u64`
//! bitsets, capping a diagram at 64 variables.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Index of a variable in declaration order.
pub type VarId = usize;

/// Maximum number of variables a diagram may declare.
pub const MAX_VARS: usize = 64;

/// Set of variables as a bitset over declaration indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VarSet(u64);

impl VarSet {
    pub const EMPTY: VarSet = VarSet(0);

    pub fn singleton(v: VarId) -> Self {
        debug_assert!(v < MAX_VARS);
        VarSet(1u64 << v)
    }

    pub fn insert(&mut self, v: VarId) {
        debug_assert!(v < MAX_VARS);
        self.0 |= 1u64 << v;
    }

    pub fn remove(&mut self, v: VarId) {
        self.0 &= !(1u64 << v);
    }

    pub fn contains(&self, v: VarId) -> bool {
        v < MAX_VARS && self.0 & (1u64 << v) != 0
    }

    pub fn union(self, other: VarSet) -> VarSet {
        VarSet(self.0 | other.0)
    }

    pub fn intersect(self, other: VarSet) -> VarSet {
        VarSet(self.0 & other.0)
    }

    pub fn minus(self, other: VarSet) -> VarSet {
        VarSet(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: VarSet) -> bool {
        self.0 & other.0 != 0
    }

    /// Iterate members in ascending id (declaration) order.
    pub fn iter(self) -> impl Iterator<Item = VarId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let v = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(v)
            }
        })
    }

    /// Smallest member id, if any.
    pub fn first(self) -> Option<VarId> {
        if self.0 == 0 {
            None
        } else {
            Some(self.0.trailing_zeros() as usize)
        }
    }
}

impl FromIterator<VarId> for VarSet {
    fn from_iter<I: IntoIterator<Item = VarId>>(iter: I) -> Self {
        let mut s = VarSet::EMPTY;
        for v in iter {
            s.insert(v);
        }
        s
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{0}` declared with cardinality {1}; at least 2 required")]
    BadCardinality(String, usize),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("directed part contains a cycle")]
    Cycle,
    #[error("diagram declares {0} variables; at most {MAX_VARS} supported")]
    TooManyVariables(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Causal diagram: directed DAG plus bidirected confounding edges.
#[derive(Clone, PartialEq, Eq)]
pub struct CausalDiagram {
    names: Vec<String>,
    cards: Vec<usize>,
    index: BTreeMap<String, VarId>,
    parents: Vec<VarSet>,
    children: Vec<VarSet>,
    /// Canonical (min, max) pairs, sorted, deduplicated.
    bidirected: Vec<(VarId, VarId)>,
}

impl fmt::Debug for CausalDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CausalDiagram({})", self.render().replace('\n', "; "))
    }
}

impl CausalDiagram {
    /// Build a diagram from variable declarations and edge lists.
    pub fn new(
        vars: &[(&str, usize)],
        directed: &[(&str, &str)],
        bidirected: &[(&str, &str)],
    ) -> Result<Self, GraphError> {
        if vars.len() > MAX_VARS {
            return Err(GraphError::TooManyVariables(vars.len()));
        }
        let mut names = Vec::with_capacity(vars.len());
        let mut cards = Vec::with_capacity(vars.len());
        let mut index = BTreeMap::new();
        for &(name, card) in vars {
            if card < 2 {
                return Err(GraphError::BadCardinality(name.to_string(), card));
            }
            if index.insert(name.to_string(), names.len()).is_some() {
                return Err(GraphError::DuplicateVariable(name.to_string()));
            }
            names.push(name.to_string());
            cards.push(card);
        }
        let mut g = CausalDiagram {
            parents: vec![VarSet::EMPTY; names.len()],
            children: vec![VarSet::EMPTY; names.len()],
            bidirected: Vec::new(),
            names,
            cards,
            index,
        };
        for &(a, b) in directed {
            let (a, b) = (g.var(a)?, g.var(b)?);
            if a == b {
                return Err(GraphError::SelfLoop(g.names[a].clone()));
            }
            g.parents[b].insert(a);
            g.children[a].insert(b);
        }
        for &(a, b) in bidirected {
            let (a, b) = (g.var(a)?, g.var(b)?);
            if a == b {
                return Err(GraphError::SelfLoop(g.names[a].clone()));
            }
            let pair = (a.min(b), a.max(b));
            if !g.bidirected.contains(&pair) {
                g.bidirected.push(pair);
            }
        }
        g.bidirected.sort_unstable();
        // Acyclicity is established once here; topological_order relies on it.
        if g.try_topological_order().is_none() {
            return Err(GraphError::Cycle);
        }
        Ok(g)
    }

    /// Parse the text format: `var X card 2`, `edge X -> Y`, `edge X <-> Y`,
    /// `#` comments, blank lines.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut vars: Vec<(String, usize)> = Vec::new();
        let mut directed: Vec<(String, String)> = Vec::new();
        let mut bidirected: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["var", name, "card", card] => {
                    let card: usize = card.parse().map_err(|_| GraphError::Parse {
                        line: line_no,
                        msg: format!("bad cardinality `{card}`"),
                    })?;
                    vars.push((name.to_string(), card));
                }
                ["edge", a, "->", b] => directed.push((a.to_string(), b.to_string())),
                ["edge", a, "<->", b] => bidirected.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(GraphError::Parse {
                        line: line_no,
                        msg: format!("unrecognized declaration `{line}`"),
                    })
                }
            }
        }
        let vars: Vec<(&str, usize)> = vars.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        let directed: Vec<(&str, &str)> = directed.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let bidirected: Vec<(&str, &str)> =
            bidirected.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        CausalDiagram::new(&vars, &directed, &bidirected)
    }

    /// Emit the text format in canonical order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in 0..self.n() {
            out.push_str(&format!("var {} card {}\n", self.names[v], self.cards[v]));
        }
        for p in 0..self.n() {
            for c in self.children[p].iter() {
                out.push_str(&format!("edge {} -> {}\n", self.names[p], self.names[c]));
            }
        }
        for &(a, b) in &self.bidirected {
            out.push_str(&format!("edge {} <-> {}\n", self.names[a], self.names[b]));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn var(&self, name: &str) -> Result<VarId, GraphError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownVariable(name.to_string()))
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v]
    }

    pub fn card(&self, v: VarId) -> usize {
        self.cards[v]
    }

    pub fn all_vars(&self) -> VarSet {
        (0..self.n()).collect()
    }

    pub fn parents(&self, v: VarId) -> VarSet {
        self.parents[v]
    }

    pub fn children(&self, v: VarId) -> VarSet {
        self.children[v]
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (VarId, VarId)> + '_ {
        (0..self.n()).flat_map(move |p| self.children[p].iter().map(move |c| (p, c)))
    }

    pub fn bidirected_edges(&self) -> &[(VarId, VarId)] {
        &self.bidirected
    }

    /// Reflexive-transitive closure along in-edges: includes `s`.
    pub fn ancestors(&self, s: VarSet) -> VarSet {
        self.closure(s, &self.parents)
    }

    /// Reflexive-transitive closure along out-edges: includes `s`.
    pub fn descendants(&self, s: VarSet) -> VarSet {
        self.closure(s, &self.children)
    }

    fn closure(&self, seed: VarSet, step: &[VarSet]) -> VarSet {
        let mut acc = seed;
        let mut frontier = seed;
        while !frontier.is_empty() {
            let mut next = VarSet::EMPTY;
            for v in frontier.iter() {
                next = next.union(step[v]);
            }
            frontier = next.minus(acc);
            acc = acc.union(next);
        }
        acc
    }

    /// Partition variables into confounded components; blocks ordered by
    /// their smallest member's declaration index.
    pub fn c_components(&self) -> Vec<VarSet> {
        let mut seen = VarSet::EMPTY;
        let mut blocks = Vec::new();
        for v in 0..self.n() {
            if seen.contains(v) {
                continue;
            }
            let block = self.c_component_of(v);
            seen = seen.union(block);
            blocks.push(block);
        }
        blocks
    }

    /// The confounded component containing `v`.
    pub fn c_component_of(&self, v: VarId) -> VarSet {
        let mut block = VarSet::singleton(v);
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.bidirected {
                let w = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !block.contains(w) {
                    block.insert(w);
                    stack.push(w);
                }
            }
        }
        block
    }

    /// Vertex-induced subgraph over `w`; variables renumbered in declaration
    /// order, both edge kinds restricted to pairs inside `w`.
    pub fn induced_subgraph(&self, w: VarSet) -> CausalDiagram {
        let keep: Vec<VarId> = w.iter().collect();
        let vars: Vec<(&str, usize)> =
            keep.iter().map(|&v| (self.names[v].as_str(), self.cards[v])).collect();
        let mut directed = Vec::new();
        for &p in &keep {
            for c in self.children[p].intersect(w).iter() {
                directed.push((self.names[p].as_str(), self.names[c].as_str()));
            }
        }
        let mut bidirected = Vec::new();
        for &(a, b) in &self.bidirected {
            if w.contains(a) && w.contains(b) {
                bidirected.push((self.names[a].as_str(), self.names[b].as_str()));
            }
        }
        CausalDiagram::new(&vars, &directed, &bidirected)
            .expect("induced subgraph of a valid diagram is valid")
    }

    /// Delete in-edges of `cut_into` (directed in-edges and incident
    /// bidirected edges, matching submodel semantics under intervention) and
    /// directed out-edges of `cut_outof`. Variable ids are preserved.
    pub fn mutilate(&self, cut_into: VarSet, cut_outof: VarSet) -> CausalDiagram {
        let mut g = self.clone();
        for v in 0..self.n() {
            if cut_into.contains(v) {
                for p in g.parents[v].iter() {
                    g.children[p].remove(v);
                }
                g.parents[v] = VarSet::EMPTY;
            }
        }
        for v in cut_outof.iter() {
            for c in g.children[v].iter() {
                g.parents[c].remove(v);
            }
            g.children[v] = VarSet::EMPTY;
        }
        g.bidirected
            .retain(|&(a, b)| !cut_into.contains(a) && !cut_into.contains(b));
        g
    }

    /// Delete the listed directed edges, keeping ids and bidirected edges.
    pub(crate) fn remove_directed_edges(&self, drop: &[(VarId, VarId)]) -> CausalDiagram {
        let mut g = self.clone();
        for &(src, dst) in drop {
            g.children[src].remove(dst);
            g.parents[dst].remove(src);
        }
        g
    }

    /// Deterministic topological order: among ready vertices the smallest
    /// declaration index goes first.
    pub fn topological_order(&self) -> Vec<VarId> {
        self.try_topological_order()
            .expect("diagram was validated acyclic at construction")
    }

    fn try_topological_order(&self) -> Option<Vec<VarId>> {
        let mut placed = VarSet::EMPTY;
        let mut order = Vec::with_capacity(self.n());
        while order.len() < self.n() {
            let mut advanced = false;
            for v in 0..self.n() {
                if !placed.contains(v) && self.parents[v].is_subset(placed) {
                    placed.insert(v);
                    order.push(v);
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                return None;
            }
        }
        Some(order)
    }

    /// Topological order restricted to `w`, using only edges inside `w`.
    pub fn topological_order_within(&self, w: VarSet) -> Vec<VarId> {
        let mut placed = VarSet::EMPTY;
        let mut order = Vec::with_capacity(w.len());
        while order.len() < w.len() {
            for v in w.iter() {
                if !placed.contains(v) && self.parents[v].intersect(w).is_subset(placed) {
                    placed.insert(v);
                    order.push(v);
                    break;
                }
            }
        }
        order
    }

    /// Ancestors of `s` using only vertices and edges inside `w`.
    pub fn ancestors_within(&self, s: VarSet, w: VarSet) -> VarSet {
        let seed = s.intersect(w);
        let mut acc = seed;
        let mut frontier = seed;
        while !frontier.is_empty() {
            let mut next = VarSet::EMPTY;
            for v in frontier.iter() {
                next = next.union(self.parents[v].intersect(w));
            }
            frontier = next.minus(acc);
            acc = acc.union(next);
        }
        acc
    }

    /// Confounded components of the vertex-induced subgraph over `w`,
    /// expressed in the original variable ids, ordered by smallest member.
    pub fn c_components_within(&self, w: VarSet) -> Vec<VarSet> {
        let mut seen = VarSet::EMPTY;
        let mut blocks = Vec::new();
        for v in w.iter() {
            if seen.contains(v) {
                continue;
            }
            let mut block = VarSet::singleton(v);
            let mut stack = vec![v];
            while let Some(u) = stack.pop() {
                for &(a, b) in &self.bidirected {
                    if !(w.contains(a) && w.contains(b)) {
                        continue;
                    }
                    let x = if a == u {
                        b
                    } else if b == u {
                        a
                    } else {
                        continue;
                    };
                    if !block.contains(x) {
                        block.insert(x);
                        stack.push(x);
                    }
                }
            }
            seen = seen.union(block);
            blocks.push(block);
        }
        blocks
    }

    /// True iff the bidirected edges of the subgraph over `t` connect `t`
    /// and number exactly |t| - 1.
    pub fn bidirected_spanning_tree_check(&self, t: VarSet) -> bool {
        if t.is_empty() {
            return true;
        }
        let edges: Vec<(VarId, VarId)> = self
            .bidirected
            .iter()
            .copied()
            .filter(|&(a, b)| t.contains(a) && t.contains(b))
            .collect();
        if edges.len() != t.len() - 1 {
            return false;
        }
        let root = t.first().unwrap();
        let mut reached = VarSet::singleton(root);
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &(a, b) in &edges {
                let w = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !reached.contains(w) {
                    reached.insert(w);
                    stack.push(w);
                }
            }
        }
        reached == t
    }

    /// Set of variable ids for a list of names.
    pub fn var_set(&self, names: &[&str]) -> Result<VarSet, GraphError> {
        names.iter().map(|n| self.var(n)).collect()
    }
}
