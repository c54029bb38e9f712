//! Symbolic estimands: expressions over input regime tables.
//!
//! An estimand references input distributions by regime id and addresses
//! cells of their tables through symbolic values, so one tree covers every
//! instantiation of its bound indices. Evaluation plugs in concrete tables;
//! rendering produces text and a JSON tree. The only structural cleanup
//! performed is dropping empty sums and unit products.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::Val;
use crate::graph::{CausalDiagram, VarId};
use crate::oracle::RegimeTable;
use crate::regime::{Dim, RegimeTemplate};
use crate::rewrite::{SumVar, SVal};

/// Reference to one probability of an input distribution: the regime's
/// table, sliced at the assigned values in `assigned` (unreferenced
/// assigned axes are pinned to slice 0, which the closed-set construction
/// makes irrelevant), marginalized over every measured variable absent
/// from `measured`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct InputRef {
    pub regime: usize,
    pub assigned: BTreeMap<usize, SVal>,
    pub measured: BTreeMap<VarId, SVal>,
}

/// Expression tree over input regime tables.
#[derive(Clone, PartialEq, Debug)]
pub enum Estimand {
    Input(InputRef),
    Sum {
        indices: Vec<SumVar>,
        body: Box<Estimand>,
    },
    Product(Vec<Estimand>),
    Quotient(Box<Estimand>, Box<Estimand>),
    Const(u8),
}

/// Estimand evaluation failure.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum EstimandError {
    #[error("no table supplied for regime {0}")]
    MissingRegime(usize),
    #[error("zero denominator in a quotient")]
    ZeroDenominator,
    #[error("index {0} is not bound by an enclosing sum")]
    UnboundIndex(usize),
}

fn resolve(v: SVal, env: &BTreeMap<usize, Val>) -> Result<Val, EstimandError> {
    match v {
        SVal::Fixed(x) => Ok(x),
        SVal::Idx(i) => env.get(&i).copied().ok_or(EstimandError::UnboundIndex(i)),
    }
}

/// Evaluate the estimand against concrete regime tables.
pub fn evaluate_estimand(
    e: &Estimand,
    g: &CausalDiagram,
    tables: &BTreeMap<usize, RegimeTable>,
) -> Result<f64, EstimandError> {
    eval(e, g, tables, &mut BTreeMap::new())
}

fn eval(
    e: &Estimand,
    g: &CausalDiagram,
    tables: &BTreeMap<usize, RegimeTable>,
    env: &mut BTreeMap<usize, Val>,
) -> Result<f64, EstimandError> {
    match e {
        Estimand::Const(c) => Ok(f64::from(*c)),
        Estimand::Input(input) => {
            let table = tables
                .get(&input.regime)
                .ok_or(EstimandError::MissingRegime(input.regime))?;
            let mut want: Vec<Option<Val>> = Vec::with_capacity(table.dims.len());
            for &d in &table.dims {
                want.push(match d {
                    Dim::Assigned(ai) => {
                        Some(resolve(*input.assigned.get(&ai).unwrap_or(&SVal::Fixed(0)), env)?)
                    }
                    Dim::Natural(v) => match input.measured.get(&v) {
                        Some(&sv) => Some(resolve(sv, env)?),
                        None => None,
                    },
                });
            }
            let mut total = 0.0;
            let mut digits = vec![0usize; table.cards.len()];
            for flat in 0..table.probs.len() {
                let mut rem = flat;
                for i in (0..table.cards.len()).rev() {
                    digits[i] = rem % table.cards[i];
                    rem /= table.cards[i];
                }
                if digits
                    .iter()
                    .zip(&want)
                    .all(|(&d, w)| w.map_or(true, |x| x == d))
                {
                    total += table.probs[flat];
                }
            }
            Ok(total)
        }
        Estimand::Sum { indices, body } => {
            let cards: Vec<usize> = indices.iter().map(|s| g.card(s.var)).collect();
            let total: usize = cards.iter().product();
            let mut acc = 0.0;
            for mut cell in 0..total {
                for (s, &card) in indices.iter().zip(&cards).rev() {
                    env.insert(s.idx, cell % card);
                    cell /= card;
                }
                acc += eval(body, g, tables, env)?;
            }
            for s in indices {
                env.remove(&s.idx);
            }
            Ok(acc)
        }
        Estimand::Product(factors) => {
            let mut acc = 1.0;
            for f in factors {
                acc *= eval(f, g, tables, env)?;
            }
            Ok(acc)
        }
        Estimand::Quotient(num, den) => {
            let d = eval(den, g, tables, env)?;
            if d == 0.0 {
                return Err(EstimandError::ZeroDenominator);
            }
            Ok(eval(num, g, tables, env)? / d)
        }
    }
}

/// Drop empty sums and unit products, bottom-up.
pub fn simplify(e: Estimand) -> Estimand {
    match e {
        Estimand::Sum { indices, body } => {
            let body = simplify(*body);
            if indices.is_empty() {
                body
            } else {
                Estimand::Sum { indices, body: Box::new(body) }
            }
        }
        Estimand::Product(factors) => {
            let mut out: Vec<Estimand> = factors
                .into_iter()
                .map(simplify)
                .filter(|f| !matches!(f, Estimand::Const(1)))
                .collect();
            match out.len() {
                0 => Estimand::Const(1),
                1 => out.pop().expect("single factor"),
                _ => Estimand::Product(out),
            }
        }
        Estimand::Quotient(num, den) => {
            let num = simplify(*num);
            match simplify(*den) {
                Estimand::Const(1) => num,
                den => Estimand::Quotient(Box::new(num), Box::new(den)),
            }
        }
        other => other,
    }
}

/// Renumber bound indices in traversal order and regenerate their display
/// names, so two estimands that differ only by index identity become equal.
pub fn normalize_indices(g: &CausalDiagram, e: &Estimand) -> Estimand {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    renumber(g, e, &mut map)
}

fn renumber(g: &CausalDiagram, e: &Estimand, map: &mut BTreeMap<usize, usize>) -> Estimand {
    let rename = |v: SVal, map: &BTreeMap<usize, usize>| match v {
        SVal::Idx(i) => SVal::Idx(*map.get(&i).unwrap_or(&i)),
        fixed => fixed,
    };
    match e {
        Estimand::Const(c) => Estimand::Const(*c),
        Estimand::Sum { indices, body } => {
            let indices: Vec<SumVar> = indices
                .iter()
                .map(|s| {
                    let next = map.len();
                    map.insert(s.idx, next);
                    SumVar {
                        idx: next,
                        var: s.var,
                        name: format!("{}{}", g.name(s.var).to_lowercase(), next),
                    }
                })
                .collect();
            Estimand::Sum {
                indices,
                body: Box::new(renumber(g, body, map)),
            }
        }
        Estimand::Product(factors) => {
            Estimand::Product(factors.iter().map(|f| renumber(g, f, map)).collect())
        }
        Estimand::Quotient(num, den) => Estimand::Quotient(
            Box::new(renumber(g, num, map)),
            Box::new(renumber(g, den, map)),
        ),
        Estimand::Input(input) => Estimand::Input(InputRef {
            regime: input.regime,
            assigned: input
                .assigned
                .iter()
                .map(|(&k, &v)| (k, rename(v, map)))
                .collect(),
            measured: input
                .measured
                .iter()
                .map(|(&k, &v)| (k, rename(v, map)))
                .collect(),
        }),
    }
}

/// Index display names in scope, collected from enclosing sums.
type Names = BTreeMap<usize, String>;

fn sval_text(v: SVal, names: &Names) -> String {
    match v {
        SVal::Fixed(x) => x.to_string(),
        SVal::Idx(i) => names.get(&i).cloned().unwrap_or_else(|| format!("?{i}")),
    }
}

/// The conjunction a reference denotes, rendered from its regime's
/// template: retained events with dimensions resolved to symbols.
fn input_text(g: &CausalDiagram, t: &RegimeTemplate, input: &InputRef, names: &Names) -> String {
    let dim_text = |d: &Dim| match d {
        Dim::Assigned(ai) => sval_text(*input.assigned.get(ai).unwrap_or(&SVal::Fixed(0)), names),
        Dim::Natural(v) => sval_text(
            *input.measured.get(v).unwrap_or(&SVal::Fixed(0)),
            names,
        ),
    };
    let mut parts = Vec::new();
    for ev in &t.events {
        let Some(&value) = input.measured.get(&ev.var) else {
            continue;
        };
        let mut s = g.name(ev.var).to_string();
        if !ev.subscript.is_empty() {
            let subs: Vec<String> = ev
                .subscript
                .iter()
                .map(|(&k, d)| format!("{}={}", g.name(k), dim_text(d)))
                .collect();
            s.push_str(&format!("[{}]", subs.join(", ")));
        }
        s.push_str(&format!("={}", sval_text(value, names)));
        parts.push(s);
    }
    format!("P{{R{}}}({})", input.regime, parts.join(", "))
}

/// Human-readable rendering; `templates[k]` is regime k's template.
pub fn render_estimand(g: &CausalDiagram, templates: &[RegimeTemplate], e: &Estimand) -> String {
    fn go(
        g: &CausalDiagram,
        templates: &[RegimeTemplate],
        e: &Estimand,
        names: &mut Names,
    ) -> String {
        match e {
            Estimand::Const(c) => c.to_string(),
            Estimand::Input(input) => input_text(g, &templates[input.regime], input, names),
            Estimand::Sum { indices, body } => {
                for s in indices {
                    names.insert(s.idx, s.name.clone());
                }
                let inner = go(g, templates, body, names);
                let binders: Vec<&str> = indices.iter().map(|s| s.name.as_str()).collect();
                format!("Σ_{{{}}} [{}]", binders.join(","), inner)
            }
            Estimand::Product(factors) => factors
                .iter()
                .map(|f| go(g, templates, f, names))
                .collect::<Vec<_>>()
                .join(" · "),
            Estimand::Quotient(num, den) => format!(
                "({}) / ({})",
                go(g, templates, num, names),
                go(g, templates, den, names)
            ),
        }
    }
    go(g, templates, e, &mut Names::new())
}

/// JSON tree mirroring the text rendering; values are integers or index
/// names.
pub fn estimand_json(g: &CausalDiagram, templates: &[RegimeTemplate], e: &Estimand) -> Value {
    fn sval_json(v: SVal, names: &Names) -> Value {
        match v {
            SVal::Fixed(x) => json!(x),
            SVal::Idx(i) => json!(names.get(&i).cloned().unwrap_or_else(|| format!("?{i}"))),
        }
    }
    fn go(g: &CausalDiagram, templates: &[RegimeTemplate], e: &Estimand, names: &mut Names) -> Value {
        match e {
            Estimand::Const(c) => json!({ "const": c }),
            Estimand::Sum { indices, body } => {
                for s in indices {
                    names.insert(s.idx, s.name.clone());
                }
                let idx: Vec<Value> = indices
                    .iter()
                    .map(|s| json!({ "name": s.name, "var": g.name(s.var) }))
                    .collect();
                json!({ "sum": { "indices": idx, "body": go(g, templates, body, names) } })
            }
            Estimand::Product(factors) => {
                let fs: Vec<Value> = factors.iter().map(|f| go(g, templates, f, names)).collect();
                json!({ "product": fs })
            }
            Estimand::Quotient(num, den) => json!({
                "quotient": {
                    "numerator": go(g, templates, num, names),
                    "denominator": go(g, templates, den, names),
                }
            }),
            Estimand::Input(input) => {
                let t = &templates[input.regime];
                let events: Vec<Value> = t
                    .events
                    .iter()
                    .filter_map(|ev| {
                        let value = input.measured.get(&ev.var)?;
                        let sub: BTreeMap<String, Value> = ev
                            .subscript
                            .iter()
                            .map(|(&k, d)| {
                                let v = match d {
                                    Dim::Assigned(ai) => {
                                        *input.assigned.get(ai).unwrap_or(&SVal::Fixed(0))
                                    }
                                    Dim::Natural(w) => {
                                        *input.measured.get(w).unwrap_or(&SVal::Fixed(0))
                                    }
                                };
                                (g.name(k).to_string(), sval_json(v, names))
                            })
                            .collect();
                        Some(json!({
                            "var": g.name(ev.var),
                            "subscript": sub,
                            "value": sval_json(*value, names),
                        }))
                    })
                    .collect();
                json!({ "input": { "regime": input.regime, "events": events } })
            }
        }
    }
    go(g, templates, e, &mut Names::new())
}

/// Check that bound indices are distinct and every index reference is in
/// scope, and that each InputRef addresses an existing regime whose
/// template contains the measured variables and assigned dimensions it
/// names.
pub fn check_wellformed(
    e: &Estimand,
    templates: &[RegimeTemplate],
) -> Result<(), String> {
    fn go(
        e: &Estimand,
        templates: &[RegimeTemplate],
        scope: &mut Vec<usize>,
    ) -> Result<(), String> {
        let check_sval = |v: SVal, scope: &[usize]| match v {
            SVal::Idx(i) if !scope.contains(&i) => Err(format!("index {i} out of scope")),
            _ => Ok(()),
        };
        match e {
            Estimand::Const(c) if *c > 1 => Err(format!("constant {c} is not 0 or 1")),
            Estimand::Const(_) => Ok(()),
            Estimand::Sum { indices, body } => {
                for s in indices {
                    if scope.contains(&s.idx) {
                        return Err(format!("index {} bound twice", s.idx));
                    }
                    scope.push(s.idx);
                }
                go(body, templates, scope)?;
                for _ in indices {
                    scope.pop();
                }
                Ok(())
            }
            Estimand::Product(factors) => {
                factors.iter().try_for_each(|f| go(f, templates, scope))
            }
            Estimand::Quotient(num, den) => {
                go(num, templates, scope)?;
                go(den, templates, scope)
            }
            Estimand::Input(input) => {
                let t = templates
                    .get(input.regime)
                    .ok_or_else(|| format!("regime {} unknown", input.regime))?;
                for (&ai, &v) in &input.assigned {
                    if ai >= t.actions.len() {
                        return Err(format!("assigned dimension {ai} unknown"));
                    }
                    check_sval(v, scope)?;
                }
                for (&w, &v) in &input.measured {
                    if !t.events.iter().any(|ev| ev.var == w) {
                        return Err(format!("variable {w} not in regime template"));
                    }
                    check_sval(v, scope)?;
                }
                Ok(())
            }
        }
    }
    go(e, templates, &mut Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::frontdoor;
    use crate::oracle::random_scm;
    use crate::regime::RegimeSpec;

    fn sum(idx: usize, var: VarId, g: &CausalDiagram, body: Estimand) -> Estimand {
        Estimand::Sum {
            indices: vec![SumVar {
                idx,
                var,
                name: format!("{}{}", g.name(var).to_lowercase(), idx),
            }],
            body: Box::new(body),
        }
    }

    fn obs_input(measured: &[(VarId, SVal)]) -> Estimand {
        Estimand::Input(InputRef {
            regime: 0,
            assigned: BTreeMap::new(),
            measured: measured.iter().copied().collect(),
        })
    }

    /// Σ_z P(z|x) Σ_{x'} P(y|z,x') P(x') over the observational table.
    fn frontdoor_adjustment(g: &CausalDiagram, x: Val, y: Val) -> Estimand {
        let (xv, zv, yv) = (0, 1, 2);
        let z = SVal::Idx(0);
        let xp = SVal::Idx(1);
        let p_z_given_x = Estimand::Quotient(
            Box::new(obs_input(&[(zv, z), (xv, SVal::Fixed(x))])),
            Box::new(obs_input(&[(xv, SVal::Fixed(x))])),
        );
        let p_y_given_zx = Estimand::Quotient(
            Box::new(obs_input(&[(yv, SVal::Fixed(y)), (zv, z), (xv, xp)])),
            Box::new(obs_input(&[(zv, z), (xv, xp)])),
        );
        let p_x = obs_input(&[(xv, xp)]);
        let inner = sum(
            1,
            xv,
            g,
            Estimand::Product(vec![p_y_given_zx, p_x]),
        );
        sum(0, zv, g, Estimand::Product(vec![p_z_given_x, inner]))
    }

    #[test]
    fn constants_evaluate() {
        let g = frontdoor();
        let tables = BTreeMap::new();
        assert_eq!(evaluate_estimand(&Estimand::Const(1), &g, &tables), Ok(1.0));
        assert_eq!(evaluate_estimand(&Estimand::Const(0), &g, &tables), Ok(0.0));
    }

    #[test]
    fn frontdoor_adjustment_matches_oracle() {
        let g = frontdoor();
        let spec = RegimeSpec::observational(&g);
        let e = frontdoor_adjustment(&g, 0, 1);
        for seed in 0..5 {
            let m = random_scm(&g, seed, 3, None);
            let mut tables = BTreeMap::new();
            tables.insert(0usize, m.regime_distribution(&spec).unwrap());
            let got = evaluate_estimand(&e, &g, &tables).unwrap();
            let conj = crate::expr::parse_query(&g, "P(Y[X=0]=1)").unwrap().joint;
            let want = m.l3_valuation(&conj).unwrap();
            assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn missing_regime_and_zero_denominator_error() {
        let g = frontdoor();
        let tables = BTreeMap::new();
        let input = obs_input(&[(0, SVal::Fixed(0))]);
        assert_eq!(
            evaluate_estimand(&input, &g, &tables),
            Err(EstimandError::MissingRegime(0))
        );
        let quot = Estimand::Quotient(
            Box::new(Estimand::Const(1)),
            Box::new(Estimand::Const(0)),
        );
        assert_eq!(
            evaluate_estimand(&quot, &g, &tables),
            Err(EstimandError::ZeroDenominator)
        );
    }

    #[test]
    fn unbound_index_errors() {
        let g = frontdoor();
        let spec = RegimeSpec::observational(&g);
        let m = random_scm(&g, 1, 2, None);
        let mut tables = BTreeMap::new();
        tables.insert(0usize, m.regime_distribution(&spec).unwrap());
        let dangling = obs_input(&[(0, SVal::Idx(7))]);
        assert_eq!(
            evaluate_estimand(&dangling, &g, &tables),
            Err(EstimandError::UnboundIndex(7))
        );
    }

    #[test]
    fn marginalization_sums_omitted_axes() {
        let g = frontdoor();
        let spec = RegimeSpec::observational(&g);
        let m = random_scm(&g, 5, 2, None);
        let mut tables = BTreeMap::new();
        tables.insert(0usize, m.regime_distribution(&spec).unwrap());
        let whole = obs_input(&[]);
        assert!((evaluate_estimand(&whole, &g, &tables).unwrap() - 1.0).abs() < 1e-9);
        let x_marginal = obs_input(&[(0, SVal::Fixed(1))]);
        let conj = crate::expr::parse_query(&g, "P(X=1)").unwrap().joint;
        let want = m.l3_valuation(&conj).unwrap();
        assert!((evaluate_estimand(&x_marginal, &g, &tables).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn unreferenced_assigned_axis_is_slice_invariant() {
        let g = frontdoor();
        let (x, z, _y) = (0, 1, 2);
        let spec = RegimeSpec::new(
            &g,
            vec![crate::regime::Action::CtfRand {
                source: x,
                children: crate::graph::VarSet::singleton(z),
            }],
        )
        .unwrap();
        let m = random_scm(&g, 9, 3, None);
        let table = m.regime_distribution(&spec).unwrap();
        let mut tables = BTreeMap::new();
        tables.insert(0usize, table);
        let pinned = Estimand::Input(InputRef {
            regime: 0,
            assigned: BTreeMap::new(),
            measured: [(x, SVal::Fixed(1))].into_iter().collect(),
        });
        let slice1 = Estimand::Input(InputRef {
            regime: 0,
            assigned: [(0usize, SVal::Fixed(1))].into_iter().collect(),
            measured: [(x, SVal::Fixed(1))].into_iter().collect(),
        });
        let a = evaluate_estimand(&pinned, &g, &tables).unwrap();
        let b = evaluate_estimand(&slice1, &g, &tables).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn simplify_removes_empty_sums_and_unit_products() {
        let g = frontdoor();
        let inner = obs_input(&[(0, SVal::Fixed(0))]);
        let wrapped = Estimand::Sum {
            indices: vec![],
            body: Box::new(Estimand::Product(vec![
                Estimand::Const(1),
                inner.clone(),
            ])),
        };
        assert_eq!(simplify(wrapped), inner);
        let unit_quotient = Estimand::Quotient(
            Box::new(inner.clone()),
            Box::new(Estimand::Const(1)),
        );
        assert_eq!(simplify(unit_quotient), inner);
        let _ = g;
    }

    #[test]
    fn normalization_equates_renamed_indices() {
        let g = frontdoor();
        let a = frontdoor_adjustment(&g, 0, 1);
        let mut b = frontdoor_adjustment(&g, 0, 1);
        fn bump(e: &mut Estimand) {
            match e {
                Estimand::Sum { indices, body } => {
                    for s in indices.iter_mut() {
                        s.idx += 10;
                        s.name = format!("k{}", s.idx);
                    }
                    bump(body);
                }
                Estimand::Product(fs) => fs.iter_mut().for_each(bump),
                Estimand::Quotient(n, d) => {
                    bump(n);
                    bump(d);
                }
                Estimand::Input(input) => {
                    let shift = |v: &mut SVal| {
                        if let SVal::Idx(i) = v {
                            *i += 10;
                        }
                    };
                    let mut measured = BTreeMap::new();
                    for (&k, &v) in input.measured.iter() {
                        let mut v = v;
                        shift(&mut v);
                        measured.insert(k, v);
                    }
                    input.measured = measured;
                }
                Estimand::Const(_) => {}
            }
        }
        bump(&mut b);
        assert_ne!(a, b);
        assert_eq!(normalize_indices(&g, &a), normalize_indices(&g, &b));
    }

    #[test]
    fn wellformedness_checks_scoping_and_templates() {
        let g = frontdoor();
        let spec = RegimeSpec::observational(&g);
        let templates = vec![crate::regime::regime_regex(&g, &spec)];
        let good = frontdoor_adjustment(&g, 0, 1);
        assert!(check_wellformed(&good, &templates).is_ok());
        let dangling = obs_input(&[(0, SVal::Idx(3))]);
        assert!(check_wellformed(&dangling, &templates).is_err());
        let bad_regime = Estimand::Input(InputRef {
            regime: 4,
            assigned: BTreeMap::new(),
            measured: BTreeMap::new(),
        });
        assert!(check_wellformed(&bad_regime, &templates).is_err());
    }

    #[test]
    fn rendering_produces_text_and_json() {
        let g = frontdoor();
        let spec = RegimeSpec::observational(&g);
        let templates = vec![crate::regime::regime_regex(&g, &spec)];
        let e = frontdoor_adjustment(&g, 0, 1);
        let text = render_estimand(&g, &templates, &e);
        assert!(text.starts_with("Σ_{z0}"), "{text}");
        assert!(text.contains("P{R0}"), "{text}");
        let v = estimand_json(&g, &templates, &e);
        assert_eq!(v["sum"]["indices"][0]["name"], "z0");
        let body = &v["sum"]["body"];
        assert!(body["product"].is_array());
    }
}
