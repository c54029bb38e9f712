//! End-to-end demonstration: a query that no observational data can pin
//! down. Identification fails with a certificate, and the certificate is
//! turned into two concrete models that agree on the data but disagree on
//! the query.

use ctfid_core::engine::{ctfidu_plus, render_sconj, CtfIdOutcome};
use ctfid_core::expr::{CtfConjunction, CtfEvent, PotentialResponse, Query};
use ctfid_core::graph::CausalDiagram;
use ctfid_core::regime::RegimeSpec;
use ctfid_core::witness::{grounded, hedge_witness};

fn main() {
    let g = CausalDiagram::new(
        &[
            ("S", 2),
            ("C", 2),
            ("B", 2),
            ("D", 2),
            ("F", 2),
            ("E", 2),
            ("G", 2),
            ("H", 2),
        ],
        &[
            ("C", "B"),
            ("S", "B"),
            ("B", "D"),
            ("D", "F"),
            ("G", "E"),
            ("H", "E"),
        ],
        &[
            ("C", "S"),
            ("C", "B"),
            ("B", "F"),
            ("D", "E"),
            ("E", "F"),
        ],
    )
    .unwrap();
    let v = |n: &str| g.var(n).unwrap();

    let joint = CtfConjunction::new(vec![
        CtfEvent::new(PotentialResponse::with_values(v("F"), &[(v("D"), 0)]), 1),
        CtfEvent::new(
            PotentialResponse::with_values(v("E"), &[(v("G"), 0), (v("H"), 0)]),
            1,
        ),
    ]);
    let query = Query { joint, given: None };
    let regimes = vec![RegimeSpec::observational(&g)];

    println!("query: P(F[D=0]=1, E[G=0, H=0]=1) from observational data only");
    match ctfidu_plus(&g, &query, &regimes).unwrap() {
        CtfIdOutcome::Identified(id) => {
            println!("unexpectedly identified: {:?}", id.estimand);
        }
        CtfIdOutcome::Fail(fc) => {
            println!("identification FAILED on block {}", render_sconj(&g, &fc.block));
            for line in fc.log.iter().rev().take(3).rev() {
                println!("  log: {line}");
            }
            let cert = fc.hedge.expect("failure carries a structural certificate");
            println!(
                "certificate: T = {}, C = {}",
                render_sconj(&g, &cert.t),
                render_sconj(&g, &cert.c)
            );

            let t = grounded(&cert.t, 0);
            let c = grounded(&cert.c, 0);
            let pair = hedge_witness(&cert.subgraph, &t, &c).unwrap();
            for line in &pair.transcript {
                println!("  witness: {line}");
            }
            println!(
                "pre-smoothing: input tables agree within {:.1e}, target event gap {:.4}",
                pair.agreement, pair.event_gap
            );
            println!(
                "smoothed models: event gap {:.4}, parity gap {:.4}",
                pair.smoothed_event_gap, pair.smoothed_parity_gap
            );
            println!(
                "model sizes: m1 {} bytes, m2 {} bytes of JSON",
                pair.m1.to_json().len(),
                pair.m2.to_json().len()
            );
        }
    }
}
