//! Input data for the bow graph and the closed-form interval formulas.
//!
//! The bow graph has a treatment X with m values, an outcome Y with k
//! values, the edge X -> Y, and an unobserved confounder of the pair. The
//! query throughout is P(Y_x = y | X = x', Y = y') with x distinct from
//! x'. Each additional tier of input data narrows its interval:
//! observational alone leaves [0, 1], experimental data gives [l, r]
//! through two Fréchet rounds, and counterfactual data replaces the first
//! round with the measured P(Y_x = y | X = x').

use crate::interval::Interval;
use crate::BoundsError;

/// Slack accepted when checking that supplied tables are distributions.
const DIST_TOL: f64 = 1e-6;

/// The three data tiers over a bow graph.
///
/// * `obs[x][y]` is the joint P(X = x, Y = y),
/// * `exp[x][y]` is the experimental P(Y_x = y),
/// * `ctf[x][xp][y]` is the counterfactual P(Y_x = y | X = xp).
#[derive(Clone, Debug)]
pub struct BowData {
    obs: Vec<Vec<f64>>,
    exp: Option<Vec<Vec<f64>>>,
    ctf: Option<Vec<Vec<Vec<f64>>>>,
}

impl BowData {
    pub fn new(
        obs: Vec<Vec<f64>>,
        exp: Option<Vec<Vec<f64>>>,
        ctf: Option<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self, BoundsError> {
        let m = obs.len();
        if m < 2 {
            return Err(BoundsError::BadTable {
                table: "observational",
                detail: format!("treatment needs at least 2 values, got {m}"),
            });
        }
        let k = obs.first().map_or(0, |row| row.len());
        if k < 2 {
            return Err(BoundsError::BadTable {
                table: "observational",
                detail: format!("outcome needs at least 2 values, got {k}"),
            });
        }
        check_shape("observational", &obs, m, k)?;
        check_mass("observational", obs.iter().flatten().copied(), 1.0)?;
        if let Some(exp) = &exp {
            check_shape("experimental", exp, m, k)?;
            for (x, row) in exp.iter().enumerate() {
                check_mass("experimental", row.iter().copied(), 1.0).map_err(|e| match e {
                    BoundsError::BadTable { detail, .. } => BoundsError::BadTable {
                        table: "experimental",
                        detail: format!("row x={x}: {detail}"),
                    },
                    other => other,
                })?;
            }
        }
        if let Some(ctf) = &ctf {
            if ctf.len() != m {
                return Err(BoundsError::BadTable {
                    table: "counterfactual",
                    detail: format!("expected {m} intervention arms, got {}", ctf.len()),
                });
            }
            for (x, per_arm) in ctf.iter().enumerate() {
                check_shape("counterfactual", per_arm, m, k)?;
                for (xp, row) in per_arm.iter().enumerate() {
                    check_mass("counterfactual", row.iter().copied(), 1.0).map_err(
                        |e| match e {
                            BoundsError::BadTable { detail, .. } => BoundsError::BadTable {
                                table: "counterfactual",
                                detail: format!("row x={x}, x'={xp}: {detail}"),
                            },
                            other => other,
                        },
                    )?;
                }
            }
        }
        Ok(BowData { obs, exp, ctf })
    }

    pub fn observational_only(obs: Vec<Vec<f64>>) -> Result<Self, BoundsError> {
        BowData::new(obs, None, None)
    }

    /// Number of treatment values.
    pub fn m(&self) -> usize {
        self.obs.len()
    }

    /// Number of outcome values.
    pub fn k(&self) -> usize {
        self.obs[0].len()
    }

    pub fn obs(&self) -> &[Vec<f64>] {
        &self.obs
    }

    pub fn exp(&self) -> Option<&[Vec<f64>]> {
        self.exp.as_deref()
    }

    pub fn ctf(&self) -> Option<&[Vec<Vec<f64>>]> {
        self.ctf.as_deref()
    }

    /// P(X = x).
    pub fn p_x(&self, x: usize) -> Result<f64, BoundsError> {
        self.check_x(x)?;
        Ok(self.obs[x].iter().sum())
    }

    /// P(X = x, Y = y).
    pub fn p_xy(&self, x: usize, y: usize) -> Result<f64, BoundsError> {
        self.check_x(x)?;
        self.check_y(y)?;
        Ok(self.obs[x][y])
    }

    /// P(Y = y | X = x); errors when P(X = x) is zero.
    pub fn p_y_given_x(&self, y: usize, x: usize) -> Result<f64, BoundsError> {
        let px = self.p_x(x)?;
        self.check_y(y)?;
        if px <= 0.0 {
            return Err(BoundsError::ZeroMass { event: format!("X={x}") });
        }
        Ok(self.obs[x][y] / px)
    }

    /// Experimental P(Y_x = y); errors when the tier is absent.
    pub fn p_y_do_x(&self, y: usize, x: usize) -> Result<f64, BoundsError> {
        self.check_x(x)?;
        self.check_y(y)?;
        let exp = self.exp.as_ref().ok_or(BoundsError::MissingTier { tier: "experimental" })?;
        Ok(exp[x][y])
    }

    /// Counterfactual P(Y_x = y | X = xp); errors when the tier is absent.
    pub fn p_y_do_x_given_xp(&self, y: usize, x: usize, xp: usize) -> Result<f64, BoundsError> {
        self.check_x(x)?;
        self.check_x(xp)?;
        self.check_y(y)?;
        let ctf = self.ctf.as_ref().ok_or(BoundsError::MissingTier { tier: "counterfactual" })?;
        Ok(ctf[x][xp][y])
    }

    fn check_x(&self, x: usize) -> Result<(), BoundsError> {
        if x >= self.m() {
            return Err(BoundsError::IndexOutOfRange {
                what: "treatment value",
                index: x,
                size: self.m(),
            });
        }
        Ok(())
    }

    fn check_y(&self, y: usize) -> Result<(), BoundsError> {
        if y >= self.k() {
            return Err(BoundsError::IndexOutOfRange {
                what: "outcome value",
                index: y,
                size: self.k(),
            });
        }
        Ok(())
    }
}

fn check_shape(table: &'static str, rows: &[Vec<f64>], m: usize, k: usize) -> Result<(), BoundsError> {
    if rows.len() != m {
        return Err(BoundsError::BadTable {
            table,
            detail: format!("expected {m} rows, got {}", rows.len()),
        });
    }
    for row in rows {
        if row.len() != k {
            return Err(BoundsError::BadTable {
                table,
                detail: format!("expected {k} columns, got {}", row.len()),
            });
        }
    }
    Ok(())
}

fn check_mass(
    table: &'static str,
    cells: impl Iterator<Item = f64>,
    total: f64,
) -> Result<(), BoundsError> {
    let mut sum = 0.0;
    for c in cells {
        if !c.is_finite() || c < -DIST_TOL {
            return Err(BoundsError::BadTable {
                table,
                detail: format!("cell {c} is not a probability"),
            });
        }
        sum += c;
    }
    if (sum - total).abs() > DIST_TOL {
        return Err(BoundsError::BadTable {
            table,
            detail: format!("mass sums to {sum}, expected {total}"),
        });
    }
    Ok(())
}

pub(crate) fn check_query(
    d: &BowData,
    x: usize,
    xp: usize,
    y: usize,
    yp: usize,
) -> Result<(), BoundsError> {
    for (what, idx, size) in [
        ("treatment value", x, d.m()),
        ("treatment value", xp, d.m()),
        ("outcome value", y, d.k()),
        ("outcome value", yp, d.k()),
    ] {
        if idx >= size {
            return Err(BoundsError::IndexOutOfRange { what, index: idx, size });
        }
    }
    if x == xp {
        return Err(BoundsError::SameArm { x });
    }
    Ok(())
}

/// Observational data alone: the query is unconstrained beyond being a
/// probability, so the tight interval is always [0, 1].
pub fn nte_bounds_l1(d: &BowData, x: usize, xp: usize, y: usize, yp: usize) -> Result<Interval, BoundsError> {
    check_query(d, x, xp, y, yp)?;
    Ok(Interval::unit())
}

/// The first Fréchet round: experimental P(y_x) and observational P(x')
/// bound the cross-world conditional P(y_x | x').
pub fn frechet_alpha(d: &BowData, x: usize, xp: usize, y: usize) -> Result<Interval, BoundsError> {
    if x == xp {
        return Err(BoundsError::SameArm { x });
    }
    let p_xp = d.p_x(xp)?;
    let p_yx = d.p_y_do_x(y, x)?;
    if p_xp <= 0.0 {
        return Err(BoundsError::ZeroMass { event: format!("X={xp}") });
    }
    let a_min = f64::max(0.0, (p_yx - (1.0 - p_xp)) / p_xp);
    let a_max = f64::min(1.0, p_yx / p_xp);
    Interval::new(a_min, a_max)
}

/// Observational plus experimental data: two chained Fréchet rounds give
/// the closed interval [l, r].
pub fn nte_bounds_l2(d: &BowData, x: usize, xp: usize, y: usize, yp: usize) -> Result<Interval, BoundsError> {
    check_query(d, x, xp, y, yp)?;
    let alpha = frechet_alpha(d, x, xp, y)?;
    let p_yp_xp = d.p_y_given_x(yp, xp)?;
    if p_yp_xp <= 0.0 {
        return Err(BoundsError::ZeroMass { event: format!("X={xp}, Y={yp}") });
    }
    let l = f64::max(0.0, (alpha.lo - (1.0 - p_yp_xp)) / p_yp_xp);
    let r = f64::min(1.0, alpha.hi / p_yp_xp);
    Interval::new(l, r)
}

/// Observational plus counterfactual data: the measured P(y_x | x')
/// replaces the first Fréchet round, leaving a single round with interval
/// [l', r'] nested inside [l, r].
pub fn nte_bounds_l25(d: &BowData, x: usize, xp: usize, y: usize, yp: usize) -> Result<Interval, BoundsError> {
    check_query(d, x, xp, y, yp)?;
    let p_yx_xp = d.p_y_do_x_given_xp(y, x, xp)?;
    let p_yp_xp = d.p_y_given_x(yp, xp)?;
    if p_yp_xp <= 0.0 {
        return Err(BoundsError::ZeroMass { event: format!("X={xp}, Y={yp}") });
    }
    let l = f64::max(0.0, (p_yx_xp - (1.0 - p_yp_xp)) / p_yp_xp);
    let r = f64::min(1.0, p_yx_xp / p_yp_xp);
    Interval::new(l, r)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// The two-arm study data reused across the crate: P(X=1) = 0.85,
    /// P(Y=1|X=0) = 0.35, P(Y=1|X=1) = 0.15, P(Y=1; do(X=0)) = 0.605,
    /// P(Y=1; do(X=1)) = 0.225, and both cross-world conditionals equal
    /// to 0.65.
    pub(crate) fn study_data() -> BowData {
        let obs = vec![vec![0.0975, 0.0525], vec![0.7225, 0.1275]];
        let exp = vec![vec![0.395, 0.605], vec![0.775, 0.225]];
        let ctf = vec![
            vec![vec![0.65, 0.35], vec![0.35, 0.65]],
            vec![vec![0.35, 0.65], vec![0.85, 0.15]],
        ];
        BowData::new(obs, Some(exp), Some(ctf)).unwrap()
    }

    #[test]
    fn construction_rejects_malformed_tables() {
        assert!(BowData::observational_only(vec![vec![1.0]]).is_err());
        assert!(BowData::observational_only(vec![vec![0.5, 0.4], vec![0.2, 0.2]]).is_err());
        assert!(BowData::new(
            vec![vec![0.25; 2]; 2],
            Some(vec![vec![0.9, 0.2], vec![0.5, 0.5]]),
            None,
        )
        .is_err());
        assert!(BowData::new(vec![vec![0.25; 2]; 2], None, Some(vec![vec![vec![0.5; 2]; 2]; 3]))
            .is_err());
    }

    #[test]
    fn accessors_normalize_and_guard_zero_mass() {
        let d = study_data();
        assert!((d.p_x(0).unwrap() - 0.15).abs() < 1e-12);
        assert!((d.p_y_given_x(1, 0).unwrap() - 0.35).abs() < 1e-12);
        assert!((d.p_y_do_x(1, 1).unwrap() - 0.225).abs() < 1e-12);
        assert!((d.p_y_do_x_given_xp(1, 1, 0).unwrap() - 0.65).abs() < 1e-12);

        let degenerate =
            BowData::observational_only(vec![vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            degenerate.p_y_given_x(0, 0),
            Err(BoundsError::ZeroMass { .. })
        ));
    }

    #[test]
    fn observational_bounds_are_always_vacuous() {
        let d = study_data();
        assert_eq!(nte_bounds_l1(&d, 1, 0, 1, 1).unwrap(), Interval::unit());
        let degenerate =
            BowData::observational_only(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(nte_bounds_l1(&degenerate, 0, 1, 1, 0).unwrap(), Interval::unit());
    }

    #[test]
    fn query_validation_rejects_equal_arms_and_bad_indices() {
        let d = study_data();
        assert!(matches!(nte_bounds_l1(&d, 1, 1, 1, 1), Err(BoundsError::SameArm { x: 1 })));
        assert!(matches!(
            nte_bounds_l2(&d, 2, 0, 1, 1),
            Err(BoundsError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            nte_bounds_l25(&d, 1, 0, 1, 2),
            Err(BoundsError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn study_data_plugs_into_the_displayed_formulas() {
        let d = study_data();

        let alpha = frechet_alpha(&d, 1, 0, 1).unwrap();
        assert_eq!(alpha, Interval::unit());

        let l2 = nte_bounds_l2(&d, 1, 0, 1, 1).unwrap();
        assert_eq!(l2, Interval::unit());

        let l25 = nte_bounds_l25(&d, 1, 0, 1, 1).unwrap();
        assert!(l25.lo.abs() < 1e-12);
        assert!((l25.hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn informative_arms_put_every_endpoint_in_the_interior() {
        let obs = vec![vec![0.06, 0.54], vec![0.10, 0.30]];
        let exp = vec![vec![0.26, 0.74], vec![0.52, 0.48]];
        let ctf = vec![
            vec![vec![0.1, 0.9], vec![0.5, 0.5]],
            vec![vec![0.7, 0.3], vec![0.25, 0.75]],
        ];
        let d = BowData::new(obs, Some(exp), Some(ctf)).unwrap();

        let alpha = frechet_alpha(&d, 1, 0, 1).unwrap();
        assert!((alpha.lo - 0.08 / 0.6).abs() < 1e-12);
        assert!((alpha.hi - 0.8).abs() < 1e-12);

        let l2 = nte_bounds_l2(&d, 1, 0, 1, 1).unwrap();
        assert!((l2.lo - (0.08 / 0.6 - 0.1) / 0.9).abs() < 1e-12);
        assert!((l2.hi - 0.8 / 0.9).abs() < 1e-12);

        let l25 = nte_bounds_l25(&d, 1, 0, 1, 1).unwrap();
        assert!((l25.lo - 0.2 / 0.9).abs() < 1e-12);
        assert!((l25.hi - 0.3 / 0.9).abs() < 1e-12);
        assert!(l25.is_subset_of(&l2, 1e-12));
    }

    #[test]
    fn deterministic_experiment_collapses_alpha_to_a_point() {
        let obs = vec![vec![0.3, 0.1], vec![0.45, 0.15]];
        let exp = vec![vec![0.6, 0.4], vec![0.0, 1.0]];
        let d = BowData::new(obs, Some(exp), None).unwrap();
        let alpha = frechet_alpha(&d, 1, 0, 1).unwrap();
        assert!((alpha.lo - 1.0).abs() < 1e-12);
        assert!((alpha.hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_counterfactual_value_gives_a_zero_lower_endpoint() {
        let d = study_data();
        let l25 = nte_bounds_l25(&d, 1, 0, 1, 1).unwrap();
        assert_eq!(l25.lo, 0.0);
    }

    #[test]
    fn missing_tiers_are_reported_by_name() {
        let d = BowData::observational_only(vec![vec![0.25; 2]; 2]).unwrap();
        assert!(matches!(
            nte_bounds_l2(&d, 1, 0, 1, 1),
            Err(BoundsError::MissingTier { tier: "experimental" })
        ));
        assert!(matches!(
            nte_bounds_l25(&d, 1, 0, 1, 1),
            Err(BoundsError::MissingTier { tier: "counterfactual" })
        ));
    }
}
