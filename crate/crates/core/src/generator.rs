//! The wealth driver `g(t, y, z, s)`.
//!
//! Wealth drifts by `-g dt`, so a generator that earns interest on positive cash is
//! negative there. The cash position of a wealth `y` holding `z` units of the asset
//! at price `s` is `y - z*s`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::Lattice;

/// User-supplied driver: `(t, y, z, s) -> g`.
pub type DriverFn = dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync;

/// A custom driver with declared Lipschitz bounds.
///
/// `lipschitz_y` bounds `|g(t,y2,z,s) - g(t,y1,z,s)| / |y2 - y1|`; `lipschitz_z` bounds
/// `|g(t,y,z2,s) - g(t,y,z1,s)| / (s * |z2 - z1|)`, i.e. it is measured per unit of cash
/// moved into the asset, like the funding rates of the builtins.
#[derive(Clone)]
pub struct CustomGenerator {
    pub name: String,
    pub lipschitz_y: f64,
    pub lipschitz_z: f64,
    pub driver: Arc<DriverFn>,
}

impl fmt::Debug for CustomGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomGenerator")
            .field("name", &self.name)
            .field("lipschitz_y", &self.lipschitz_y)
            .field("lipschitz_z", &self.lipschitz_z)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Generator {
    Zero,
    LinearRate { r: f64 },
    DifferentialRates { r_lend: f64, r_borrow: f64 },
    Custom(CustomGenerator),
}

impl Generator {
    pub fn linear(r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidGenerator(format!(
                "rate must be finite and >= 0, got {r}"
            )));
        }
        Ok(Generator::LinearRate { r })
    }

    pub fn differential(r_lend: f64, r_borrow: f64) -> Result<Self> {
        if !(r_lend.is_finite() && r_borrow.is_finite() && r_lend >= 0.0 && r_borrow >= 0.0) {
            return Err(Error::InvalidGenerator(format!(
                "rates must be finite and >= 0, got r_lend = {r_lend}, r_borrow = {r_borrow}"
            )));
        }
        Ok(Generator::DifferentialRates { r_lend, r_borrow })
    }

    pub fn custom(
        name: impl Into<String>,
        lipschitz_y: f64,
        lipschitz_z: f64,
        driver: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        for (label, v) in [("lipschitz_y", lipschitz_y), ("lipschitz_z", lipschitz_z)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidGenerator(format!(
                    "{label} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Generator::Custom(CustomGenerator {
            name: name.into(),
            lipschitz_y,
            lipschitz_z,
            driver: Arc::new(driver),
        }))
    }

    /// Evaluates the driver without input checks; the hot path of every solver.
    #[inline]
    pub fn eval(&self, t: f64, y: f64, z: f64, s: f64) -> f64 {
        match self {
            Generator::Zero => 0.0,
            Generator::LinearRate { r } => -r * (y - z * s),
            Generator::DifferentialRates { r_lend, r_borrow } => {
                let cash = y - z * s;
                if cash >= 0.0 {
                    -r_lend * cash
                } else {
                    -r_borrow * cash
                }
            }
            Generator::Custom(c) => (c.driver)(t, y, z, s),
        }
    }

    pub fn lipschitz_y(&self) -> f64 {
        match self {
            Generator::Zero => 0.0,
            Generator::LinearRate { r } => *r,
            Generator::DifferentialRates { r_lend, r_borrow } => r_lend.max(*r_borrow),
            Generator::Custom(c) => c.lipschitz_y,
        }
    }

    pub fn lipschitz_z(&self) -> f64 {
        match self {
            Generator::Custom(c) => c.lipschitz_z,
            other => other.lipschitz_y(),
        }
    }

    /// Whether `g(t, -y, -z, s) = -g(t, y, z, s)` holds identically.
    pub fn is_odd(&self) -> bool {
        match self {
            Generator::Zero | Generator::LinearRate { .. } => true,
            Generator::DifferentialRates { r_lend, r_borrow } => r_lend == r_borrow,
            Generator::Custom(_) => false,
        }
    }
}

/// Checked evaluation of the driver.
pub fn eval_g(gen: &Generator, t: f64, y: f64, z: f64, s: f64) -> Result<f64> {
    if !(t.is_finite() && y.is_finite() && z.is_finite() && s.is_finite()) {
        return Err(Error::NonFiniteInput(format!(
            "generator evaluated at (t, y, z, s) = ({t}, {y}, {z}, {s})"
        )));
    }
    let g = gen.eval(t, y, z, s);
    if !g.is_finite() {
        return Err(Error::NonFiniteInput(format!(
            "generator returned {g} at (t, y, z, s) = ({t}, {y}, {z}, {s})"
        )));
    }
    Ok(g)
}

/// Whether the implicit one-step equation in `y` is a contraction: `dt * lipschitz_y < 1`.
///
/// The asset level `s_max` enters only through the `z`-sensitivity, which scales with `s` in
/// both the driver bound and the hedge ratio's denominator and therefore cancels; it is kept
/// in the signature so callers can pass the lattice maximum without caring.
pub fn contraction_ok(gen: &Generator, dt: f64, _s_max: f64) -> bool {
    dt > 0.0 && dt * gen.lipschitz_y() < 1.0
}

/// Whether the one-step scheme is strictly increasing in both continuation values.
///
/// Differentiating `Y = q Yu + (1-q) Yd + g(Y, Z) dt` with `Z = (Yu - Yd) / (S (u - d))`
/// gives weights `(q ± g_z dt / (S (u - d))) / (1 - g_y dt)`; with `|g_z| <= lipschitz_z * S`
/// both stay positive iff `dt * lipschitz_z < (u - d) * min(q, 1 - q)`.
pub fn scheme_monotone(gen: &Generator, lat: &Lattice) -> bool {
    let q = lat.q();
    lat.dt() * gen.lipschitz_z() < (lat.up() - lat.down()) * q.min(1.0 - q)
}

/// Refuses generators under which the discrete scheme loses contraction or monotonicity.
pub fn check_admissible(gen: &Generator, lat: &Lattice) -> Result<()> {
    if !contraction_ok(gen, lat.dt(), lat.max_price()) {
        return Err(Error::ContractionViolated(format!(
            "dt * lipschitz_y = {} * {} >= 1",
            lat.dt(),
            gen.lipschitz_y()
        )));
    }
    if !scheme_monotone(gen, lat) {
        let q = lat.q();
        return Err(Error::ContractionViolated(format!(
            "dt * lipschitz_z = {} is not below (u - d) * min(q, 1 - q) = {}; the scheme would not be monotone",
            lat.dt() * gen.lipschitz_z(),
            (lat.up() - lat.down()) * q.min(1.0 - q)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lattice, TimeGrid};
    use proptest::prelude::*;

    #[test]
    fn zero_is_zero() {
        assert_eq!(Generator::Zero.eval(0.3, 5.0, -2.0, 100.0), 0.0);
    }

    #[test]
    fn differential_positive_cash() {
        let g = Generator::differential(0.02, 0.10).unwrap();
        let v = eval_g(&g, 0.0, 5.0, -0.5, 100.0).unwrap();
        assert!((v + 1.1).abs() < 1e-15);
    }

    #[test]
    fn differential_negative_cash_pays_borrow_rate() {
        let g = Generator::differential(0.02, 0.10).unwrap();
        // cash = 5 - 1 * 100 = -95
        let v = g.eval(0.0, 5.0, 1.0, 100.0);
        assert!((v - 9.5).abs() < 1e-13);
    }

    #[test]
    fn eval_rejects_non_finite() {
        let g = Generator::linear(0.05).unwrap();
        assert!(matches!(
            eval_g(&g, 0.0, f64::NAN, 0.0, 1.0),
            Err(Error::NonFiniteInput(_))
        ));
        let bad = Generator::custom("inf", 0.0, 0.0, |_, _, _, _| f64::INFINITY).unwrap();
        assert!(eval_g(&bad, 0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn contraction_examples() {
        assert!(contraction_ok(&Generator::Zero, 10.0, 1.0));
        assert!(contraction_ok(
            &Generator::differential(0.02, 0.10).unwrap(),
            1.0,
            120.0
        ));
        assert!(!contraction_ok(
            &Generator::differential(0.0, 12.0).unwrap(),
            0.1,
            120.0
        ));
    }

    #[test]
    fn monotonicity_check() {
        let lat = build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 1).unwrap()).unwrap();
        // (u - d) * min(q, 1-q) = 0.4 * 0.5 = 0.2
        assert!(scheme_monotone(&Generator::linear(0.19).unwrap(), &lat));
        assert!(!scheme_monotone(&Generator::linear(0.21).unwrap(), &lat));
        assert!(matches!(
            check_admissible(&Generator::linear(0.5).unwrap(), &lat),
            Err(Error::ContractionViolated(_))
        ));
    }

    #[test]
    fn rejects_bad_declarations() {
        assert!(Generator::custom("x", -1.0, 0.0, |_, _, _, _| 0.0).is_err());
        assert!(Generator::custom("x", 0.0, f64::NAN, |_, _, _, _| 0.0).is_err());
        assert!(Generator::differential(-0.1, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn builtins_lipschitz_in_y(
            rl in 0.0f64..0.5, extra in 0.0f64..0.5,
            y1 in -1e3f64..1e3, y2 in -1e3f64..1e3, z in -10.0f64..10.0, s in 1.0f64..500.0,
        ) {
            let g = Generator::differential(rl, rl + extra).unwrap();
            let l = g.lipschitz_y();
            let d = g.eval(0.0, y2, z, s) - g.eval(0.0, y1, z, s);
            prop_assert!(d * (y2 - y1) <= l * (y2 - y1).powi(2) * (1.0 + 1e-12) + 1e-12);
            prop_assert!(d.abs() <= l * (y2 - y1).abs() * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn builtins_lipschitz_in_z(
            rl in 0.0f64..0.5, extra in 0.0f64..0.5,
            y in -1e3f64..1e3, z1 in -10.0f64..10.0, z2 in -10.0f64..10.0, s in 1.0f64..500.0,
        ) {
            let g = Generator::differential(rl, rl + extra).unwrap();
            let d = g.eval(0.0, y, z2, s) - g.eval(0.0, y, z1, s);
            prop_assert!(d.abs() <= g.lipschitz_z() * s * (z2 - z1).abs() * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn equal_rates_are_linear(
            r in 0.0f64..0.5, y in -1e3f64..1e3, z in -10.0f64..10.0, s in 1.0f64..500.0,
        ) {
            let a = Generator::differential(r, r).unwrap().eval(0.0, y, z, s);
            let b = Generator::linear(r).unwrap().eval(0.0, y, z, s);
            prop_assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }
}
