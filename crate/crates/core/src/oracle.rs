//! Exhaustive Dynkin-game solver on small trees.
//!
//! Stopping rules are node markings whose first hit along a path is the stopping step. The
//! minimizer's stop pays the upper obstacle, the maximizer's the lower one (see
//! [`GamePayoff`]). Every pair of rules is evaluated with the same implicit step as the
//! reflected solver, but without any reflection, so the two routes share only the one-step
//! g-evaluation.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::drbsde::{stopped_value, DrbsdeInputs, Dynamics, GamePayoff};
use crate::error::{Error, Result};
use crate::model::{node_count, node_index, nodes, Lattice, Path};

/// Largest number of non-terminal nodes the enumeration accepts (2^15 rules per player).
pub const MAX_ENUM_NODES: usize = 15;
/// Above this many rule pairs the upper and lower values come from best-response induction.
pub const FULL_MATRIX_PAIR_LIMIT: u64 = 10_000_000;

/// A node marking; the terminal row is always marked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingRule {
    steps: usize,
    marked: Vec<bool>,
}

impl StoppingRule {
    /// Marks nodes where `f` holds, plus the whole terminal row.
    pub fn from_fn(steps: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let marked = nodes(steps).map(|(k, j)| k == steps || f(k, j)).collect();
        Self { steps, marked }
    }

    /// Builds a rule from an explicit marking in flat node order.
    pub fn from_marks(steps: usize, marked: Vec<bool>) -> Result<Self> {
        if marked.len() != node_count(steps) {
            return Err(Error::ShapeMismatch(format!(
                "{} marks for a {steps}-step tree",
                marked.len()
            )));
        }
        if (0..=steps).any(|j| !marked[node_index(steps, j)]) {
            return Err(Error::InvalidStoppingRule(
                "every terminal node must be marked".into(),
            ));
        }
        Ok(Self { steps, marked })
    }

    /// Stops only at maturity.
    pub fn terminal_only(steps: usize) -> Self {
        Self::from_fn(steps, |_, _| false)
    }

    /// Rule whose interior marks are the bits of `mask` in flat node order.
    pub fn from_mask(steps: usize, mask: u64) -> Self {
        Self::from_fn(steps, |k, j| (mask >> node_index(k, j)) & 1 == 1)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn is_marked(&self, k: usize, j: usize) -> bool {
        self.marked[node_index(k, j)]
    }

    pub fn marks(&self) -> &[bool] {
        &self.marked
    }

    /// Marked non-terminal nodes in flat order.
    pub fn interior_marked(&self) -> Vec<(usize, usize)> {
        nodes(self.steps)
            .filter(|&(k, j)| k < self.steps && self.is_marked(k, j))
            .collect()
    }

    /// Step at which the rule stops along `path`.
    pub fn hit_step(&self, path: &Path) -> usize {
        (0..self.steps)
            .find(|&k| self.is_marked(k, path.up_count(k)))
            .unwrap_or(self.steps)
    }

    pub fn check_for(&self, steps: usize) -> Result<()> {
        if self.steps != steps || self.marked.len() != node_count(steps) {
            return Err(Error::ShapeMismatch(format!(
                "stopping rule has {} steps, expected {steps}",
                self.steps
            )));
        }
        if (0..=steps).any(|j| !self.is_marked(steps, j)) {
            return Err(Error::InvalidStoppingRule(
                "every terminal node must be marked".into(),
            ));
        }
        Ok(())
    }
}

fn interior_count(lat: &Lattice) -> usize {
    lat.interior_node_count()
}

fn guard(steps: usize) -> Result<usize> {
    let m = node_count(steps - 1);
    if m > MAX_ENUM_NODES {
        let rules = 1u128.checked_shl(m as u32);
        return Err(Error::TooLarge {
            nodes: m,
            rules,
            limit: MAX_ENUM_NODES,
        });
    }
    Ok(m)
}

/// All `2^(non-terminal nodes)` stopping rules, in mask order.
pub fn enumerate_rules(lat: &Lattice) -> Result<Vec<StoppingRule>> {
    let m = guard(lat.steps())?;
    debug_assert_eq!(m, interior_count(lat));
    Ok((0..1u64 << m)
        .map(|mask| StoppingRule::from_mask(lat.steps(), mask))
        .collect())
}

/// How the values of a [`GameValueReport`] were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    /// Every (minimizer, maximizer) pair was evaluated.
    FullMatrix,
    /// One best-response induction per rule of the outer player.
    BestResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameValueReport {
    /// inf over minimizer rules of sup over maximizer rules.
    pub upper_value: f64,
    /// sup over maximizer rules of inf over minimizer rules.
    pub lower_value: f64,
    /// Minimizer rule attaining the upper value.
    pub argmin_sigma: StoppingRule,
    /// Maximizer rule attaining the lower value.
    pub argmax_tau: StoppingRule,
    /// Rules per player.
    pub rule_count: usize,
    pub method: OracleMethod,
}

/// Canonical order among equally good rules: fewer marks first, then the lexicographically
/// smallest list of marked flat indices.
fn canonical_cmp(a: u64, b: u64) -> Ordering {
    a.count_ones().cmp(&b.count_ones()).then_with(|| {
        let (mut x, mut y) = (a, b);
        while x != 0 && y != 0 {
            let (i, j) = (x.trailing_zeros(), y.trailing_zeros());
            if i != j {
                return i.cmp(&j);
            }
            x &= x - 1;
            y &= y - 1;
        }
        Ordering::Equal
    })
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * (1.0 + v.abs())
}

/// Picks the canonical mask among those whose value is within tolerance of `best`.
fn select(values: &[f64], best: f64) -> u64 {
    (0..values.len() as u64)
        .filter(|&m| (values[m as usize] - best).abs() <= tie_tol(best))
        .min_by(|&a, &b| canonical_cmp(a, b))
        .expect("the optimum is attained by some rule")
}

#[inline]
fn mask_marks(mask: u64, steps: usize, k: usize, j: usize) -> bool {
    k == steps || (mask >> node_index(k, j)) & 1 == 1
}

/// Value of the game for the maximizer's best response to a fixed minimizer marking.
fn best_response_max(
    dynamics: &Dynamics,
    payoff: &GamePayoff,
    buf: &mut [f64],
    min_marks: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    let n = dynamics.steps();
    for (j, slot) in buf.iter_mut().enumerate().take(n + 1) {
        *slot = payoff.tie.get(n, j);
    }
    for k in (0..n).rev() {
        for j in 0..=k {
            buf[j] = if min_marks(k, j) {
                payoff.tie.get(k, j).max(payoff.upper.get(k, j))
            } else {
                let cont = dynamics.implicit_step(k, j, buf[j + 1], buf[j])?.y;
                payoff.lower.get(k, j).max(cont)
            };
        }
    }
    Ok(buf[0])
}

/// Value of the game for the minimizer's best response to a fixed maximizer marking.
fn best_response_min(
    dynamics: &Dynamics,
    payoff: &GamePayoff,
    buf: &mut [f64],
    max_marks: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    let n = dynamics.steps();
    for (j, slot) in buf.iter_mut().enumerate().take(n + 1) {
        *slot = payoff.tie.get(n, j);
    }
    for k in (0..n).rev() {
        for j in 0..=k {
            buf[j] = if max_marks(k, j) {
                payoff.tie.get(k, j).min(payoff.lower.get(k, j))
            } else {
                let cont = dynamics.implicit_step(k, j, buf[j + 1], buf[j])?.y;
                payoff.upper.get(k, j).min(cont)
            };
        }
    }
    Ok(buf[0])
}

/// `sup` over maximizer rules of the stopped value against a fixed minimizer rule.
///
/// Works on trees of any size; no enumeration is involved.
pub fn maximizer_best_response(
    dynamics: &Dynamics,
    payoff: &GamePayoff,
    minimizer: &StoppingRule,
) -> Result<f64> {
    let n = dynamics.steps();
    minimizer.check_for(n)?;
    dynamics.check_admissible()?;
    let mut buf = vec![0.0; n + 1];
    best_response_max(dynamics, payoff, &mut buf, |k, j| minimizer.is_marked(k, j))
}

/// `inf` over minimizer rules of the stopped value against a fixed maximizer rule.
pub fn minimizer_best_response(
    dynamics: &Dynamics,
    payoff: &GamePayoff,
    maximizer: &StoppingRule,
) -> Result<f64> {
    let n = dynamics.steps();
    maximizer.check_for(n)?;
    dynamics.check_admissible()?;
    let mut buf = vec![0.0; n + 1];
    best_response_min(dynamics, payoff, &mut buf, |k, j| maximizer.is_marked(k, j))
}

fn prepare(inputs: &DrbsdeInputs) -> Result<usize> {
    let m = guard(inputs.steps())?;
    inputs.payoff.validate()?;
    inputs.dynamics.check_admissible()?;
    Ok(m)
}

fn report(
    steps: usize,
    rule_count: usize,
    row_sup: &[f64],
    col_inf: &[f64],
    method: OracleMethod,
) -> GameValueReport {
    let upper_value = row_sup.iter().copied().fold(f64::INFINITY, f64::min);
    let lower_value = col_inf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    GameValueReport {
        upper_value,
        lower_value,
        argmin_sigma: StoppingRule::from_mask(steps, select(row_sup, upper_value)),
        argmax_tau: StoppingRule::from_mask(steps, select(col_inf, lower_value)),
        rule_count,
        method,
    }
}

/// Upper and lower values of the game by exhaustive enumeration of pure stopping rules.
///
/// Up to [`FULL_MATRIX_PAIR_LIMIT`] pairs the whole payoff matrix is evaluated; beyond that
/// each rule of one player is paired with the other player's best response by induction.
pub fn game_value_brute(inputs: &DrbsdeInputs) -> Result<GameValueReport> {
    let m = prepare(inputs)?;
    let rules = 1u64 << m;
    if rules * rules > FULL_MATRIX_PAIR_LIMIT {
        return induction(inputs, m);
    }
    let n = inputs.steps();
    let dynamics = &inputs.dynamics;
    let payoff = &inputs.payoff;
    let matrix: Vec<Vec<f64>> = (0..rules)
        .into_par_iter()
        .map(|smask| {
            let mut buf = vec![0.0; n + 1];
            (0..rules)
                .map(|tmask| {
                    stopped_value(dynamics, payoff, &mut buf, |k, j| {
                        (mask_marks(smask, n, k, j), mask_marks(tmask, n, k, j))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let row_sup: Vec<f64> = matrix
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let col_inf: Vec<f64> = (0..rules as usize)
        .map(|t| {
            matrix
                .iter()
                .map(|row| row[t])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(report(
        n,
        rules as usize,
        &row_sup,
        &col_inf,
        OracleMethod::FullMatrix,
    ))
}

/// Same values as [`game_value_brute`], always via best-response induction.
pub fn game_value_by_induction(inputs: &DrbsdeInputs) -> Result<GameValueReport> {
    let m = prepare(inputs)?;
    induction(inputs, m)
}

fn induction(inputs: &DrbsdeInputs, m: usize) -> Result<GameValueReport> {
    let n = inputs.steps();
    let rules = 1u64 << m;
    let dynamics = &inputs.dynamics;
    let payoff = &inputs.payoff;
    let row_sup: Vec<f64> = (0..rules)
        .into_par_iter()
        .map_init(
            || vec![0.0; n + 1],
            |buf, smask| {
                best_response_max(dynamics, payoff, buf, |k, j| mask_marks(smask, n, k, j))
            },
        )
        .collect::<Result<_>>()?;
    let col_inf: Vec<f64> = (0..rules)
        .into_par_iter()
        .map_init(
            || vec![0.0; n + 1],
            |buf, tmask| {
                best_response_min(dynamics, payoff, buf, |k, j| mask_marks(tmask, n, k, j))
            },
        )
        .collect::<Result<_>>()?;
    Ok(report(
        n,
        rules as usize,
        &row_sup,
        &col_inf,
        OracleMethod::BestResponse,
    ))
}

/// Agreement flags between the reflected solution and the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaddleDiagnosis {
    pub matches_upper: bool,
    pub has_value: bool,
}

pub fn saddle_check(report: &GameValueReport, y0: f64, tol: f64) -> SaddleDiagnosis {
    SaddleDiagnosis {
        matches_upper: (y0 - report.upper_value).abs() <= tol,
        has_value: (report.upper_value - report.lower_value).abs() <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drbsde::{evaluate_stopped, solve_drbsde};
    use crate::generator::Generator;
    use crate::model::{build_lattice, NodeProcess, TimeGrid};

    fn put_inputs(steps: usize, penalty: f64) -> DrbsdeInputs {
        let lat = build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, steps).unwrap()).unwrap();
        let lower = NodeProcess::from_prices(&lat, |_, _, s| (100.0 - s).max(0.0));
        let upper = lower.map(|_, _, v| v + penalty);
        let tie = lower.clone();
        DrbsdeInputs::new(
            Dynamics::without_cashflow(lat, Generator::Zero),
            GamePayoff { lower, upper, tie },
        )
        .unwrap()
    }

    #[test]
    fn rule_counts() {
        for (n, count) in [(1, 2), (2, 8), (5, 32768)] {
            let lat = build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, n).unwrap()).unwrap();
            assert_eq!(enumerate_rules(&lat).unwrap().len(), count);
        }
        let lat = build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 6).unwrap()).unwrap();
        assert!(matches!(
            enumerate_rules(&lat),
            Err(Error::TooLarge { nodes: 21, .. })
        ));
    }

    #[test]
    fn terminal_row_forced() {
        assert!(matches!(
            StoppingRule::from_marks(1, vec![true, false, true]),
            Err(Error::InvalidStoppingRule(_))
        ));
        let r = StoppingRule::from_marks(1, vec![false, true, true]).unwrap();
        assert_eq!(r, StoppingRule::terminal_only(1));
    }

    #[test]
    fn instance_a() {
        let inputs = put_inputs(1, 5.0);
        let rep = game_value_brute(&inputs).unwrap();
        assert_eq!(rep.upper_value, 5.0);
        assert_eq!(rep.lower_value, 5.0);
        assert_eq!(rep.argmin_sigma.interior_marked(), vec![(0, 0)]);
        assert_eq!(rep.argmax_tau, StoppingRule::terminal_only(1));
        let d = saddle_check(&rep, 5.0, 1e-10);
        assert!(d.matches_upper && d.has_value);
        assert!(!saddle_check(&rep, 4.9, 1e-10).matches_upper);
    }

    #[test]
    fn large_penalty_gives_american_value() {
        let rep = game_value_brute(&put_inputs(1, 30.0)).unwrap();
        assert_eq!(rep.upper_value, 10.0);
        assert_eq!(rep.lower_value, 10.0);
        assert_eq!(rep.argmin_sigma, StoppingRule::terminal_only(1));
    }

    #[test]
    fn induction_agrees_with_matrix() {
        for n in 1..=4 {
            let inputs = put_inputs(n, 3.0);
            let a = game_value_brute(&inputs).unwrap();
            let b = game_value_by_induction(&inputs).unwrap();
            assert_eq!(a.method, OracleMethod::FullMatrix);
            assert!((a.upper_value - b.upper_value).abs() < 1e-12);
            assert!((a.lower_value - b.lower_value).abs() < 1e-12);
            assert_eq!(a.argmin_sigma, b.argmin_sigma);
            let y0 = solve_drbsde(&inputs).unwrap().y0();
            assert!((a.upper_value - y0).abs() < 1e-10);
        }
    }

    #[test]
    fn best_response_attains_sup() {
        let inputs = put_inputs(3, 2.0);
        let lat = inputs.lattice().clone();
        let rules = enumerate_rules(&lat).unwrap();
        let sigma = &rules[5];
        let sup = rules
            .iter()
            .map(|t| evaluate_stopped(&inputs.dynamics, sigma, t, &inputs.payoff).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let dp = maximizer_best_response(&inputs.dynamics, &inputs.payoff, sigma).unwrap();
        assert!((sup - dp).abs() < 1e-12);
    }

    #[test]
    fn canonical_order() {
        assert_eq!(canonical_cmp(0b1, 0b11), Ordering::Less);
        assert_eq!(canonical_cmp(0b101, 0b110), Ordering::Less);
        assert_eq!(canonical_cmp(0b110, 0b101), Ordering::Greater);
        assert_eq!(canonical_cmp(0, 0), Ordering::Equal);
    }
}
