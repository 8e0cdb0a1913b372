//! Backward solvers on the lattice: plain BSDE (g-evaluation), doubly reflected BSDE, and
//! the stopped evaluation used by the game oracle.
//!
//! One step from row `k+1` to node `(k, j)`:
//!
//! ```text
//! Z = (Y(k+1, j+1) - Y(k+1, j)) / (S(k+1, j+1) - S(k+1, j))
//! Y = q Y(k+1, j+1) + (1 - q) Y(k+1, j) + g(t_k, Y, Z, S(k, j)) dt - dA(k, j)
//! ```
//!
//! The second line is implicit in `Y` and solved by Picard iteration. Because `g` is
//! evaluated at `Y(k)`, running the same step forward from `Y(k)` with hedge `Z(k)`
//! reproduces `Y(k+1)` on both branches up to round-off.
//!
//! `dA(k, j)` is the cashflow paid over the step from `k` to `k+1`, so the terminal row of a
//! cashflow process must be zero.

use crate::error::{Error, Result};
use crate::generator::{check_admissible, Generator};
use crate::model::{nodes, Lattice, NodeProcess};
use crate::oracle::StoppingRule;

/// Relative tolerance of the implicit one-step solve.
pub const PICARD_TOL: f64 = 1e-12;
/// Iteration cap of the implicit one-step solve.
pub const PICARD_MAX_ITER: usize = 200;

/// Lattice, driver and cashflow: everything a backward step needs besides boundary data.
#[derive(Debug, Clone)]
pub struct Dynamics {
    lattice: Lattice,
    generator: Generator,
    cashflow: NodeProcess,
}

/// Outcome of one implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub y: f64,
    pub z: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl Dynamics {
    pub fn new(lattice: Lattice, generator: Generator, cashflow: NodeProcess) -> Result<Self> {
        let n = lattice.steps();
        cashflow.check_shape(n)?;
        cashflow.check_finite("cashflow increment")?;
        if cashflow.row(n).iter().any(|&a| a != 0.0) {
            return Err(Error::ContractInvariantViolated(
                "cashflow increments on the terminal row must be zero (no step follows T)".into(),
            ));
        }
        Ok(Self {
            lattice,
            generator,
            cashflow,
        })
    }

    /// Dynamics without cashflows.
    pub fn without_cashflow(lattice: Lattice, generator: Generator) -> Self {
        let n = lattice.steps();
        Self {
            lattice,
            generator,
            cashflow: NodeProcess::zeros(n),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn cashflow(&self) -> &NodeProcess {
        &self.cashflow
    }

    pub fn steps(&self) -> usize {
        self.lattice.steps()
    }

    /// Refuses generators that break contraction or monotonicity of the scheme.
    pub fn check_admissible(&self) -> Result<()> {
        check_admissible(&self.generator, &self.lattice)
    }

    /// Hedge ratio at `(k, j)` from the continuation values.
    #[inline]
    pub fn hedge_ratio(&self, k: usize, j: usize, up: f64, down: f64) -> f64 {
        (up - down) / (self.lattice.price(k + 1, j + 1) - self.lattice.price(k + 1, j))
    }

    /// Solves the implicit step at `(k, j)` given the two continuation values.
    pub fn implicit_step(&self, k: usize, j: usize, up: f64, down: f64) -> Result<Step> {
        let lat = &self.lattice;
        let q = lat.q();
        let dt = lat.dt();
        let t = lat.grid().time(k);
        let s = lat.price(k, j);
        let z = self.hedge_ratio(k, j, up, down);
        let base = q * up + (1.0 - q) * down - self.cashflow.get(k, j);
        let mut y = base;
        for it in 1..=PICARD_MAX_ITER {
            let next = base + self.generator.eval(t, y, z, s) * dt;
            if !next.is_finite() {
                return Err(Error::NonFiniteInput(format!(
                    "implicit step at node ({k},{j}) produced {next}"
                )));
            }
            let diff = (next - y).abs();
            y = next;
            if diff <= PICARD_TOL * y.abs().max(1.0) {
                let residual = (base + self.generator.eval(t, y, z, s) * dt - y).abs();
                return Ok(Step {
                    y,
                    z,
                    iterations: it,
                    residual,
                });
            }
        }
        let residual = (base + self.generator.eval(t, y, z, s) * dt - y).abs();
        Err(Error::NonConvergence {
            step: k,
            up_count: j,
            iterations: PICARD_MAX_ITER,
            residual,
        })
    }

    /// Explicit forward step of wealth `v` held at `(k, j)` with hedge `z`, moving up or down.
    #[inline]
    pub fn forward_step(&self, k: usize, j: usize, v: f64, z: f64, up_move: bool) -> f64 {
        let lat = &self.lattice;
        let s = lat.price(k, j);
        let s_next = if up_move {
            lat.price(k + 1, j + 1)
        } else {
            lat.price(k + 1, j)
        };
        v - self.generator.eval(lat.grid().time(k), v, z, s) * lat.dt()
            + z * (s_next - s)
            + self.cashflow.get(k, j)
    }
}

/// Output of [`solve_bsde`].
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub y: NodeProcess,
    pub z: NodeProcess,
    pub residual_max: f64,
    pub iterations_max: usize,
}

fn check_terminal(dynamics: &Dynamics, terminal: &[f64]) -> Result<()> {
    let n = dynamics.steps();
    if terminal.len() != n + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} terminal values for {} terminal nodes",
            terminal.len(),
            n + 1
        )));
    }
    if let Some((j, v)) = terminal.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!(
            "terminal value {v} at node {j}"
        )));
    }
    Ok(())
}

/// g-evaluation of `terminal` (indexed by terminal up-count) with the cashflows of `dynamics`.
pub fn solve_bsde(dynamics: &Dynamics, terminal: &[f64]) -> Result<BsdeSolution> {
    dynamics.check_admissible()?;
    check_terminal(dynamics, terminal)?;
    let n = dynamics.steps();
    let mut y = NodeProcess::zeros(n);
    let mut z = NodeProcess::zeros(n);
    for (j, &v) in terminal.iter().enumerate() {
        y.set(n, j, v);
    }
    let mut residual_max = 0.0f64;
    let mut iterations_max = 0usize;
    for k in (0..n).rev() {
        for j in 0..=k {
            let step = dynamics.implicit_step(k, j, y.get(k + 1, j + 1), y.get(k + 1, j))?;
            y.set(k, j, step.y);
            z.set(k, j, step.z);
            residual_max = residual_max.max(step.residual);
            iterations_max = iterations_max.max(step.iterations);
        }
    }
    Ok(BsdeSolution {
        y,
        z,
        residual_max,
        iterations_max,
    })
}

/// Payoff triple of a stopping game between a minimizer and a maximizer.
///
/// If the minimizer stops first the payoff is `upper`, if the maximizer stops first it is
/// `lower`, and on a simultaneous stop it is `tie`. The terminal row of `tie` is the terminal
/// condition of the reflected equation.
#[derive(Debug, Clone, PartialEq)]
pub struct GamePayoff {
    pub lower: NodeProcess,
    pub upper: NodeProcess,
    pub tie: NodeProcess,
}

impl GamePayoff {
    /// Payoff with the interior tie value set to the lower obstacle.
    pub fn from_terminal(lower: NodeProcess, upper: NodeProcess, terminal: &[f64]) -> Result<Self> {
        let n = lower.steps();
        if terminal.len() != n + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} terminal values for {} terminal nodes",
                terminal.len(),
                n + 1
            )));
        }
        let tie = lower.map(|k, j, v| if k == n { terminal[j] } else { v });
        Ok(Self { lower, upper, tie })
    }

    pub fn steps(&self) -> usize {
        self.lower.steps()
    }

    pub fn terminal(&self) -> &[f64] {
        self.tie.row(self.steps())
    }

    /// Payoff at `(k, j)` given which players stop there.
    #[inline]
    pub fn at(&self, k: usize, j: usize, min_stops: bool, max_stops: bool) -> Option<f64> {
        match (min_stops, max_stops) {
            (true, true) => Some(self.tie.get(k, j)),
            (true, false) => Some(self.upper.get(k, j)),
            (false, true) => Some(self.lower.get(k, j)),
            (false, false) => None,
        }
    }

    /// Node-wise checks: finite, strictly ordered obstacles, tie inside the band.
    pub fn validate(&self) -> Result<()> {
        let n = self.steps();
        self.upper.check_shape(n)?;
        self.tie.check_shape(n)?;
        self.lower.check_finite("lower obstacle")?;
        self.upper.check_finite("upper obstacle")?;
        self.tie.check_finite("tie payoff")?;
        for (k, j) in nodes(n) {
            let (lo, hi) = (self.lower.get(k, j), self.upper.get(k, j));
            if lo >= hi {
                return Err(Error::ObstacleOrderViolated {
                    step: k,
                    up_count: j,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        for j in 0..=n {
            let (lo, hi, v) = (
                self.lower.get(n, j),
                self.upper.get(n, j),
                self.tie.get(n, j),
            );
            if !(lo <= v && v <= hi) {
                return Err(Error::TerminalOutOfBand {
                    up_count: j,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        for k in 0..n {
            for j in 0..=k {
                let (lo, hi, v) = (
                    self.lower.get(k, j),
                    self.upper.get(k, j),
                    self.tie.get(k, j),
                );
                if !(lo <= v && v <= hi) {
                    return Err(Error::InvalidParameters(format!(
                        "tie payoff {v} outside [{lo}, {hi}] at node ({k},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Boundary data and dynamics of a doubly reflected BSDE.
#[derive(Debug, Clone)]
pub struct DrbsdeInputs {
    pub dynamics: Dynamics,
    pub payoff: GamePayoff,
}

impl DrbsdeInputs {
    pub fn new(dynamics: Dynamics, payoff: GamePayoff) -> Result<Self> {
        let n = dynamics.steps();
        payoff.lower.check_shape(n)?;
        payoff.upper.check_shape(n)?;
        payoff.tie.check_shape(n)?;
        Ok(Self { dynamics, payoff })
    }

    pub fn lattice(&self) -> &Lattice {
        self.dynamics.lattice()
    }

    pub fn steps(&self) -> usize {
        self.dynamics.steps()
    }

    pub fn lower(&self) -> &NodeProcess {
        &self.payoff.lower
    }

    pub fn upper(&self) -> &NodeProcess {
        &self.payoff.upper
    }

    pub fn terminal(&self) -> &[f64] {
        self.payoff.terminal()
    }
}

/// Solution of the reflected equation; `dl` pushes `Y` up, `du` pushes it down.
#[derive(Debug, Clone, PartialEq)]
pub struct DrbsdeSolution {
    pub y: NodeProcess,
    pub z: NodeProcess,
    pub dl: NodeProcess,
    pub du: NodeProcess,
    pub residual_max: f64,
    pub iterations_max: usize,
}

impl DrbsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y.get(0, 0)
    }
}

/// Backward induction with projection onto `[lower, upper]` after every implicit step.
pub fn solve_drbsde(inputs: &DrbsdeInputs) -> Result<DrbsdeSolution> {
    inputs.payoff.validate()?;
    let dynamics = &inputs.dynamics;
    dynamics.check_admissible()?;
    let n = dynamics.steps();
    let (lower, upper) = (inputs.lower(), inputs.upper());
    let mut y = NodeProcess::zeros(n);
    let mut z = NodeProcess::zeros(n);
    let mut dl = NodeProcess::zeros(n);
    let mut du = NodeProcess::zeros(n);
    for (j, &v) in inputs.terminal().iter().enumerate() {
        y.set(n, j, v);
    }
    let mut residual_max = 0.0f64;
    let mut iterations_max = 0usize;
    for k in (0..n).rev() {
        for j in 0..=k {
            let step = dynamics.implicit_step(k, j, y.get(k + 1, j + 1), y.get(k + 1, j))?;
            residual_max = residual_max.max(step.residual);
            iterations_max = iterations_max.max(step.iterations);
            let (lo, hi) = (lower.get(k, j), upper.get(k, j));
            let value = if step.y < lo {
                dl.set(k, j, lo - step.y);
                lo
            } else if step.y > hi {
                du.set(k, j, step.y - hi);
                hi
            } else {
                step.y
            };
            y.set(k, j, value);
            z.set(k, j, step.z);
        }
    }
    Ok(DrbsdeSolution {
        y,
        z,
        dl,
        du,
        residual_max,
        iterations_max,
    })
}

/// Root value of the game payoff when the minimizer and maximizer follow fixed rules.
///
/// Stopping rules act by first hit; where neither player stops, one implicit step is taken.
pub fn evaluate_stopped(
    dynamics: &Dynamics,
    minimizer: &StoppingRule,
    maximizer: &StoppingRule,
    payoff: &GamePayoff,
) -> Result<f64> {
    let n = dynamics.steps();
    minimizer.check_for(n)?;
    maximizer.check_for(n)?;
    payoff.lower.check_shape(n)?;
    dynamics.check_admissible()?;
    let mut buf = vec![0.0; n + 1];
    stopped_value(dynamics, payoff, &mut buf, |k, j| {
        (minimizer.is_marked(k, j), maximizer.is_marked(k, j))
    })
}

/// Backward recursion shared by [`evaluate_stopped`] and the oracle's enumeration.
///
/// `stops(k, j)` returns whether the minimizer and maximizer stop at the node; both must stop
/// on the terminal row. `buf` needs `steps + 1` slots.
pub(crate) fn stopped_value(
    dynamics: &Dynamics,
    payoff: &GamePayoff,
    buf: &mut [f64],
    stops: impl Fn(usize, usize) -> (bool, bool),
) -> Result<f64> {
    let n = dynamics.steps();
    for (j, slot) in buf.iter_mut().enumerate().take(n + 1) {
        *slot = payoff.tie.get(n, j);
    }
    for k in (0..n).rev() {
        for j in 0..=k {
            let (a, b) = stops(k, j);
            buf[j] = match payoff.at(k, j, a, b) {
                Some(v) => v,
                None => dynamics.implicit_step(k, j, buf[j + 1], buf[j])?.y,
            };
        }
    }
    Ok(buf[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lattice, Path, TimeGrid};

    fn lattice_a() -> Lattice {
        build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 1).unwrap()).unwrap()
    }

    fn put_payoff(lat: &Lattice, strike: f64, penalty: f64) -> GamePayoff {
        let lower = NodeProcess::from_prices(lat, |_, _, s| (strike - s).max(0.0));
        let upper = lower.map(|_, _, v| v + penalty);
        let tie = lower.clone();
        GamePayoff { lower, upper, tie }
    }

    #[test]
    fn bsde_one_step_expectation() {
        let dyn_ = Dynamics::without_cashflow(lattice_a(), Generator::Zero);
        let sol = solve_bsde(&dyn_, &[20.0, 0.0]).unwrap();
        assert_eq!(sol.y.get(0, 0), 10.0);
        assert_eq!(sol.z.get(0, 0), -0.5);
    }

    #[test]
    fn bsde_constant_is_fixed_point() {
        let lat = build_lattice(50.0, 1.1, 0.9, TimeGrid::new(2.0, 6).unwrap()).unwrap();
        let sol = solve_bsde(&Dynamics::without_cashflow(lat, Generator::Zero), &[3.5; 7]).unwrap();
        assert!(sol.y.values().iter().all(|&v| v == 3.5));
        assert!(sol.z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bsde_linear_rate_discount() {
        let r = 0.05;
        let c = 7.0;
        let dyn_ = Dynamics::without_cashflow(lattice_a(), Generator::linear(r).unwrap());
        let sol = solve_bsde(&dyn_, &[c, c]).unwrap();
        let expected = c / (1.0 + r);
        assert!((sol.y.get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn bsde_refuses_non_contracting_generator() {
        let dyn_ =
            Dynamics::without_cashflow(lattice_a(), Generator::differential(0.0, 12.0).unwrap());
        assert!(matches!(
            solve_bsde(&dyn_, &[0.0, 0.0]),
            Err(Error::ContractionViolated(_))
        ));
    }

    #[test]
    fn bsde_reports_non_convergence() {
        // Declared bounds pass the checks, but the driver is far from Lipschitz.
        let gen = Generator::custom("liar", 0.0, 0.0, |_, y, _, _| 10.0 * y + 1.0).unwrap();
        let dyn_ = Dynamics::without_cashflow(lattice_a(), gen);
        assert!(matches!(
            solve_bsde(&dyn_, &[1.0, 1.0]),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn drbsde_instance_a() {
        let lat = lattice_a();
        let inputs = DrbsdeInputs::new(
            Dynamics::without_cashflow(lat.clone(), Generator::Zero),
            put_payoff(&lat, 100.0, 5.0),
        )
        .unwrap();
        let sol = solve_drbsde(&inputs).unwrap();
        assert_eq!(sol.y0(), 5.0);
        assert_eq!(sol.du.get(0, 0), 5.0);
        assert_eq!(sol.dl.get(0, 0), 0.0);
        assert_eq!(sol.z.get(0, 0), -0.5);
        assert_eq!(sol.y.row(1), &[20.0, 0.0]);
    }

    #[test]
    fn drbsde_slack_matches_bsde() {
        let lat = build_lattice(100.0, 1.1, 0.92, TimeGrid::new(1.0, 8).unwrap()).unwrap();
        let gen = Generator::differential(0.01, 0.04).unwrap();
        let dyn_ = Dynamics::without_cashflow(lat.clone(), gen);
        let terminal: Vec<f64> = (0..=8)
            .map(|j| (lat.price(8, j) - 100.0).max(0.0))
            .collect();
        let bsde = solve_bsde(&dyn_, &terminal).unwrap();
        let payoff = GamePayoff::from_terminal(
            NodeProcess::constant(8, -1e6),
            NodeProcess::constant(8, 1e6),
            &terminal,
        )
        .unwrap();
        let sol = solve_drbsde(&DrbsdeInputs::new(dyn_, payoff).unwrap()).unwrap();
        assert_eq!(sol.y, bsde.y);
        assert!(sol.dl.values().iter().all(|&v| v == 0.0));
        assert!(sol.du.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drbsde_rejects_touching_obstacles() {
        let lat = lattice_a();
        let mut payoff = put_payoff(&lat, 100.0, 5.0);
        payoff.upper.set(0, 0, payoff.lower.get(0, 0));
        let inputs =
            DrbsdeInputs::new(Dynamics::without_cashflow(lat, Generator::Zero), payoff).unwrap();
        assert!(matches!(
            solve_drbsde(&inputs),
            Err(Error::ObstacleOrderViolated { .. })
        ));
    }

    #[test]
    fn drbsde_rejects_terminal_out_of_band() {
        let lat = lattice_a();
        let mut payoff = put_payoff(&lat, 100.0, 5.0);
        payoff.tie.set(1, 0, 30.0);
        let inputs =
            DrbsdeInputs::new(Dynamics::without_cashflow(lat, Generator::Zero), payoff).unwrap();
        assert!(matches!(
            solve_drbsde(&inputs),
            Err(Error::TerminalOutOfBand { up_count: 0, .. })
        ));
    }

    #[test]
    fn cashflow_must_vanish_at_maturity() {
        let lat = lattice_a();
        let cf = NodeProcess::constant(1, 1.0);
        assert!(matches!(
            Dynamics::new(lat, Generator::Zero, cf),
            Err(Error::ContractInvariantViolated(_))
        ));
    }

    #[test]
    fn stopped_examples() {
        let lat = lattice_a();
        let dyn_ = Dynamics::without_cashflow(lat.clone(), Generator::Zero);
        let payoff = put_payoff(&lat, 100.0, 5.0);
        let root = StoppingRule::from_fn(1, |k, _| k == 0);
        let terminal = StoppingRule::terminal_only(1);
        assert_eq!(
            evaluate_stopped(&dyn_, &root, &terminal, &payoff).unwrap(),
            5.0
        );
        assert_eq!(evaluate_stopped(&dyn_, &root, &root, &payoff).unwrap(), 0.0);
        assert_eq!(
            evaluate_stopped(&dyn_, &terminal, &terminal, &payoff).unwrap(),
            10.0
        );
        assert_eq!(
            evaluate_stopped(&dyn_, &terminal, &root, &payoff).unwrap(),
            0.0
        );
    }

    #[test]
    fn forward_backward_identity_with_cashflow() {
        let lat = build_lattice(80.0, 1.15, 0.9, TimeGrid::new(1.0, 6).unwrap()).unwrap();
        let gen = Generator::differential(0.02, 0.09).unwrap();
        let cf = NodeProcess::from_fn(6, |k, j| if k < 6 { 0.3 * (j as f64) - 0.5 } else { 0.0 });
        let dyn_ = Dynamics::new(lat.clone(), gen, cf).unwrap();
        let terminal: Vec<f64> = (0..=6).map(|j| (90.0 - lat.price(6, j)).max(0.0)).collect();
        let sol = solve_bsde(&dyn_, &terminal).unwrap();
        for path in Path::all(6) {
            for k in 0..6 {
                let j = path.up_count(k);
                let next = dyn_.forward_step(k, j, sol.y.get(k, j), sol.z.get(k, j), path.is_up(k));
                let target = sol.y.get(k + 1, path.up_count(k + 1));
                assert!((next - target).abs() <= 1e-10, "gap {}", next - target);
            }
        }
    }
}
