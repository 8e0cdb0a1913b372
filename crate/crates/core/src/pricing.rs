//! Game contracts, the obstacle problems of each party, acceptable prices and stopping regions.
//!
//! Payoffs are stated from the hedger's (seller's) side: `xh` is received by the hedger when
//! the hedger cancels first, `xc` when the counterparty exercises first, `xbar` on a
//! simultaneous stop, and `da` are the cashflow increments the hedger receives.
//!
//! Both parties are solved as the same game: the party whose acceptable price is computed
//! minimizes and stopping first hands it the upper obstacle; the other side maximizes. For
//! the hedger the minimizer is the cancellation time `sigma`; for the counterparty it is the
//! exercise time `tau`.

use crate::drbsde::{solve_drbsde, DrbsdeInputs, DrbsdeSolution, Dynamics, GamePayoff};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::model::{nodes, BenchmarkAccount, Lattice, NodeProcess};
use crate::oracle::StoppingRule;

/// Default relative tolerance for deciding that `Y` sits on an obstacle.
pub const OBSTACLE_EQ_TOL: f64 = 1e-9;

/// Node-wise payoff processes of a game contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    pub xh: NodeProcess,
    pub xc: NodeProcess,
    pub xbar: NodeProcess,
    pub da: NodeProcess,
}

impl ContractSpec {
    pub fn new(
        xh: NodeProcess,
        xc: NodeProcess,
        xbar: NodeProcess,
        da: NodeProcess,
    ) -> Result<Self> {
        let c = Self { xh, xc, xbar, da };
        c.validate()?;
        Ok(c)
    }

    pub fn steps(&self) -> usize {
        self.xh.steps()
    }

    /// Checks shapes, finiteness, `xh < xc` everywhere, `xh <= xbar <= xc` before maturity and
    /// a zero terminal cashflow row.
    ///
    /// The tie payoff at maturity is the terminal condition of the obstacle problem and is
    /// checked there, where a violation is reported as `TerminalOutOfBand`.
    pub fn validate(&self) -> Result<()> {
        let n = self.steps();
        for (name, p) in [("xc", &self.xc), ("xbar", &self.xbar), ("da", &self.da)] {
            p.check_shape(n)
                .map_err(|e| Error::ShapeMismatch(format!("{name}: {e}")))?;
        }
        for (name, p) in [
            ("xh", &self.xh),
            ("xc", &self.xc),
            ("xbar", &self.xbar),
            ("da", &self.da),
        ] {
            p.check_finite(name)?;
        }
        for (k, j) in nodes(n) {
            let (h, c, b) = (self.xh.get(k, j), self.xc.get(k, j), self.xbar.get(k, j));
            if h >= c {
                return Err(Error::ContractInvariantViolated(format!(
                    "need xh < xc, got xh = {h}, xc = {c} at node ({k},{j})"
                )));
            }
            if k < n && !(h <= b && b <= c) {
                return Err(Error::ContractInvariantViolated(format!(
                    "need xh <= xbar <= xc, got {h}, {b}, {c} at node ({k},{j})"
                )));
            }
        }
        if self.da.row(n).iter().any(|&a| a != 0.0) {
            return Err(Error::ContractInvariantViolated(
                "cashflow increments on the terminal row must be zero".into(),
            ));
        }
        Ok(())
    }

    /// Payoff `I(sigma, tau)` received by the hedger at the stopping node.
    #[inline]
    pub fn settlement(&self, k: usize, j: usize, sigma_first: bool, tau_first: bool) -> f64 {
        match (sigma_first, tau_first) {
            (true, false) => self.xh.get(k, j),
            (false, true) => self.xc.get(k, j),
            _ => self.xbar.get(k, j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Hedger,
    Counterparty,
}

impl Side {
    pub fn name(&self) -> &'static str {
        match self {
            Side::Hedger => "hedger",
            Side::Counterparty => "counterparty",
        }
    }
}

/// Who is quoting, with what initial cash, against which benchmark account.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyView {
    pub side: Side,
    pub endowment: f64,
    pub account: BenchmarkAccount,
}

impl PartyView {
    pub fn new(side: Side, endowment: f64, account: BenchmarkAccount) -> Self {
        Self {
            side,
            endowment,
            account,
        }
    }

    /// Initial wealth after trading the contract at price `p`.
    pub fn initial_wealth(&self, p: f64) -> f64 {
        match self.side {
            Side::Hedger => self.endowment + p,
            Side::Counterparty => self.endowment - p,
        }
    }

    /// Price implied by an initial wealth, inverse of [`PartyView::initial_wealth`].
    pub fn price_from_wealth(&self, y0: f64) -> f64 {
        match self.side {
            Side::Hedger => y0 - self.endowment,
            Side::Counterparty => self.endowment - y0,
        }
    }

    /// Orders a (minimizer, maximizer) pair as (sigma, tau).
    pub fn as_sigma_tau<'a>(
        &self,
        minimizer: &'a StoppingRule,
        maximizer: &'a StoppingRule,
    ) -> (&'a StoppingRule, &'a StoppingRule) {
        match self.side {
            Side::Hedger => (minimizer, maximizer),
            Side::Counterparty => (maximizer, minimizer),
        }
    }

    fn benchmark(&self, lat: &Lattice) -> NodeProcess {
        self.account.wealth_process(self.endowment, lat.grid())
    }
}

fn check_lattice(c: &ContractSpec, lat: &Lattice) -> Result<()> {
    if c.steps() != lat.steps() {
        return Err(Error::ShapeMismatch(format!(
            "contract has {} steps, lattice has {}",
            c.steps(),
            lat.steps()
        )));
    }
    c.validate()
}

fn require_side(view: &PartyView, side: Side) -> Result<()> {
    if view.side != side {
        return Err(Error::InvalidParameters(format!(
            "expected a {} view, got {}",
            side.name(),
            view.side.name()
        )));
    }
    Ok(())
}

/// Hedger's obstacles `V^b - xc < V^b - xh`, terminal `V^b_T - xbar_T`, cashflow `+da`.
pub fn hedger_obstacles(
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
) -> Result<DrbsdeInputs> {
    require_side(view, Side::Hedger)?;
    check_lattice(c, lat)?;
    let vb = view.benchmark(lat);
    let lower = vb.zip_with(&c.xc, |b, x| b - x)?;
    let upper = vb.zip_with(&c.xh, |b, x| b - x)?;
    let tie = vb.zip_with(&c.xbar, |b, x| b - x)?;
    let dynamics = Dynamics::new(lat.clone(), gen.clone(), c.da.clone())?;
    DrbsdeInputs::new(dynamics, GamePayoff { lower, upper, tie })
}

/// Counterparty's obstacles `xh + V^b < xc + V^b`, terminal `xbar_T + V^b_T`, cashflow `-da`.
pub fn counterparty_obstacles(
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
) -> Result<DrbsdeInputs> {
    require_side(view, Side::Counterparty)?;
    check_lattice(c, lat)?;
    let vb = view.benchmark(lat);
    let lower = c.xh.zip_with(&vb, |x, b| x + b)?;
    let upper = c.xc.zip_with(&vb, |x, b| x + b)?;
    let tie = c.xbar.zip_with(&vb, |x, b| x + b)?;
    let dynamics = Dynamics::new(lat.clone(), gen.clone(), c.da.map(|_, _, a| -a))?;
    DrbsdeInputs::new(dynamics, GamePayoff { lower, upper, tie })
}

/// Obstacle problem of whichever side `view` names.
pub fn party_obstacles(
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
) -> Result<DrbsdeInputs> {
    match view.side {
        Side::Hedger => hedger_obstacles(c, view, gen, lat),
        Side::Counterparty => counterparty_obstacles(c, view, gen, lat),
    }
}

/// A set of lattice nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    steps: usize,
    members: Vec<bool>,
}

impl Region {
    pub fn from_fn(steps: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            steps,
            members: nodes(steps).map(|(k, j)| f(k, j)).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn contains(&self, k: usize, j: usize) -> bool {
        self.members[crate::model::node_index(k, j)]
    }

    /// Member nodes in flat order.
    pub fn nodes(&self) -> Vec<(usize, usize)> {
        nodes(self.steps)
            .filter(|&(k, j)| self.contains(k, j))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First-hit stopping rule of the region, stopping at maturity if never hit.
    pub fn to_rule(&self) -> StoppingRule {
        StoppingRule::from_fn(self.steps, |k, j| self.contains(k, j))
    }
}

/// An acceptable price together with the solved obstacle problem and its stopping regions.
#[derive(Debug, Clone)]
pub struct QuoteResult {
    pub view: PartyView,
    pub contract: ContractSpec,
    pub inputs: DrbsdeInputs,
    pub solution: DrbsdeSolution,
    pub price: f64,
    /// Hedger: `{Y = upper}`; counterparty: `{y = lower}`.
    pub region_sigma: Region,
    /// Hedger: `{Y = lower}`; counterparty: `{y = upper}`.
    pub region_tau: Region,
    /// Hedger: `{dU > 0}`; counterparty: `{dL > 0}`.
    pub region_bar_sigma: Region,
    /// Hedger: `{dL > 0}`; counterparty: `{dU > 0}`.
    pub region_bar_tau: Region,
    pub obstacle_tol: f64,
}

impl QuoteResult {
    pub fn lattice(&self) -> &Lattice {
        self.inputs.lattice()
    }

    pub fn steps(&self) -> usize {
        self.inputs.steps()
    }

    pub fn y0(&self) -> f64 {
        self.solution.y0()
    }

    /// Region where `Y` equals the upper obstacle: the quoting party's own stopping region.
    pub fn minimizer_region(&self) -> &Region {
        match self.view.side {
            Side::Hedger => &self.region_sigma,
            Side::Counterparty => &self.region_tau,
        }
    }

    /// Region where `Y` equals the lower obstacle.
    pub fn maximizer_region(&self) -> &Region {
        match self.view.side {
            Side::Hedger => &self.region_tau,
            Side::Counterparty => &self.region_sigma,
        }
    }

    /// Region where the downward reflection fires.
    pub fn minimizer_bar_region(&self) -> &Region {
        match self.view.side {
            Side::Hedger => &self.region_bar_sigma,
            Side::Counterparty => &self.region_bar_tau,
        }
    }

    /// Region where the upward reflection fires.
    pub fn maximizer_bar_region(&self) -> &Region {
        match self.view.side {
            Side::Hedger => &self.region_bar_tau,
            Side::Counterparty => &self.region_bar_sigma,
        }
    }

    /// Whether `v` equals `obstacle` within the quote's relative tolerance.
    pub fn on_obstacle(&self, v: f64, obstacle: f64) -> bool {
        (v - obstacle).abs() <= self.obstacle_tol * (1.0 + v.abs())
    }
}

/// Solves the party's obstacle problem and reads off price and regions.
pub fn acceptable_price(
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
) -> Result<QuoteResult> {
    acceptable_price_with_tol(c, view, gen, lat, OBSTACLE_EQ_TOL)
}

pub fn acceptable_price_with_tol(
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
    obstacle_tol: f64,
) -> Result<QuoteResult> {
    if !(obstacle_tol.is_finite() && obstacle_tol > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "obstacle tolerance must be positive, got {obstacle_tol}"
        )));
    }
    let inputs = party_obstacles(c, view, gen, lat)?;
    let solution = solve_drbsde(&inputs)?;
    let n = lat.steps();
    let eq = |v: f64, o: f64| (v - o).abs() <= obstacle_tol * (1.0 + v.abs());
    let y = &solution.y;
    let at_upper = Region::from_fn(n, |k, j| eq(y.get(k, j), inputs.upper().get(k, j)));
    let at_lower = Region::from_fn(n, |k, j| eq(y.get(k, j), inputs.lower().get(k, j)));
    let du_pos = Region::from_fn(n, |k, j| solution.du.get(k, j) > 0.0);
    let dl_pos = Region::from_fn(n, |k, j| solution.dl.get(k, j) > 0.0);
    let (region_sigma, region_tau, region_bar_sigma, region_bar_tau) = match view.side {
        Side::Hedger => (at_upper, at_lower, du_pos, dl_pos),
        Side::Counterparty => (at_lower, at_upper, dl_pos, du_pos),
    };
    Ok(QuoteResult {
        view: *view,
        contract: c.clone(),
        price: view.price_from_wealth(solution.y0()),
        inputs,
        solution,
        region_sigma,
        region_tau,
        region_bar_sigma,
        region_bar_tau,
        obstacle_tol,
    })
}

/// Sold put with cancellation penalty: `xc = -(K - S)^+`, `xh = xc - delta`, `xbar = xc`.
pub fn builtin_israeli_put(strike: f64, delta: f64, lat: &Lattice) -> Result<ContractSpec> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidPenalty(delta));
    }
    if !strike.is_finite() {
        return Err(Error::InvalidParameters(format!(
            "strike must be finite, got {strike}"
        )));
    }
    let xc = NodeProcess::from_prices(lat, |_, _, s| -(strike - s).max(0.0));
    let xh = xc.map(|_, _, v| v - delta);
    let xbar = xc.clone();
    ContractSpec::new(xh, xc, xbar, NodeProcess::zeros(lat.steps()))
}

/// Callable-puttable bond sold by the hedger, paying `coupon` at the end of every step.
pub fn builtin_game_bond(
    face: f64,
    coupon: f64,
    call_penalty: f64,
    put_discount: f64,
    lat: &Lattice,
) -> Result<ContractSpec> {
    let all_finite = [face, coupon, call_penalty, put_discount]
        .iter()
        .all(|v| v.is_finite());
    if !all_finite || call_penalty <= 0.0 || put_discount < 0.0 || put_discount >= face {
        return Err(Error::InvalidParameters(format!(
            "game bond needs call_penalty > 0 and 0 <= put_discount < face, got face = {face}, \
             call_penalty = {call_penalty}, put_discount = {put_discount}"
        )));
    }
    let n = lat.steps();
    ContractSpec::new(
        NodeProcess::constant(n, -(face + call_penalty)),
        NodeProcess::constant(n, -(face - put_discount)),
        NodeProcess::constant(n, -face),
        NodeProcess::from_fn(n, |k, _| if k < n { -coupon } else { 0.0 }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lattice, TimeGrid};

    fn lattice_a() -> Lattice {
        build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 1).unwrap()).unwrap()
    }

    fn view(side: Side, x: f64) -> PartyView {
        PartyView::new(side, x, BenchmarkAccount::zero())
    }

    #[test]
    fn hedger_obstacles_instance_a() {
        let lat = lattice_a();
        let c = builtin_israeli_put(100.0, 5.0, &lat).unwrap();
        let inp = hedger_obstacles(&c, &view(Side::Hedger, 0.0), &Generator::Zero, &lat).unwrap();
        assert_eq!(inp.lower().values(), &[0.0, 20.0, 0.0]);
        assert_eq!(inp.upper().values(), &[5.0, 25.0, 5.0]);
        assert_eq!(inp.terminal(), &[20.0, 0.0]);
    }

    #[test]
    fn counterparty_obstacles_instance_a() {
        let lat = lattice_a();
        let c = builtin_israeli_put(100.0, 5.0, &lat).unwrap();
        let inp =
            counterparty_obstacles(&c, &view(Side::Counterparty, 0.0), &Generator::Zero, &lat)
                .unwrap();
        assert_eq!(inp.lower().values(), &[-5.0, -25.0, -5.0]);
        assert_eq!(inp.upper().values(), &[0.0, -20.0, 0.0]);
        assert_eq!(inp.terminal(), &[-20.0, 0.0]);
    }

    #[test]
    fn wrong_side_is_rejected() {
        let lat = lattice_a();
        let c = builtin_israeli_put(100.0, 5.0, &lat).unwrap();
        assert!(
            hedger_obstacles(&c, &view(Side::Counterparty, 0.0), &Generator::Zero, &lat).is_err()
        );
    }

    #[test]
    fn strict_payoff_order_required() {
        let lat = lattice_a();
        let p = NodeProcess::constant(1, -1.0);
        assert!(matches!(
            ContractSpec::new(p.clone(), p.clone(), p, NodeProcess::zeros(1)),
            Err(Error::ContractInvariantViolated(_))
        ));
        let c = builtin_israeli_put(100.0, 5.0, &lat).unwrap();
        let mut bad = c.clone();
        bad.xh = bad.xc.clone();
        assert!(hedger_obstacles(&bad, &view(Side::Hedger, 0.0), &Generator::Zero, &lat).is_err());
    }

    #[test]
    fn quote_instance_a() {
        let lat = lattice_a();
        let c = builtin_israeli_put(100.0, 5.0, &lat).unwrap();
        let h = acceptable_price(&c, &view(Side::Hedger, 0.0), &Generator::Zero, &lat).unwrap();
        assert_eq!(h.price, 5.0);
        assert!(h.region_sigma.contains(0, 0));
        assert!(h.region_bar_sigma.contains(0, 0));
        assert_eq!(h.region_tau.nodes(), vec![(1, 0), (1, 1)]);
        let cp =
            acceptable_price(&c, &view(Side::Counterparty, 0.0), &Generator::Zero, &lat).unwrap();
        assert_eq!(cp.y0(), -5.0);
        assert_eq!(cp.price, 5.0);
        assert!(cp.region_sigma.contains(0, 0));
    }

    #[test]
    fn zero_contract_prices_zero() {
        let lat = lattice_a();
        let c = ContractSpec::new(
            NodeProcess::constant(1, -1.0),
            NodeProcess::constant(1, 1.0),
            NodeProcess::zeros(1),
            NodeProcess::zeros(1),
        )
        .unwrap();
        let q =
            acceptable_price(&c, &view(Side::Counterparty, 0.0), &Generator::Zero, &lat).unwrap();
        assert_eq!(q.y0(), 0.0);
        assert_eq!(q.price, 0.0);
    }

    #[test]
    fn counterparty_endowment_translation() {
        let lat = build_lattice(100.0, 1.1, 0.9, TimeGrid::new(1.0, 5).unwrap()).unwrap();
        let c = builtin_israeli_put(100.0, 2.0, &lat).unwrap();
        let a =
            acceptable_price(&c, &view(Side::Counterparty, 0.0), &Generator::Zero, &lat).unwrap();
        let b =
            acceptable_price(&c, &view(Side::Counterparty, 3.0), &Generator::Zero, &lat).unwrap();
        assert!((b.y0() - a.y0() - 3.0).abs() < 1e-12);
        assert!((b.price - a.price).abs() < 1e-12);
    }

    #[test]
    fn builtin_validation() {
        let lat = lattice_a();
        assert!(matches!(
            builtin_israeli_put(100.0, 0.0, &lat),
            Err(Error::InvalidPenalty(_))
        ));
        let b = builtin_game_bond(100.0, 1.0, 3.0, 2.0, &lat).unwrap();
        assert_eq!(b.xh.get(0, 0), -103.0);
        assert_eq!(b.xbar.get(0, 0), -100.0);
        assert_eq!(b.xc.get(0, 0), -98.0);
        assert_eq!(b.da.get(0, 0), -1.0);
        assert_eq!(b.da.get(1, 0), 0.0);
        assert!(builtin_game_bond(100.0, 1.0, 3.0, 100.0, &lat).is_err());
        let zero = builtin_game_bond(100.0, 0.0, 3.0, 2.0, &lat).unwrap();
        assert!(zero.da.values().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn out_of_money_put_is_pure_penalty_game() {
        let lat = lattice_a();
        let c = builtin_israeli_put(50.0, 1.0, &lat).unwrap();
        assert!(c.xc.values().iter().all(|&v| v == 0.0));
        let q = acceptable_price(&c, &view(Side::Hedger, 0.0), &Generator::Zero, &lat).unwrap();
        assert_eq!(q.price, 0.0);
    }
}
