//! Forward wealth, the arbitrage/superhedging/break-even classifier and the verifiers built on
//! it: replication of the acceptable price, rational stopping of the quoting party and
//! break-even stopping of the other party.
//!
//! All "almost surely" and "with positive probability" statements are decided exactly by
//! enumerating every path; each path has positive probability because `0 < q < 1`.
//!
//! Cumulative reflections along a path are taken strictly before a step:
//! `L_k = sum of dL over the path nodes at steps 0..k`. A stopping rule that stops at a node
//! therefore pre-empts the reflection fired at that node.

use rayon::prelude::*;

use crate::drbsde::{evaluate_stopped, Dynamics};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::model::{benchmark_wealth, Lattice, NodeProcess, Path};
use crate::oracle::{enumerate_rules, maximizer_best_response, StoppingRule};
use crate::pricing::{ContractSpec, PartyView, QuoteResult, Side};

/// Largest tree whose paths are enumerated (2^24 paths).
pub const MAX_PATH_STEPS: usize = 24;
/// Largest tree for which whole path tables are materialized.
pub const MAX_TABLE_STEPS: usize = 16;

fn check_paths(steps: usize, limit: usize) -> Result<()> {
    if steps > limit {
        return Err(Error::TooManyPaths { steps, limit });
    }
    Ok(())
}

/// Wealth of a self-financing strategy along one path, with the solution's cumulative
/// reflections alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub path: Path,
    pub values: Vec<f64>,
    pub l_cum: Vec<f64>,
    pub u_cum: Vec<f64>,
}

#[inline]
fn advance(dynamics: &Dynamics, hedge: &NodeProcess, path: &Path, k: usize, v: f64) -> Result<f64> {
    let j = path.up_count(k);
    let next = dynamics.forward_step(k, j, v, hedge.get(k, j), path.is_up(k));
    if !next.is_finite() {
        return Err(Error::NonFiniteState {
            step: k + 1,
            path: path.id(),
        });
    }
    Ok(next)
}

/// Wealth after `steps` moves along `path`, starting from `v0`.
fn wealth_at(
    dynamics: &Dynamics,
    hedge: &NodeProcess,
    path: &Path,
    v0: f64,
    steps: usize,
) -> Result<f64> {
    let mut v = v0;
    for k in 0..steps {
        v = advance(dynamics, hedge, path, k, v)?;
    }
    Ok(v)
}

/// Runs `V(k+1) = V(k) - g(t_k, V(k), hedge(k), S(k)) dt + hedge(k) dS + dA(k)` along `path`.
///
/// With `reflection` given, the cumulative reflections of that solution are attached;
/// otherwise they are zero.
pub fn forward_wealth(
    y0: f64,
    hedge: &NodeProcess,
    dynamics: &Dynamics,
    path: Path,
    reflection: Option<&crate::drbsde::DrbsdeSolution>,
) -> Result<WealthPath> {
    let n = dynamics.steps();
    hedge.check_shape(n)?;
    if path.steps() != n {
        return Err(Error::ShapeMismatch(format!(
            "path has {} steps, lattice has {n}",
            path.steps()
        )));
    }
    let mut values = Vec::with_capacity(n + 1);
    let mut l_cum = vec![0.0; n + 1];
    let mut u_cum = vec![0.0; n + 1];
    values.push(y0);
    let mut v = y0;
    for k in 0..n {
        v = advance(dynamics, hedge, &path, k, v)?;
        values.push(v);
        if let Some(sol) = reflection {
            let j = path.up_count(k);
            l_cum[k + 1] = l_cum[k] + sol.dl.get(k, j);
            u_cum[k + 1] = u_cum[k] + sol.du.get(k, j);
        }
    }
    Ok(WealthPath {
        path,
        values,
        l_cum,
        u_cum,
    })
}

/// Outcome of classifying a (price, hedge, sigma, tau) quadruplet.
///
/// The compared quantity is the party's terminal surplus over the benchmark,
/// `V + I - V^b` for the hedger and `V - I - V^b` for the counterparty, at `sigma ^ tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// Surplus `>= 0` on every path.
    pub sh: bool,
    /// Superhedging with a strict surplus on some path.
    pub ao: bool,
    /// Surplus `= 0` on every path.
    pub be: bool,
    /// Break-even, or a strict deficit on some path.
    pub na: bool,
    /// First path with a strict surplus.
    pub surplus_path: Option<u64>,
    /// First path with a strict deficit.
    pub deficit_path: Option<u64>,
    pub min_surplus: f64,
    pub max_surplus: f64,
}

/// Reduction of one number per path into extremes and first witnesses.
#[derive(Debug, Clone, Copy)]
struct Scan {
    min: f64,
    max: f64,
    first_above: Option<u64>,
    first_below: Option<u64>,
}

fn first(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

impl Scan {
    fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            first_above: None,
            first_below: None,
        }
    }

    fn single(id: u64, v: f64, tol: f64) -> Self {
        Self {
            min: v,
            max: v,
            first_above: (v > tol).then_some(id),
            first_below: (v < -tol).then_some(id),
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
            first_above: first(self.first_above, o.first_above),
            first_below: first(self.first_below, o.first_below),
        }
    }
}

fn scan_paths(steps: usize, tol: f64, f: impl Fn(Path) -> Result<f64> + Sync) -> Result<Scan> {
    (0..1u64 << steps)
        .into_par_iter()
        .map(|id| f(Path::new(id, steps)).map(|v| Scan::single(id, v, tol)))
        .try_reduce(Scan::empty, |a, b| Ok(a.merge(b)))
}

fn wealth_dynamics(
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
) -> Result<Dynamics> {
    let cashflow = match view.side {
        Side::Hedger => c.da.clone(),
        Side::Counterparty => c.da.map(|_, _, a| -a),
    };
    Dynamics::new(lat.clone(), gen.clone(), cashflow)
}

/// Classifies `(p, hedge, sigma, tau)` for the party of `view` by exhaustive path enumeration.
///
/// Works directly from the contract payoff `I(sigma, tau)` and the benchmark account, not from
/// the obstacles of the reflected equation.
#[allow(clippy::too_many_arguments)]
pub fn classify_quadruplet(
    p: f64,
    hedge: &NodeProcess,
    sigma: &StoppingRule,
    tau: &StoppingRule,
    c: &ContractSpec,
    view: &PartyView,
    gen: &Generator,
    lat: &Lattice,
    tol: f64,
) -> Result<ConditionReport> {
    let n = lat.steps();
    check_paths(n, MAX_PATH_STEPS)?;
    sigma.check_for(n)?;
    tau.check_for(n)?;
    hedge.check_shape(n)?;
    let dynamics = wealth_dynamics(c, view, gen, lat)?;
    let x0 = view.initial_wealth(p);
    let dt = lat.dt();
    let scan = scan_paths(n, tol, |path| {
        let (ts, tt) = (sigma.hit_step(&path), tau.hit_step(&path));
        let theta = ts.min(tt);
        let v = wealth_at(&dynamics, hedge, &path, x0, theta)?;
        let i = c.settlement(theta, path.up_count(theta), ts < tt, tt < ts);
        let vb = benchmark_wealth(&view.account, view.endowment, theta, dt);
        Ok(match view.side {
            Side::Hedger => v + i - vb,
            Side::Counterparty => v - i - vb,
        })
    })?;
    Ok(condition_from_scan(&scan))
}

fn condition_from_scan(scan: &Scan) -> ConditionReport {
    let sh = scan.first_below.is_none();
    let be = sh && scan.first_above.is_none();
    ConditionReport {
        sh,
        ao: sh && scan.first_above.is_some(),
        be,
        na: be || scan.first_below.is_some(),
        surplus_path: scan.first_above,
        deficit_path: scan.first_below,
        min_surplus: scan.min,
        max_surplus: scan.max,
    }
}

/// Result of checking that the quoted price, the solved hedge and the party's stopping region
/// replicate the contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationReport {
    /// Wealth tracks `Y` up to the first stop and the quadruplet breaks even.
    pub replicates: bool,
    /// Largest `|V - Y|` before the first stop of either region rule.
    pub max_gap: f64,
    /// Break-even of (price, Z, sigma-region rule, tau-region rule).
    pub be: bool,
    /// Raising the party's initial wealth by `epsilon` yields an arbitrage for every
    /// opponent stopping time.
    pub ao_at_plus: bool,
    /// Lowering it by `epsilon` loses the superhedge against the opponent's region rule.
    pub sh_fails_at_minus: bool,
    pub epsilon: f64,
    pub n_paths: u64,
    pub first_failing_path: Option<u64>,
}

impl ReplicationReport {
    pub fn passed(&self) -> bool {
        self.replicates && self.ao_at_plus && self.sh_fails_at_minus
    }
}

/// Price shift used by the probes: `1e-6 * (1 + |price|)`.
pub fn probe_epsilon(price: f64) -> f64 {
    1e-6 * (1.0 + price.abs())
}

/// Per-path smallest margin `V_t - J(own, t)` minus `offset`, over every opponent stop
/// `t <= own`, with wealth started at `v0` and hedged with the solved `Z`.
fn superhedge_scan(quote: &QuoteResult, own: &StoppingRule, v0: f64, offset: f64) -> Result<Scan> {
    let n = quote.steps();
    let dynamics = &quote.inputs.dynamics;
    let payoff = &quote.inputs.payoff;
    let z = &quote.solution.z;
    scan_paths(n, 0.0, |path| {
        let stop = own.hit_step(&path);
        let mut v = v0;
        let mut margin = f64::INFINITY;
        for k in 0..=stop {
            let j = path.up_count(k);
            let target = if k < stop {
                payoff.lower.get(k, j)
            } else if k < n {
                payoff.upper.get(k, j).max(payoff.tie.get(k, j))
            } else {
                payoff.tie.get(k, j)
            };
            margin = margin.min(v - target);
            if k < stop {
                v = advance(dynamics, z, &path, k, v)?;
            }
        }
        Ok(margin - offset)
    })
}

/// Replication check plus the two price probes.
pub fn verify_replication(quote: &QuoteResult, tol: f64) -> Result<ReplicationReport> {
    let n = quote.steps();
    check_paths(n, MAX_PATH_STEPS)?;
    let dynamics = &quote.inputs.dynamics;
    let sol = &quote.solution;
    let min_rule = quote.minimizer_region().to_rule();
    let max_rule = quote.maximizer_region().to_rule();
    let y0 = sol.y0();
    let gaps = scan_paths(n, tol, |path| {
        let theta = min_rule.hit_step(&path).min(max_rule.hit_step(&path));
        let mut v = y0;
        let mut gap = 0.0f64;
        for k in 0..=theta {
            gap = gap.max((v - sol.y.get(k, path.up_count(k))).abs());
            if k < theta {
                v = advance(dynamics, &sol.z, &path, k, v)?;
            }
        }
        Ok(gap)
    })?;
    let view = &quote.view;
    let (sigma, tau) = view.as_sigma_tau(&min_rule, &max_rule);
    let c = &quote.contract;
    let gen = dynamics.generator();
    let lat = quote.lattice();
    let be = classify_quadruplet(quote.price, &sol.z, sigma, tau, c, view, gen, lat, tol)?;
    let eps = probe_epsilon(quote.price);
    let plus = superhedge_scan(quote, &min_rule, y0 + eps, tol)?;
    let ao_at_plus = plus.first_below.is_none();
    let minus_price = view.price_from_wealth(y0 - eps);
    let minus = classify_quadruplet(minus_price, &sol.z, sigma, tau, c, view, gen, lat, tol)?;
    let replicates = gaps.first_above.is_none() && be.be;
    let first_failing_path = gaps
        .first_above
        .or(if be.be {
            None
        } else {
            first(be.surplus_path, be.deficit_path)
        })
        .or(plus.first_below)
        .or(if minus.sh { Some(0) } else { None });
    Ok(ReplicationReport {
        replicates,
        max_gap: gaps.max,
        be: be.be,
        ao_at_plus,
        sh_fails_at_minus: !minus.sh,
        epsilon: eps,
        n_paths: 1u64 << n,
        first_failing_path,
    })
}

/// Per-path wealth (from `Y0` with hedge `Z`), solution value and cumulative reflections.
#[derive(Debug, Clone)]
pub struct PathTable {
    steps: usize,
    v: Vec<f64>,
    y: Vec<f64>,
    l_before: Vec<f64>,
    u_before: Vec<f64>,
}

impl PathTable {
    pub fn build(quote: &QuoteResult) -> Result<Self> {
        let n = quote.steps();
        check_paths(n, MAX_TABLE_STEPS)?;
        let sol = &quote.solution;
        let rows: Vec<WealthPath> = (0..1u64 << n)
            .into_par_iter()
            .map(|id| {
                forward_wealth(
                    sol.y0(),
                    &sol.z,
                    &quote.inputs.dynamics,
                    Path::new(id, n),
                    Some(sol),
                )
            })
            .collect::<Result<_>>()?;
        let mut t = Self {
            steps: n,
            v: Vec::with_capacity(rows.len() * (n + 1)),
            y: Vec::with_capacity(rows.len() * (n + 1)),
            l_before: Vec::with_capacity(rows.len() * (n + 1)),
            u_before: Vec::with_capacity(rows.len() * (n + 1)),
        };
        for w in rows {
            t.v.extend_from_slice(&w.values);
            t.l_before.extend_from_slice(&w.l_cum);
            t.u_before.extend_from_slice(&w.u_cum);
            t.y.extend((0..=n).map(|k| sol.y.get(k, w.path.up_count(k))));
        }
        Ok(t)
    }

    #[inline]
    fn at(&self, path: &Path, k: usize) -> usize {
        path.id() as usize * (self.steps + 1) + k
    }

    pub fn paths(&self) -> impl Iterator<Item = Path> {
        Path::all(self.steps)
    }

    pub fn v(&self, path: &Path, k: usize) -> f64 {
        self.v[self.at(path, k)]
    }

    pub fn y(&self, path: &Path, k: usize) -> f64 {
        self.y[self.at(path, k)]
    }

    pub fn l_before(&self, path: &Path, k: usize) -> f64 {
        self.l_before[self.at(path, k)]
    }

    pub fn u_before(&self, path: &Path, k: usize) -> f64 {
        self.u_before[self.at(path, k)]
    }
}

/// Game payoff of the quote at the first stop of the (minimizer, maximizer) hit steps.
fn game_payoff_at(
    quote: &QuoteResult,
    path: &Path,
    min_hit: usize,
    max_hit: usize,
) -> (usize, f64) {
    let theta = min_hit.min(max_hit);
    let j = path.up_count(theta);
    let v = quote
        .inputs
        .payoff
        .at(theta, j, min_hit == theta, max_hit == theta)
        .expect("at least one player stops at theta");
    (theta, v)
}

/// Checks of a candidate stopping rule for the quoting party (cancellation for the hedger,
/// exercise for the counterparty).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RationalReport {
    /// Wealth from the acceptable price hedged with `Z` superhedges against every opponent stop.
    pub rational: bool,
    /// No downward reflection before the stop, and `Y` on the upper obstacle where the stop
    /// comes before maturity.
    pub sufficient: bool,
    /// No downward reflection before, and `Y` equal to the game payoff at, the first stop
    /// against both opponent region rules.
    pub necessary: bool,
    pub violation_path: Option<u64>,
    pub necessity_path: Option<u64>,
}

/// Rational-stopping checks for `rule` used by the quoting party.
pub fn verify_rational_cancellation(
    rule: &StoppingRule,
    quote: &QuoteResult,
    tol: f64,
) -> Result<RationalReport> {
    let table = PathTable::build(quote)?;
    rational_with_table(rule, quote, &table, tol)
}

fn rational_with_table(
    rule: &StoppingRule,
    quote: &QuoteResult,
    table: &PathTable,
    tol: f64,
) -> Result<RationalReport> {
    let n = quote.steps();
    rule.check_for(n)?;
    let payoff = &quote.inputs.payoff;
    let opp = quote.maximizer_region().to_rule();
    let opp_bar = quote.maximizer_bar_region().to_rule();
    let mut violation_path = None;
    let mut necessity_path = None;
    let mut sufficient = true;
    for path in table.paths() {
        let stop = rule.hit_step(&path);
        let mut ok = true;
        for k in 0..=stop {
            let j = path.up_count(k);
            let target = if k < stop {
                payoff.lower.get(k, j)
            } else if k < n {
                payoff.upper.get(k, j).max(payoff.tie.get(k, j))
            } else {
                payoff.tie.get(k, j)
            };
            if table.v(&path, k) < target - tol {
                ok = false;
            }
        }
        if !ok && violation_path.is_none() {
            violation_path = Some(path.id());
        }
        let js = path.up_count(stop);
        if table.u_before(&path, stop) > tol
            || (stop < n && !quote.on_obstacle(table.y(&path, stop), payoff.upper.get(stop, js)))
        {
            sufficient = false;
        }
        for other in [&opp, &opp_bar] {
            let (theta, j_val) = game_payoff_at(quote, &path, stop, other.hit_step(&path));
            let violated =
                table.u_before(&path, theta) > tol || (table.y(&path, theta) - j_val).abs() > tol;
            if violated && necessity_path.is_none() {
                necessity_path = Some(path.id());
            }
        }
    }
    Ok(RationalReport {
        rational: violation_path.is_none(),
        sufficient,
        necessary: necessity_path.is_none(),
        violation_path,
        necessity_path,
    })
}

/// The five characterizations of a break-even stop of the opponent against the quoting
/// party's replicating strategy (acceptable price, `Z`, own upper-obstacle region rule).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreakEvenReport {
    /// (i) the classifier reports break-even.
    pub be: bool,
    /// (ii) the classifier reports no arbitrage.
    pub na: bool,
    /// (iii) wealth equals the game payoff at the first stop on every path.
    pub wealth_matches: bool,
    /// (iv) `Y` equals the game payoff at the first stop, with no upward reflection before it
    /// and no downward reflection before the own stop.
    pub solution_matches: bool,
    /// (v) the stop is an optimal response of the opponent.
    pub optimal: bool,
}

impl BreakEvenReport {
    pub fn all_agree(&self) -> bool {
        let v = [
            self.be,
            self.na,
            self.wealth_matches,
            self.solution_matches,
            self.optimal,
        ];
        v.iter().all(|&b| b) || v.iter().all(|&b| !b)
    }
}

/// Break-even checks for the opponent's `rule`.
pub fn verify_break_even(
    rule: &StoppingRule,
    quote: &QuoteResult,
    tol: f64,
) -> Result<BreakEvenReport> {
    let table = PathTable::build(quote)?;
    let best = maximizer_best_response(
        &quote.inputs.dynamics,
        &quote.inputs.payoff,
        &quote.minimizer_region().to_rule(),
    )?;
    break_even_with_table(rule, quote, &table, best, tol)
}

fn break_even_with_table(
    rule: &StoppingRule,
    quote: &QuoteResult,
    table: &PathTable,
    best: f64,
    tol: f64,
) -> Result<BreakEvenReport> {
    let n = quote.steps();
    rule.check_for(n)?;
    let own = quote.minimizer_region().to_rule();
    let view = &quote.view;
    let (sigma, tau) = view.as_sigma_tau(&own, rule);
    let dynamics = &quote.inputs.dynamics;
    let cls = classify_quadruplet(
        quote.price,
        &quote.solution.z,
        sigma,
        tau,
        &quote.contract,
        view,
        dynamics.generator(),
        quote.lattice(),
        tol,
    )?;
    let mut wealth_matches = true;
    let mut solution_matches = true;
    for path in table.paths() {
        let own_hit = own.hit_step(&path);
        let (theta, j_val) = game_payoff_at(quote, &path, own_hit, rule.hit_step(&path));
        if (table.v(&path, theta) - j_val).abs() > tol {
            wealth_matches = false;
        }
        if (table.y(&path, theta) - j_val).abs() > tol
            || table.l_before(&path, theta) > tol
            || table.u_before(&path, own_hit) > tol
        {
            solution_matches = false;
        }
    }
    let value = evaluate_stopped(dynamics, &own, rule, &quote.inputs.payoff)?;
    Ok(BreakEvenReport {
        be: cls.be,
        na: cls.na,
        wealth_matches,
        solution_matches,
        optimal: value >= best - tol,
    })
}

/// Summary of a stopping-time battery.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoppingBattery {
    pub rules_checked: usize,
    pub positive_rules: usize,
    pub counterexamples: Vec<String>,
}

impl StoppingBattery {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

fn candidate_rules(quote: &QuoteResult, extra: Vec<StoppingRule>) -> Vec<StoppingRule> {
    match enumerate_rules(quote.lattice()) {
        Ok(all) => all,
        Err(_) => extra,
    }
}

/// Rational-stopping battery for the quoting party.
///
/// The upper-obstacle region rule and the first-downward-reflection rule must be rational.
/// Every candidate rule (all rules when the tree is small enough to enumerate) must satisfy
/// sufficient => rational => necessary, and every rational rule must respect the
/// earliest/latest claims on the events `{own <= opp_bar}` and `{own_bar < opp_bar}`.
pub fn rational_battery(quote: &QuoteResult, tol: f64) -> Result<StoppingBattery> {
    let table = PathTable::build(quote)?;
    let own = quote.minimizer_region().to_rule();
    let own_bar = quote.minimizer_bar_region().to_rule();
    let opp_bar = quote.maximizer_bar_region().to_rule();
    let mut out = StoppingBattery::default();
    for (name, r) in [("region rule", &own), ("reflection rule", &own_bar)] {
        let rep = rational_with_table(r, quote, &table, tol)?;
        if !rep.rational {
            out.counterexamples.push(format!(
                "{name} is not rational (path {:?})",
                rep.violation_path
            ));
        }
    }
    let paths: Vec<Path> = table.paths().collect();
    let early_event: Vec<&Path> = paths
        .iter()
        .filter(|p| own.hit_step(p) <= opp_bar.hit_step(p))
        .collect();
    let late_event: Vec<&Path> = paths
        .iter()
        .filter(|p| own_bar.hit_step(p) < opp_bar.hit_step(p))
        .collect();
    for rule in candidate_rules(quote, vec![own.clone(), own_bar.clone()]) {
        out.rules_checked += 1;
        let rep = rational_with_table(&rule, quote, &table, tol)?;
        let marks = rule.interior_marked();
        if rep.sufficient && !rep.rational {
            out.counterexamples.push(format!(
                "rule {marks:?} meets the sufficient conditions but is not rational (path {:?})",
                rep.violation_path
            ));
        }
        if !rep.rational {
            continue;
        }
        out.positive_rules += 1;
        if !rep.necessary {
            out.counterexamples.push(format!(
                "rational rule {marks:?} violates the necessary conditions (path {:?})",
                rep.necessity_path
            ));
        }
        if early_event
            .iter()
            .all(|p| rule.hit_step(p) <= own.hit_step(p))
        {
            if let Some(p) = early_event
                .iter()
                .find(|p| rule.hit_step(p) != own.hit_step(p))
            {
                out.counterexamples.push(format!(
                    "rational rule {marks:?} stops before the region rule on path {}",
                    p.id()
                ));
            }
        }
        if late_event
            .iter()
            .all(|p| rule.hit_step(p) >= own_bar.hit_step(p))
        {
            if let Some(p) = late_event
                .iter()
                .find(|p| rule.hit_step(p) != own_bar.hit_step(p))
            {
                out.counterexamples.push(format!(
                    "rational rule {marks:?} stops after the reflection rule on path {}",
                    p.id()
                ));
            }
        }
    }
    Ok(out)
}

/// Break-even battery for the opponent's rules against the quoting party's replicating
/// strategy: the five characterizations agree for every candidate rule, the lower-obstacle
/// region rule breaks even, and no break-even rule stops before it on a path where the own
/// region rule has not stopped yet.
pub fn break_even_battery(quote: &QuoteResult, tol: f64) -> Result<StoppingBattery> {
    let table = PathTable::build(quote)?;
    let own = quote.minimizer_region().to_rule();
    let opp = quote.maximizer_region().to_rule();
    let best = maximizer_best_response(&quote.inputs.dynamics, &quote.inputs.payoff, &own)?;
    let mut out = StoppingBattery::default();
    let first_rep = break_even_with_table(&opp, quote, &table, best, tol)?;
    if !first_rep.be {
        out.counterexamples
            .push("region rule of the opponent does not break even".into());
    }
    let extra = vec![
        opp.clone(),
        quote.maximizer_bar_region().to_rule(),
        StoppingRule::terminal_only(quote.steps()),
    ];
    for rule in candidate_rules(quote, extra) {
        out.rules_checked += 1;
        let rep = break_even_with_table(&rule, quote, &table, best, tol)?;
        let marks = rule.interior_marked();
        if !rep.all_agree() {
            out.counterexamples.push(format!(
                "characterizations disagree for rule {marks:?}: {rep:?}"
            ));
        }
        if !rep.be {
            continue;
        }
        out.positive_rules += 1;
        if let Some(p) = table.paths().find(|p| {
            let t = rule.hit_step(p);
            let t_opp = opp.hit_step(p);
            t < t_opp && t_opp <= own.hit_step(p)
        }) {
            out.counterexamples.push(format!(
                "break-even rule {marks:?} stops before the region rule on path {}",
                p.id()
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lattice, BenchmarkAccount, TimeGrid};
    use crate::pricing::{acceptable_price, builtin_israeli_put};

    fn lattice_a() -> Lattice {
        build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 1).unwrap()).unwrap()
    }

    fn quote_a(side: Side) -> QuoteResult {
        let lat = lattice_a();
        let c = builtin_israeli_put(100.0, 5.0, &lat).unwrap();
        acceptable_price(
            &c,
            &PartyView::new(side, 0.0, BenchmarkAccount::zero()),
            &Generator::Zero,
            &lat,
        )
        .unwrap()
    }

    #[test]
    fn forward_step_instance_a() {
        let q = quote_a(Side::Hedger);
        let w = forward_wealth(
            5.0,
            &q.solution.z,
            &q.inputs.dynamics,
            Path::new(0, 1),
            Some(&q.solution),
        )
        .unwrap();
        assert_eq!(w.values, vec![5.0, 15.0]);
        assert_eq!(w.u_cum, vec![0.0, 5.0]);
        assert_eq!(w.l_cum, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_hedge_keeps_wealth() {
        let lat = build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 3).unwrap()).unwrap();
        let d = Dynamics::without_cashflow(lat, Generator::Zero);
        let w = forward_wealth(2.5, &NodeProcess::zeros(3), &d, Path::new(0b101, 3), None).unwrap();
        assert!(w.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn classifier_instance_a() {
        let q = quote_a(Side::Hedger);
        let root = StoppingRule::from_fn(1, |k, _| k == 0);
        let term = StoppingRule::terminal_only(1);
        let run = |p: f64| {
            classify_quadruplet(
                p,
                &q.solution.z,
                &root,
                &term,
                &q.contract,
                &q.view,
                &Generator::Zero,
                q.lattice(),
                1e-10,
            )
            .unwrap()
        };
        let at = run(5.0);
        assert!(at.be && at.sh && at.na && !at.ao);
        let plus = run(6.0);
        assert!(plus.ao && plus.sh && !plus.na);
        let minus = run(4.0);
        assert!(!minus.sh && minus.na && !minus.be);
    }

    #[test]
    fn replication_instance_a() {
        for side in [Side::Hedger, Side::Counterparty] {
            let r = verify_replication(&quote_a(side), 1e-10).unwrap();
            assert!(r.passed(), "{side:?}: {r:?}");
            assert!(r.max_gap <= 1e-10);
            assert_eq!(r.n_paths, 2);
        }
    }

    #[test]
    fn corrupted_hedge_breaks_replication() {
        let lat = build_lattice(100.0, 1.1, 0.9, TimeGrid::new(1.0, 3).unwrap()).unwrap();
        let c = builtin_israeli_put(100.0, 30.0, &lat).unwrap();
        let view = PartyView::new(Side::Hedger, 0.0, BenchmarkAccount::zero());
        let mut q = acceptable_price(&c, &view, &Generator::Zero, &lat).unwrap();
        let z0 = q.solution.z.get(0, 0);
        q.solution.z.set(0, 0, z0 + 0.1);
        let r = verify_replication(&q, 1e-10).unwrap();
        assert!(!r.replicates);
        assert!(r.max_gap > 1e-3);
        assert!(r.first_failing_path.is_some());
    }

    #[test]
    fn rational_instance_a() {
        let q = quote_a(Side::Hedger);
        let own = q.region_sigma.to_rule();
        let r = verify_rational_cancellation(&own, &q, 1e-10).unwrap();
        assert!(r.rational && r.sufficient && r.necessary);
        let term = StoppingRule::terminal_only(1);
        let r = verify_rational_cancellation(&term, &q, 1e-10).unwrap();
        assert!(!r.rational && !r.necessary && !r.sufficient);
    }

    #[test]
    fn break_even_instance_a() {
        let q = quote_a(Side::Hedger);
        let tau = q.region_tau.to_rule();
        let r = verify_break_even(&tau, &q, 1e-10).unwrap();
        assert!(r.be && r.na && r.wealth_matches && r.solution_matches && r.optimal);
        for side in [Side::Hedger, Side::Counterparty] {
            let q = quote_a(side);
            assert!(rational_battery(&q, 1e-10).unwrap().passed());
            assert!(break_even_battery(&q, 1e-10).unwrap().passed());
        }
    }

    #[test]
    fn early_stop_fails_solution_characterization() {
        let lat = build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, 2).unwrap()).unwrap();
        let c = builtin_israeli_put(100.0, 30.0, &lat).unwrap();
        let view = PartyView::new(Side::Hedger, 0.0, BenchmarkAccount::zero());
        let q = acceptable_price(&c, &view, &Generator::Zero, &lat).unwrap();
        // Y(0,0) = 11 > lower 0: stopping at the root is premature.
        assert!(q.solution.y0() > q.inputs.lower().get(0, 0));
        let root = StoppingRule::from_fn(2, |k, _| k == 0);
        let r = verify_break_even(&root, &q, 1e-10).unwrap();
        assert!(!r.solution_matches && !r.be && !r.optimal && r.all_agree());
    }

    #[test]
    fn too_many_paths() {
        let lat = build_lattice(100.0, 1.01, 0.99, TimeGrid::new(1.0, 25).unwrap()).unwrap();
        let c = builtin_israeli_put(100.0, 1.0, &lat).unwrap();
        let view = PartyView::new(Side::Hedger, 0.0, BenchmarkAccount::zero());
        let q = acceptable_price(&c, &view, &Generator::Zero, &lat).unwrap();
        assert!(matches!(
            verify_replication(&q, 1e-10),
            Err(Error::TooManyPaths { .. })
        ));
    }
}
