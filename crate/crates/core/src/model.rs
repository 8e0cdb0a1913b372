//! Time grid, recombining martingale lattice and node-indexed storage.
//!
//! Nodes are addressed by `(step, up_count)` with `up_count <= step`. All
//! node-indexed quantities share the flat layout `step*(step+1)/2 + up_count`,
//! so a [`NodeProcess`] built for one lattice fits every other lattice with the
//! same number of steps.

use crate::error::{Error, Result};

/// Flat index of node `(k, j)`.
#[inline]
pub fn node_index(k: usize, j: usize) -> usize {
    k * (k + 1) / 2 + j
}

/// Number of nodes in a tree with `steps` steps (rows `0..=steps`).
#[inline]
pub fn node_count(steps: usize) -> usize {
    (steps + 1) * (steps + 2) / 2
}

/// Iterator over all `(step, up_count)` pairs in flat-index order.
pub fn nodes(steps: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=steps).flat_map(|k| (0..=k).map(move |j| (k, j)))
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("steps_N must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon_T must be finite and positive, got {horizon}"
            )));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Calendar time of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

/// Recombining binomial tree for one risky asset under its martingale measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    s0: f64,
    up: f64,
    down: f64,
    q: f64,
    grid: TimeGrid,
    prices: Vec<f64>,
}

/// Builds the lattice `S(k,j) = s0 * u^j * d^(k-j)` with `q = (1-d)/(u-d)`.
pub fn build_lattice(s0: f64, up: f64, down: f64, grid: TimeGrid) -> Result<Lattice> {
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(Error::DegenerateLattice(format!(
            "s0 must be positive, got {s0}"
        )));
    }
    if !(up.is_finite() && down.is_finite()) {
        return Err(Error::DegenerateLattice("u and d must be finite".into()));
    }
    if !(down > 0.0 && down < 1.0 && up > 1.0) {
        return Err(Error::DegenerateLattice(format!(
            "need 0 < d < 1 < u, got u = {up}, d = {down}"
        )));
    }
    let q = (1.0 - down) / (up - down);
    let n = grid.steps();
    let mut prices = Vec::with_capacity(node_count(n));
    for k in 0..=n {
        for j in 0..=k {
            prices.push(s0 * up.powi(j as i32) * down.powi((k - j) as i32));
        }
    }
    Ok(Lattice {
        s0,
        up,
        down,
        q,
        grid,
        prices,
    })
}

impl Lattice {
    /// Cox-Ross-Rubinstein style lattice with `u = exp(vol*sqrt(dt))`, `d = 1/u`.
    pub fn from_volatility(s0: f64, vol: f64, grid: TimeGrid) -> Result<Lattice> {
        if !(vol.is_finite() && vol > 0.0) {
            return Err(Error::DegenerateLattice(format!(
                "volatility must be positive, got {vol}"
            )));
        }
        let up = (vol * grid.dt().sqrt()).exp();
        build_lattice(s0, up, 1.0 / up, grid)
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn up(&self) -> f64 {
        self.up
    }

    pub fn down(&self) -> f64 {
        self.down
    }

    /// Martingale probability of an up move.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn price(&self, k: usize, j: usize) -> f64 {
        self.prices[node_index(k, j)]
    }

    pub fn max_price(&self) -> f64 {
        self.prices.iter().copied().fold(f64::MIN, f64::max)
    }

    /// The asset price itself as a node process.
    pub fn price_process(&self) -> NodeProcess {
        NodeProcess {
            steps: self.steps(),
            values: self.prices.clone(),
        }
    }

    /// Number of non-terminal nodes.
    pub fn interior_node_count(&self) -> usize {
        node_count(self.steps() - 1)
    }
}

/// A real value attached to every node of a tree with `steps` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProcess {
    steps: usize,
    values: Vec<f64>,
}

impl NodeProcess {
    pub fn constant(steps: usize, value: f64) -> Self {
        Self {
            steps,
            values: vec![value; node_count(steps)],
        }
    }

    pub fn zeros(steps: usize) -> Self {
        Self::constant(steps, 0.0)
    }

    pub fn from_fn(steps: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = nodes(steps).map(|(k, j)| f(k, j)).collect();
        Self { steps, values }
    }

    /// Applies `f(step, up_count, price)` at every node of `lat`.
    pub fn from_prices(lat: &Lattice, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        Self::from_fn(lat.steps(), |k, j| f(k, j, lat.price(k, j)))
    }

    /// Builds a process from values in flat-index order.
    pub fn from_values(steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != node_count(steps) {
            return Err(Error::ShapeMismatch(format!(
                "{} values supplied for a {steps}-step tree ({} nodes)",
                values.len(),
                node_count(steps)
            )));
        }
        Ok(Self { steps, values })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> f64 {
        debug_assert!(j <= k && k <= self.steps);
        self.values[node_index(k, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, j: usize, value: f64) {
        self.values[node_index(k, j)] = value;
    }

    /// Values on row `k`, ordered by up-count.
    pub fn row(&self, k: usize) -> &[f64] {
        let start = node_index(k, 0);
        &self.values[start..start + k + 1]
    }

    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        Self::from_fn(self.steps, |k, j| f(k, j, self.get(k, j)))
    }

    pub fn zip_with(
        &self,
        other: &NodeProcess,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        self.check_shape(other.steps)?;
        Ok(Self {
            steps: self.steps,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn check_shape(&self, steps: usize) -> Result<()> {
        if self.steps != steps {
            return Err(Error::ShapeMismatch(format!(
                "process has {} steps, expected {steps}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Rejects NaN and infinite entries; `what` names the process in the message.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (k, j) in nodes(self.steps) {
            let v = self.get(k, j);
            if !v.is_finite() {
                return Err(Error::NonFiniteInput(format!(
                    "{what} is {v} at node ({k},{j})"
                )));
            }
        }
        Ok(())
    }
}

/// One-step expectation `q*proc(k+1,j+1) + (1-q)*proc(k+1,j)`.
pub fn node_expectation(lat: &Lattice, proc: &NodeProcess, k: usize, j: usize) -> Result<f64> {
    if k >= lat.steps() || j > k {
        return Err(Error::OutOfRange(format!(
            "no one-step expectation at node ({k},{j}) of a {}-step lattice",
            lat.steps()
        )));
    }
    proc.check_shape(lat.steps())?;
    let q = lat.q();
    Ok(q * proc.get(k + 1, j + 1) + (1.0 - q) * proc.get(k + 1, j))
}

/// Two-rate unsecured cash account used as the benchmark (static hold of the endowment).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkAccount {
    r_lend: f64,
    r_borrow: f64,
}

impl BenchmarkAccount {
    pub fn new(r_lend: f64, r_borrow: f64) -> Result<Self> {
        if !(r_lend.is_finite() && r_borrow.is_finite() && 0.0 <= r_lend && r_lend <= r_borrow) {
            return Err(Error::InvalidParameters(format!(
                "benchmark rates need 0 <= r_lend <= r_borrow, got {r_lend}, {r_borrow}"
            )));
        }
        Ok(Self { r_lend, r_borrow })
    }

    pub fn zero() -> Self {
        Self {
            r_lend: 0.0,
            r_borrow: 0.0,
        }
    }

    pub fn r_lend(&self) -> f64 {
        self.r_lend
    }

    pub fn r_borrow(&self) -> f64 {
        self.r_borrow
    }

    /// Benchmark wealth at every node; constant across a row.
    pub fn wealth_process(&self, x: f64, grid: &TimeGrid) -> NodeProcess {
        NodeProcess::from_fn(grid.steps(), |k, _| benchmark_wealth(self, x, k, grid.dt()))
    }
}

/// Value after `k` steps of holding `x` in the lending (x >= 0) or borrowing (x < 0) account,
/// compounded per step as `(1 + r*dt)^k`.
pub fn benchmark_wealth(acct: &BenchmarkAccount, x: f64, k: usize, dt: f64) -> f64 {
    let r = if x >= 0.0 { acct.r_lend } else { acct.r_borrow };
    x * (1.0 + r * dt).powi(k as i32)
}

/// A sequence of up (true) / down (false) moves, packed into bits; bit `k` is the move from step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Path {
    bits: u64,
    steps: usize,
}

impl Path {
    pub fn new(bits: u64, steps: usize) -> Self {
        debug_assert!(steps <= 63);
        Self { bits, steps }
    }

    pub fn id(&self) -> u64 {
        self.bits
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_up(&self, k: usize) -> bool {
        (self.bits >> k) & 1 == 1
    }

    /// Up-count after `k` moves, i.e. the node index on row `k`.
    pub fn up_count(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            (self.bits & ((1u64 << k) - 1)).count_ones() as usize
        }
    }

    /// Every path of a `steps`-step tree.
    pub fn all(steps: usize) -> impl Iterator<Item = Path> {
        (0..1u64 << steps).map(move |bits| Path { bits, steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize) -> Lattice {
        build_lattice(100.0, 1.2, 0.8, TimeGrid::new(1.0, n).unwrap()).unwrap()
    }

    #[test]
    fn one_step_lattice() {
        let l = lat(1);
        assert_eq!(l.q(), 0.5);
        assert_eq!(l.price(1, 1), 120.0);
        assert_eq!(l.price(1, 0), 80.0);
    }

    #[test]
    fn rejects_degenerate_factors() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        assert!(matches!(
            build_lattice(100.0, 1.1, 1.05, g),
            Err(Error::DegenerateLattice(_))
        ));
        assert!(build_lattice(100.0, 0.9, 0.8, g).is_err());
        assert!(build_lattice(100.0, 1.2, 1.2, g).is_err());
        assert!(build_lattice(-1.0, 1.2, 0.8, g).is_err());
    }

    #[test]
    fn recombination() {
        let l = lat(2);
        assert!((l.price(2, 1) - 96.0).abs() < 1e-12);
        assert!((l.price(2, 1) - 100.0 * 1.2 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_zero_steps() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.time(4), 2.0);
    }

    #[test]
    fn benchmark_examples() {
        let zero = BenchmarkAccount::zero();
        assert_eq!(benchmark_wealth(&zero, 7.0, 5, 0.2), 7.0);
        let a = BenchmarkAccount::new(0.02, 0.1).unwrap();
        assert!((benchmark_wealth(&a, -1.0, 1, 1.0) + 1.1).abs() < 1e-15);
        assert_eq!(benchmark_wealth(&a, 0.0, 9, 0.3), 0.0);
        assert!(BenchmarkAccount::new(0.1, 0.02).is_err());
    }

    #[test]
    fn expectation_examples() {
        let l = lat(1);
        let terminal = NodeProcess::from_fn(1, |k, j| if k == 1 && j == 0 { 20.0 } else { 0.0 });
        assert_eq!(node_expectation(&l, &terminal, 0, 0).unwrap(), 10.0);
        let c = NodeProcess::constant(1, 3.25);
        assert_eq!(node_expectation(&l, &c, 0, 0).unwrap(), 3.25);
        assert!(matches!(
            node_expectation(&l, &c, 1, 0),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn price_is_martingale() {
        let l = build_lattice(37.0, 1.13, 0.91, TimeGrid::new(3.0, 7).unwrap()).unwrap();
        let s = l.price_process();
        for k in 0..7 {
            for j in 0..=k {
                let e = node_expectation(&l, &s, k, j).unwrap();
                assert!((e - s.get(k, j)).abs() <= 1e-13 * s.get(k, j));
            }
        }
    }

    #[test]
    fn path_up_counts() {
        let p = Path::new(0b101, 3);
        assert_eq!(p.up_count(0), 0);
        assert_eq!(p.up_count(1), 1);
        assert_eq!(p.up_count(2), 1);
        assert_eq!(p.up_count(3), 2);
        assert_eq!(Path::all(4).count(), 16);
    }
}
