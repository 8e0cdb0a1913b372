#![allow(dead_code)]

use gameopt::generator::{check_admissible, Generator};
use gameopt::model::{build_lattice, BenchmarkAccount, Lattice, NodeProcess, TimeGrid};
use gameopt::pricing::{acceptable_price, ContractSpec, PartyView, QuoteResult, Side};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A solved-ready game instance with both parties' endowments.
#[derive(Debug, Clone)]
pub struct Instance {
    pub lattice: Lattice,
    pub generator: Generator,
    pub contract: ContractSpec,
    pub account: BenchmarkAccount,
    pub hedger_endowment: f64,
    pub counterparty_endowment: f64,
}

impl Instance {
    pub fn view(&self, side: Side) -> PartyView {
        let x = match side {
            Side::Hedger => self.hedger_endowment,
            Side::Counterparty => self.counterparty_endowment,
        };
        PartyView::new(side, x, self.account)
    }

    pub fn quote(&self, side: Side) -> QuoteResult {
        acceptable_price(
            &self.contract,
            &self.view(side),
            &self.generator,
            &self.lattice,
        )
        .expect("random instance solves")
    }
}

pub fn random_lattice(rng: &mut TestRng, steps: usize) -> Lattice {
    let s0 = rng.gen_range(50.0..150.0);
    let u = rng.gen_range(1.05..1.4);
    let d = rng.gen_range(0.7..0.97);
    let horizon = rng.gen_range(0.25..2.0);
    build_lattice(s0, u, d, TimeGrid::new(horizon, steps).unwrap()).unwrap()
}

/// Draws a builtin generator and halves its rates until the lattice admits it.
pub fn random_generator(rng: &mut TestRng, lat: &Lattice) -> Generator {
    let kind = rng.gen_range(0..3);
    let (mut a, mut b) = (rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.5));
    loop {
        let gen = match kind {
            0 => Generator::Zero,
            1 => Generator::linear(a).unwrap(),
            _ => Generator::differential(a, a + b).unwrap(),
        };
        if check_admissible(&gen, lat).is_ok() {
            return gen;
        }
        a *= 0.5;
        b *= 0.5;
    }
}

/// Random contract with `xh < xc`, tie payoff inside the band and an optional cashflow.
pub fn random_contract(rng: &mut TestRng, steps: usize, with_cashflow: bool) -> ContractSpec {
    let mut xh = NodeProcess::zeros(steps);
    let mut xc = NodeProcess::zeros(steps);
    let mut xbar = NodeProcess::zeros(steps);
    let mut da = NodeProcess::zeros(steps);
    for k in 0..=steps {
        for j in 0..=k {
            let c = rng.gen_range(-20.0..20.0);
            let gap = rng.gen_range(0.1..10.0);
            let w: f64 = rng.gen_range(0.0..1.0);
            xc.set(k, j, c);
            xh.set(k, j, c - gap);
            xbar.set(k, j, c - gap + w * gap);
            if with_cashflow && k < steps {
                da.set(k, j, rng.gen_range(-1.0..1.0));
            }
        }
    }
    ContractSpec::new(xh, xc, xbar, da).unwrap()
}

pub fn random_instance(rng: &mut TestRng, max_steps: usize) -> Instance {
    let steps = rng.gen_range(1..=max_steps);
    let lattice = random_lattice(rng, steps);
    let generator = random_generator(rng, &lattice);
    let with_cashflow = rng.gen_bool(0.5);
    let contract = random_contract(rng, steps, with_cashflow);
    let r_lend = rng.gen_range(0.0..0.1);
    let account = BenchmarkAccount::new(r_lend, r_lend + rng.gen_range(0.0..0.1)).unwrap();
    Instance {
        lattice,
        generator,
        contract,
        account,
        hedger_endowment: rng.gen_range(-10.0..10.0),
        counterparty_endowment: rng.gen_range(-10.0..10.0),
    }
}
