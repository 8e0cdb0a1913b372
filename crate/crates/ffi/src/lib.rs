//! C ABI over `gameopt`.
//!
//! Every fallible function returns a [`GameoptStatus`] and writes its result through an out
//! pointer. On failure the message is available from [`gameopt_last_error`] on the same
//! thread. Handles are opaque and must be released with the matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gameopt::cli::exit_code;
use gameopt::generator::Generator;
use gameopt::model::{build_lattice, node_count, BenchmarkAccount, Lattice, NodeProcess, TimeGrid};
use gameopt::oracle::{game_value_brute, saddle_check};
use gameopt::pricing::{
    acceptable_price, builtin_game_bond, builtin_israeli_put, ContractSpec, PartyView, QuoteResult,
    Region, Side,
};
use gameopt::replication::verify_replication;
use gameopt::Error;

/// Status codes; the non-zero values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameoptStatus {
    Ok = 0,
    /// Null pointer, wrong buffer length or unknown enum value.
    InvalidArgument = 1,
    Config = 2,
    Solver = 3,
    TooLarge = 4,
    /// A verification ran but did not pass.
    CheckFailed = 5,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameoptSide {
    Hedger = 0,
    Counterparty = 1,
}

/// Node fields of a solved quote.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameoptField {
    Y = 0,
    Z = 1,
    DL = 2,
    DU = 3,
}

/// Stopping regions of a quote, named as for the hedger: sigma is cancellation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameoptRegion {
    Sigma = 0,
    Tau = 1,
    BarSigma = 2,
    BarTau = 3,
}

pub struct GameoptLattice(Lattice);
pub struct GameoptGenerator(Generator);
pub struct GameoptContract(ContractSpec);
pub struct GameoptQuote(QuoteResult);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GameoptOracleReport {
    pub upper_value: f64,
    pub lower_value: f64,
    pub y0: f64,
    pub matches_upper: bool,
    pub has_value: bool,
    pub rule_count: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GameoptReplicationReport {
    pub replicates: bool,
    pub max_gap: f64,
    pub ao_at_plus: bool,
    pub sh_fails_at_minus: bool,
    pub n_paths: u64,
    /// `-1` when every path passed.
    pub first_failing_path: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: GameoptStatus, msg: impl Into<String>) -> GameoptStatus {
    set_error(msg.into());
    status
}

fn from_error(e: &Error) -> GameoptStatus {
    let status = match exit_code(e) {
        2 => GameoptStatus::Config,
        4 => GameoptStatus::TooLarge,
        _ => GameoptStatus::Solver,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), GameoptStatus>) -> GameoptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GameoptStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(GameoptStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, GameoptStatus>;
}

impl<T> OrStatus<T> for gameopt::Result<T> {
    fn or_status(self) -> Result<T, GameoptStatus> {
        self.map_err(|e| from_error(&e))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, GameoptStatus> {
    p.as_ref()
        .ok_or_else(|| fail(GameoptStatus::InvalidArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), GameoptStatus> {
    if out.is_null() {
        return Err(fail(GameoptStatus::InvalidArgument, "out pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn gameopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of lattice nodes of a `steps`-step tree, the length of every node buffer.
#[no_mangle]
pub extern "C" fn gameopt_node_count(steps: usize) -> usize {
    node_count(steps)
}

/// Binomial lattice with explicit up and down factors.
#[no_mangle]
pub unsafe extern "C" fn gameopt_lattice_new(
    s0: f64,
    up: f64,
    down: f64,
    horizon: f64,
    steps: usize,
    out: *mut *mut GameoptLattice,
) -> GameoptStatus {
    guard(|| {
        let grid = TimeGrid::new(horizon, steps).or_status()?;
        put(
            out,
            GameoptLattice(build_lattice(s0, up, down, grid).or_status()?),
        )
    })
}

/// Binomial lattice with `u = exp(vol * sqrt(dt))`, `d = 1/u`.
#[no_mangle]
pub unsafe extern "C" fn gameopt_lattice_from_volatility(
    s0: f64,
    vol: f64,
    horizon: f64,
    steps: usize,
    out: *mut *mut GameoptLattice,
) -> GameoptStatus {
    guard(|| {
        let grid = TimeGrid::new(horizon, steps).or_status()?;
        put(
            out,
            GameoptLattice(Lattice::from_volatility(s0, vol, grid).or_status()?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_lattice_steps(lattice: *const GameoptLattice) -> usize {
    lattice.as_ref().map_or(0, |l| l.0.steps())
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_lattice_free(lattice: *mut GameoptLattice) {
    free(lattice)
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_generator_zero(out: *mut *mut GameoptGenerator) -> GameoptStatus {
    guard(|| put(out, GameoptGenerator(Generator::Zero)))
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_generator_linear(
    r: f64,
    out: *mut *mut GameoptGenerator,
) -> GameoptStatus {
    guard(|| put(out, GameoptGenerator(Generator::linear(r).or_status()?)))
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_generator_differential(
    r_lend: f64,
    r_borrow: f64,
    out: *mut *mut GameoptGenerator,
) -> GameoptStatus {
    guard(|| {
        put(
            out,
            GameoptGenerator(Generator::differential(r_lend, r_borrow).or_status()?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_generator_free(generator: *mut GameoptGenerator) {
    free(generator)
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_contract_israeli_put(
    lattice: *const GameoptLattice,
    strike: f64,
    penalty: f64,
    out: *mut *mut GameoptContract,
) -> GameoptStatus {
    guard(|| {
        let lat = deref(lattice, "lattice")?;
        put(
            out,
            GameoptContract(builtin_israeli_put(strike, penalty, &lat.0).or_status()?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_contract_game_bond(
    lattice: *const GameoptLattice,
    face: f64,
    coupon: f64,
    call_penalty: f64,
    put_discount: f64,
    out: *mut *mut GameoptContract,
) -> GameoptStatus {
    guard(|| {
        let lat = deref(lattice, "lattice")?;
        let c = builtin_game_bond(face, coupon, call_penalty, put_discount, &lat.0).or_status()?;
        put(out, GameoptContract(c))
    })
}

unsafe fn node_buffer(
    p: *const f64,
    steps: usize,
    what: &str,
) -> Result<NodeProcess, GameoptStatus> {
    if p.is_null() {
        return Err(fail(
            GameoptStatus::InvalidArgument,
            format!("{what} is null"),
        ));
    }
    let values = std::slice::from_raw_parts(p, node_count(steps)).to_vec();
    NodeProcess::from_values(steps, values).or_status()
}

/// Custom contract from node buffers of length `gameopt_node_count(steps)`, ordered by step
/// then up-count. `da` may be null for no cashflow.
#[no_mangle]
pub unsafe extern "C" fn gameopt_contract_from_nodes(
    steps: usize,
    xh: *const f64,
    xc: *const f64,
    xbar: *const f64,
    da: *const f64,
    out: *mut *mut GameoptContract,
) -> GameoptStatus {
    guard(|| {
        let da = if da.is_null() {
            NodeProcess::zeros(steps)
        } else {
            node_buffer(da, steps, "da")?
        };
        let c = ContractSpec::new(
            node_buffer(xh, steps, "xh")?,
            node_buffer(xc, steps, "xc")?,
            node_buffer(xbar, steps, "xbar")?,
            da,
        )
        .or_status()?;
        put(out, GameoptContract(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_contract_free(contract: *mut GameoptContract) {
    free(contract)
}

/// Acceptable price of `side` (a [`GameoptSide`] value) with the given endowment and benchmark account rates.
#[no_mangle]
pub unsafe extern "C" fn gameopt_quote(
    contract: *const GameoptContract,
    lattice: *const GameoptLattice,
    generator: *const GameoptGenerator,
    side: u32,
    endowment: f64,
    r_lend: f64,
    r_borrow: f64,
    out: *mut *mut GameoptQuote,
) -> GameoptStatus {
    guard(|| {
        let c = deref(contract, "contract")?;
        let lat = deref(lattice, "lattice")?;
        let gen = deref(generator, "generator")?;
        let side = match side {
            x if x == GameoptSide::Hedger as u32 => Side::Hedger,
            x if x == GameoptSide::Counterparty as u32 => Side::Counterparty,
            other => {
                return Err(fail(
                    GameoptStatus::InvalidArgument,
                    format!("unknown side {other}"),
                ))
            }
        };
        let account = BenchmarkAccount::new(r_lend, r_borrow).or_status()?;
        let view = PartyView::new(side, endowment, account);
        put(
            out,
            GameoptQuote(acceptable_price(&c.0, &view, &gen.0, &lat.0).or_status()?),
        )
    })
}

/// Acceptable price, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn gameopt_quote_price(quote: *const GameoptQuote) -> f64 {
    quote.as_ref().map_or(f64::NAN, |q| q.0.price)
}

/// Root value of the solved equation, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn gameopt_quote_y0(quote: *const GameoptQuote) -> f64 {
    quote.as_ref().map_or(f64::NAN, |q| q.0.y0())
}

/// Copies a node field (a [`GameoptField`] value) into `buf`, which must hold exactly `gameopt_node_count(steps)` values.
#[no_mangle]
pub unsafe extern "C" fn gameopt_quote_field(
    quote: *const GameoptQuote,
    field: u32,
    buf: *mut f64,
    len: usize,
) -> GameoptStatus {
    guard(|| {
        let q = &deref(quote, "quote")?.0;
        let sol = &q.solution;
        let proc = match field {
            x if x == GameoptField::Y as u32 => &sol.y,
            x if x == GameoptField::Z as u32 => &sol.z,
            x if x == GameoptField::DL as u32 => &sol.dl,
            x if x == GameoptField::DU as u32 => &sol.du,
            other => {
                return Err(fail(
                    GameoptStatus::InvalidArgument,
                    format!("unknown field {other}"),
                ))
            }
        };
        let values = proc.values();
        if buf.is_null() || len != values.len() {
            return Err(fail(
                GameoptStatus::InvalidArgument,
                format!("buffer must hold {} values", values.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(values);
        Ok(())
    })
}

fn region_of(q: &QuoteResult, region: u32) -> Option<&Region> {
    match region {
        x if x == GameoptRegion::Sigma as u32 => Some(&q.region_sigma),
        x if x == GameoptRegion::Tau as u32 => Some(&q.region_tau),
        x if x == GameoptRegion::BarSigma as u32 => Some(&q.region_bar_sigma),
        x if x == GameoptRegion::BarTau as u32 => Some(&q.region_bar_tau),
        _ => None,
    }
}

/// Writes 1 for nodes of `region` (a [`GameoptRegion`] value) and 0 otherwise into `buf` of length `gameopt_node_count(steps)`.
#[no_mangle]
pub unsafe extern "C" fn gameopt_quote_region(
    quote: *const GameoptQuote,
    region: u32,
    buf: *mut u8,
    len: usize,
) -> GameoptStatus {
    guard(|| {
        let q = &deref(quote, "quote")?.0;
        let r = region_of(q, region).ok_or_else(|| {
            fail(
                GameoptStatus::InvalidArgument,
                format!("unknown region {region}"),
            )
        })?;
        let n = q.steps();
        if buf.is_null() || len != node_count(n) {
            return Err(fail(
                GameoptStatus::InvalidArgument,
                format!("buffer must hold {} values", node_count(n)),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        let mut i = 0;
        for k in 0..=n {
            for j in 0..=k {
                out[i] = u8::from(r.contains(k, j));
                i += 1;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gameopt_quote_free(quote: *mut GameoptQuote) {
    free(quote)
}

/// Brute-force game values of the quote's obstacle problem. Returns `CHECK_FAILED` (with the
/// report filled in) when the root value does not match the upper value within `tol`.
#[no_mangle]
pub unsafe extern "C" fn gameopt_oracle(
    quote: *const GameoptQuote,
    tol: f64,
    out: *mut GameoptOracleReport,
) -> GameoptStatus {
    guard(|| {
        let q = &deref(quote, "quote")?.0;
        if out.is_null() {
            return Err(fail(GameoptStatus::InvalidArgument, "out pointer is null"));
        }
        let rep = game_value_brute(&q.inputs).or_status()?;
        let diag = saddle_check(&rep, q.y0(), tol);
        *out = GameoptOracleReport {
            upper_value: rep.upper_value,
            lower_value: rep.lower_value,
            y0: q.y0(),
            matches_upper: diag.matches_upper,
            has_value: diag.has_value,
            rule_count: rep.rule_count as u64,
        };
        if diag.matches_upper {
            Ok(())
        } else {
            Err(fail(
                GameoptStatus::CheckFailed,
                format!(
                    "y0 = {} differs from the upper value {}",
                    q.y0(),
                    rep.upper_value
                ),
            ))
        }
    })
}

/// Forward replication and price probes. Returns `CHECK_FAILED` (with the report filled in)
/// when any check fails.
#[no_mangle]
pub unsafe extern "C" fn gameopt_replicate(
    quote: *const GameoptQuote,
    tol: f64,
    out: *mut GameoptReplicationReport,
) -> GameoptStatus {
    guard(|| {
        let q = &deref(quote, "quote")?.0;
        if out.is_null() {
            return Err(fail(GameoptStatus::InvalidArgument, "out pointer is null"));
        }
        let rep = verify_replication(q, tol).or_status()?;
        *out = GameoptReplicationReport {
            replicates: rep.replicates,
            max_gap: rep.max_gap,
            ao_at_plus: rep.ao_at_plus,
            sh_fails_at_minus: rep.sh_fails_at_minus,
            n_paths: rep.n_paths,
            first_failing_path: rep.first_failing_path.map_or(-1, |p| p as i64),
        };
        if rep.passed() {
            Ok(())
        } else {
            Err(fail(
                GameoptStatus::CheckFailed,
                "replication checks failed",
            ))
        }
    })
}
