//! TOML run configuration and its resolution into model objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::csv_io::read_node_process;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::model::{build_lattice, BenchmarkAccount, Lattice, NodeProcess, TimeGrid};
use crate::pricing::{
    builtin_game_bond, builtin_israeli_put, ContractSpec, PartyView, Side, OBSTACLE_EQ_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub s0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Alternative to `u`/`d`: `u = exp(vol * sqrt(dt))`, `d = 1/u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorBlock {
    #[default]
    Zero,
    Linear {
        r: f64,
    },
    Differential {
        r_lend: f64,
        r_borrow: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkBlock {
    #[serde(default)]
    pub r_lend: f64,
    #[serde(default)]
    pub r_borrow: f64,
}

/// Node-process CSV files of a custom contract, relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractFiles {
    pub xh: PathBuf,
    pub xc: PathBuf,
    pub xbar: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContractBlock {
    IsraeliPut {
        strike: f64,
        penalty: f64,
    },
    GameBond {
        face: f64,
        #[serde(default)]
        coupon: f64,
        call_penalty: f64,
        #[serde(default)]
        put_discount: f64,
    },
    Custom {
        files: ContractFiles,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideChoice {
    #[default]
    Hedger,
    Counterparty,
    Both,
}

impl SideChoice {
    pub fn sides(self) -> Vec<Side> {
        match self {
            SideChoice::Hedger => vec![Side::Hedger],
            SideChoice::Counterparty => vec![Side::Counterparty],
            SideChoice::Both => vec![Side::Hedger, Side::Counterparty],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartyBlock {
    #[serde(default)]
    pub side: SideChoice,
    /// Endowment of the quoting side; with `side = "both"` it is the hedger's.
    #[serde(default)]
    pub endowment: f64,
    /// Counterparty endowment when `side = "both"` (defaults to `endowment`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterparty_endowment: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_obstacle_eq")]
    pub obstacle_eq: f64,
    #[serde(default = "default_tol")]
    pub oracle: f64,
    #[serde(default = "default_tol")]
    pub replication: f64,
}

fn default_obstacle_eq() -> f64 {
    OBSTACLE_EQ_TOL
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            obstacle_eq: default_obstacle_eq(),
            oracle: default_tol(),
            replication: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateBlock {
    /// Added to the solved hedge ratio at the root before the replication checks.
    #[serde(default)]
    pub perturb_root_hedge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeBlock,
    #[serde(default)]
    pub generator: GeneratorBlock,
    #[serde(default)]
    pub benchmark: BenchmarkBlock,
    pub contract: ContractBlock,
    #[serde(default)]
    pub party: PartyBlock,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub replicate: ReplicateBlock,
}

/// Everything a command needs, built from a validated [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub lattice: Lattice,
    pub generator: Generator,
    pub account: BenchmarkAccount,
    pub contract: ContractSpec,
}

impl Resolved {
    pub fn sides(&self) -> Vec<Side> {
        self.config.party.side.sides()
    }

    pub fn view(&self, side: Side) -> PartyView {
        let party = &self.config.party;
        let endowment = match (party.side, side) {
            (SideChoice::Both, Side::Counterparty) => {
                party.counterparty_endowment.unwrap_or(party.endowment)
            }
            _ => party.endowment,
        };
        PartyView::new(side, endowment, self.account)
    }

    /// Views of both parties, as used by a sweep.
    pub fn both_views(&self) -> [PartyView; 2] {
        let party = &self.config.party;
        let (h, c) = match party.side {
            SideChoice::Hedger => (
                party.endowment,
                party.counterparty_endowment.unwrap_or(party.endowment),
            ),
            SideChoice::Counterparty => (
                party.counterparty_endowment.unwrap_or(party.endowment),
                party.endowment,
            ),
            SideChoice::Both => (
                party.endowment,
                party.counterparty_endowment.unwrap_or(party.endowment),
            ),
        };
        [
            PartyView::new(Side::Hedger, h, self.account),
            PartyView::new(Side::Counterparty, c, self.account),
        ]
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Reads a config file into a TOML tree.
pub fn load_value(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Value>()
        .map_err(|e| config_err(format!("{}: {e}", path.display())))
}

pub fn parse_value(value: toml::Value) -> Result<RunConfig> {
    RunConfig::deserialize(value).map_err(|e| config_err(e.to_string()))
}

/// Applies `key=value` overrides of the tolerance block.
pub fn apply_tol_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("tolerance override {item:?} is not key=value")))?;
        let v: f64 = raw.trim().parse().map_err(|_| {
            config_err(format!(
                "tolerance override {item:?}: {raw:?} is not a number"
            ))
        })?;
        let slot = match key.trim() {
            "obstacle_eq" => &mut cfg.tolerances.obstacle_eq,
            "oracle" => &mut cfg.tolerances.oracle,
            "replication" => &mut cfg.tolerances.replication,
            other => return Err(config_err(format!("unknown tolerance {other:?}"))),
        };
        *slot = v;
    }
    Ok(())
}

/// Sets the numeric leaf at the dotted `axis` of a config tree.
///
/// The leaf must already exist and be numeric; integer leaves only accept integral values.
pub fn set_axis(value: &mut toml::Value, axis: &str, x: f64) -> Result<()> {
    let mut node = value;
    for part in axis.split('.') {
        node = node
            .get_mut(part)
            .ok_or_else(|| config_err(format!("unknown sweep axis {axis:?}")))?;
    }
    match node {
        toml::Value::Float(f) => *f = x,
        toml::Value::Integer(i) => {
            if x.fract() != 0.0 || !x.is_finite() {
                return Err(config_err(format!("axis {axis:?} is an integer, got {x}")));
            }
            *i = x as i64;
        }
        _ => return Err(config_err(format!("sweep axis {axis:?} is not numeric"))),
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("obstacle_eq", t.obstacle_eq),
            ("oracle", t.oracle),
            ("replication", t.replication),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("tolerance {name} must be > 0, got {v}")));
            }
        }
        let p = &self.party;
        if !p.endowment.is_finite() || !p.counterparty_endowment.unwrap_or(0.0).is_finite() {
            return Err(config_err("endowments must be finite"));
        }
        Ok(())
    }

    fn lattice(&self) -> Result<Lattice> {
        let l = &self.lattice;
        let grid = TimeGrid::new(l.horizon, l.steps)?;
        match (l.u, l.d, l.vol) {
            (Some(u), Some(d), None) => build_lattice(l.s0, u, d, grid),
            (None, None, Some(vol)) => Lattice::from_volatility(l.s0, vol, grid),
            _ => Err(config_err("lattice needs either u and d, or vol")),
        }
    }

    fn generator(&self) -> Result<Generator> {
        match self.generator {
            GeneratorBlock::Zero => Ok(Generator::Zero),
            GeneratorBlock::Linear { r } => Generator::linear(r),
            GeneratorBlock::Differential { r_lend, r_borrow } => {
                Generator::differential(r_lend, r_borrow)
            }
        }
    }

    fn contract(&self, lat: &Lattice, base_dir: &Path) -> Result<ContractSpec> {
        match &self.contract {
            ContractBlock::IsraeliPut { strike, penalty } => {
                builtin_israeli_put(*strike, *penalty, lat)
            }
            ContractBlock::GameBond {
                face,
                coupon,
                call_penalty,
                put_discount,
            } => builtin_game_bond(*face, *coupon, *call_penalty, *put_discount, lat),
            ContractBlock::Custom { files } => {
                let n = lat.steps();
                let read = |name: &str, p: &Path| -> Result<NodeProcess> {
                    let full = base_dir.join(p);
                    let proc = read_node_process(&full).map_err(|e| {
                        config_err(format!("contract file {name} ({}): {e}", full.display()))
                    })?;
                    proc.check_shape(n)
                        .map_err(|e| Error::ShapeMismatch(format!("contract file {name}: {e}")))?;
                    Ok(proc)
                };
                let da = match &files.da {
                    Some(p) => read("da", p)?,
                    None => NodeProcess::zeros(n),
                };
                ContractSpec::new(
                    read("xh", &files.xh)?,
                    read("xc", &files.xc)?,
                    read("xbar", &files.xbar)?,
                    da,
                )
            }
        }
    }

    /// Builds the model objects; relative contract files are looked up under `base_dir`.
    pub fn resolve(self, base_dir: &Path) -> Result<Resolved> {
        self.validate()?;
        let lattice = self.lattice()?;
        let generator = self.generator()?;
        let account = BenchmarkAccount::new(self.benchmark.r_lend, self.benchmark.r_borrow)?;
        let contract = self.contract(&lattice, base_dir)?;
        Ok(Resolved {
            config: self,
            lattice,
            generator,
            account,
            contract,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }
}
