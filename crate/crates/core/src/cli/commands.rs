//! Subcommand implementations. Data files are deterministic; timings go to `run.log`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::cli::config::{
    apply_tol_overrides, load_value, parse_value, set_axis, Format, Resolved, RunConfig,
};
use crate::cli::csv_io::{fmt_f64, write_node_process, write_region, write_rows};
use crate::cli::{exit, Cli, Command};
use crate::error::{Error, Result};
use crate::model::Path as LatticePath;
use crate::oracle::{game_value_brute, saddle_check};
use crate::pricing::{acceptable_price_with_tol, QuoteResult, Side};
use crate::replication::{forward_wealth, verify_replication, MAX_TABLE_STEPS};

/// What a command prints and how the process should exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    /// Lines for stderr describing failed checks.
    pub failures: Vec<String>,
}

struct Context {
    resolved: Resolved,
    /// Raw config tree, kept for sweeps.
    tree: toml::Value,
    base_dir: PathBuf,
    out_dir: PathBuf,
    overrides: Vec<String>,
}

impl Context {
    fn cfg(&self) -> &RunConfig {
        &self.resolved.config
    }

    fn wants(&self, f: Format) -> bool {
        self.cfg().output.wants(f)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn quote(&self, side: Side) -> Result<QuoteResult> {
        let r = &self.resolved;
        acceptable_price_with_tol(
            &r.contract,
            &r.view(side),
            &r.generator,
            &r.lattice,
            self.cfg().tolerances.obstacle_eq,
        )
    }
}

fn load(cli: &Cli) -> Result<Context> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let tree = load_value(path)?;
    let mut cfg = parse_value(tree.clone())?;
    apply_tol_overrides(&mut cfg, &cli.tol_override)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = cfg.output.dir.clone();
    let resolved = cfg.resolve(&base_dir)?;
    Ok(Context {
        resolved,
        tree,
        base_dir,
        out_dir,
        overrides: cli.tol_override.clone(),
    })
}

/// Runs the parsed command inside a thread pool capped at `--workers`.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    if cli.workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let ctx = load(cli)?;
    fs::create_dir_all(&ctx.out_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.workers {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let (name, result) = pool.install(|| match &cli.command {
        Command::Price => ("price", cmd_price(&ctx)),
        Command::Oracle => ("oracle", cmd_oracle(&ctx, start)),
        Command::Replicate => ("replicate", cmd_replicate(&ctx)),
        Command::Regions => ("regions", cmd_regions(&ctx)),
        Command::Sweep { axis, values } => ("sweep", cmd_sweep(&ctx, axis, values)),
    });
    let elapsed = start.elapsed();
    let status = match &result {
        Ok(o) => format!("exit {}", o.code),
        Err(e) => format!("error {e}"),
    };
    fs::write(
        ctx.file("run.log"),
        format!(
            "command {name}\nworkers {}\nruntime_ms {}\n{status}\n",
            pool.current_num_threads(),
            elapsed.as_millis()
        ),
    )?;
    result
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn write_json<T: Serialize>(ctx: &Context, name: &str, v: &T) -> Result<String> {
    let text = to_json(v);
    if ctx.wants(Format::Json) {
        fs::write(ctx.file(name), &text)?;
    }
    Ok(text)
}

fn write_resolved_config(ctx: &Context) -> Result<()> {
    fs::write(ctx.file("config.resolved.toml"), ctx.cfg().to_toml()?)?;
    Ok(())
}

/// One JSON object for a single side, or `{hedger, counterparty, ...}` for both.
fn per_side<T: Serialize>(items: Vec<(Side, T)>, spread: Option<f64>) -> serde_json::Value {
    if items.len() == 1 {
        return serde_json::to_value(&items[0].1).expect("report types serialize");
    }
    let mut map = serde_json::Map::new();
    for (side, item) in items {
        map.insert(
            side.name().to_string(),
            serde_json::to_value(item).expect("report types serialize"),
        );
    }
    if let Some(s) = spread {
        map.insert("spread".into(), serde_json::json!(s));
    }
    serde_json::Value::Object(map)
}

#[derive(Debug, Serialize)]
struct QuoteJson {
    side: &'static str,
    price: f64,
    y0: f64,
    residual_max: f64,
}

#[derive(Debug, Serialize)]
struct SolutionJson {
    y0: f64,
    residual_max: f64,
    iterations_max: usize,
}

fn write_regions(ctx: &Context, q: &QuoteResult) -> Result<()> {
    let side = q.view.side.name();
    for (name, region) in [
        ("sigma", &q.region_sigma),
        ("tau", &q.region_tau),
        ("bar_sigma", &q.region_bar_sigma),
        ("bar_tau", &q.region_bar_tau),
    ] {
        write_region(&ctx.file(&format!("{side}_region_{name}.csv")), region)?;
    }
    Ok(())
}

fn cmd_price(ctx: &Context) -> Result<Outcome> {
    let mut quotes = Vec::new();
    for side in ctx.resolved.sides() {
        let q = ctx.quote(side)?;
        let name = side.name();
        let sol = &q.solution;
        if ctx.wants(Format::Csv) {
            for (field, proc) in [
                ("Y", &sol.y),
                ("Z", &sol.z),
                ("dL", &sol.dl),
                ("dU", &sol.du),
            ] {
                write_node_process(&ctx.file(&format!("{name}_{field}.csv")), proc)?;
            }
            write_regions(ctx, &q)?;
        }
        write_json(
            ctx,
            &format!("{name}_solution.json"),
            &SolutionJson {
                y0: sol.y0(),
                residual_max: sol.residual_max,
                iterations_max: sol.iterations_max,
            },
        )?;
        quotes.push(q);
    }
    write_resolved_config(ctx)?;
    let spread = (quotes.len() == 2).then(|| quotes[0].price - quotes[1].price);
    let items = quotes
        .iter()
        .map(|q| {
            (
                q.view.side,
                QuoteJson {
                    side: q.view.side.name(),
                    price: q.price,
                    y0: q.y0(),
                    residual_max: q.solution.residual_max,
                },
            )
        })
        .collect();
    let stdout = write_json(ctx, "quote.json", &per_side(items, spread))?;
    Ok(Outcome {
        code: exit::OK,
        stdout,
        failures: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct OracleJson {
    side: &'static str,
    upper: f64,
    lower: f64,
    y0: f64,
    matches_upper: bool,
    has_value: bool,
    n_rules: usize,
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_ms: Option<u128>,
}

fn cmd_oracle(ctx: &Context, start: Instant) -> Result<Outcome> {
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for side in ctx.resolved.sides() {
        let q = ctx.quote(side)?;
        let report = game_value_brute(&q.inputs)?;
        let diag = saddle_check(&report, q.y0(), ctx.cfg().tolerances.oracle);
        if !diag.matches_upper {
            failures.push(format!(
                "oracle mismatch for {}: y0 = {}, upper value = {}",
                side.name(),
                q.y0(),
                report.upper_value
            ));
        }
        items.push((
            side,
            OracleJson {
                side: side.name(),
                upper: report.upper_value,
                lower: report.lower_value,
                y0: q.y0(),
                matches_upper: diag.matches_upper,
                has_value: diag.has_value,
                n_rules: report.rule_count,
                method: format!("{:?}", report.method),
                runtime_ms: None,
            },
        ));
    }
    write_resolved_config(ctx)?;
    write_json(ctx, "oracle.json", &per_side(items.clone(), None))?;
    let runtime = start.elapsed().as_millis();
    for (_, item) in &mut items {
        item.runtime_ms = Some(runtime);
    }
    Ok(Outcome {
        code: if failures.is_empty() {
            exit::OK
        } else {
            exit::BATTERY
        },
        stdout: to_json(&per_side(items, None)),
        failures,
    })
}

#[derive(Debug, Serialize)]
struct ReplicateJson {
    side: &'static str,
    replicates: bool,
    max_gap: f64,
    ao_at_plus: bool,
    sh_fails_at_minus: bool,
    n_paths: u64,
    be: bool,
    epsilon: f64,
    first_failing_path: Option<u64>,
}

fn write_paths(ctx: &Context, q: &QuoteResult) -> Result<()> {
    let n = q.steps();
    if n > MAX_TABLE_STEPS {
        return Err(Error::TooManyPaths {
            steps: n,
            limit: MAX_TABLE_STEPS,
        });
    }
    let sol = &q.solution;
    let rows: Vec<Vec<Vec<String>>> = (0..1u64 << n)
        .into_par_iter()
        .map(|id| {
            let path = LatticePath::new(id, n);
            let w = forward_wealth(sol.y0(), &sol.z, &q.inputs.dynamics, path, Some(sol))?;
            Ok((0..=n)
                .map(|k| {
                    vec![
                        id.to_string(),
                        k.to_string(),
                        fmt_f64(w.values[k]),
                        fmt_f64(sol.y.get(k, path.up_count(k))),
                        fmt_f64(w.l_cum[k]),
                        fmt_f64(w.u_cum[k]),
                    ]
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let f = fs::File::create(ctx.file(&format!("{}_paths.csv", q.view.side.name())))?;
    write_rows(
        std::io::BufWriter::new(f),
        &["path_id", "step", "V", "Y", "L_cum", "U_cum"],
        rows.into_iter().flatten(),
    )
}

fn cmd_replicate(ctx: &Context) -> Result<Outcome> {
    let mut items = Vec::new();
    let mut failures = Vec::new();
    let bump = ctx.cfg().replicate.perturb_root_hedge;
    for side in ctx.resolved.sides() {
        let mut q = ctx.quote(side)?;
        if bump != 0.0 {
            let z0 = q.solution.z.get(0, 0);
            q.solution.z.set(0, 0, z0 + bump);
        }
        let rep = verify_replication(&q, ctx.cfg().tolerances.replication)?;
        if ctx.wants(Format::Paths) {
            write_paths(ctx, &q)?;
        }
        if !rep.passed() {
            let mut line = format!(
                "replication failed for {}: replicates = {}, ao_at_plus = {}, sh_fails_at_minus = {}",
                side.name(),
                rep.replicates,
                rep.ao_at_plus,
                rep.sh_fails_at_minus
            );
            if let Some(id) = rep.first_failing_path {
                let _ = write!(line, ", first failing path id {id}");
            }
            failures.push(line);
        }
        items.push((
            side,
            ReplicateJson {
                side: side.name(),
                replicates: rep.replicates,
                max_gap: rep.max_gap,
                ao_at_plus: rep.ao_at_plus,
                sh_fails_at_minus: rep.sh_fails_at_minus,
                n_paths: rep.n_paths,
                be: rep.be,
                epsilon: rep.epsilon,
                first_failing_path: rep.first_failing_path,
            },
        ));
    }
    write_resolved_config(ctx)?;
    let stdout = write_json(ctx, "replicate.json", &per_side(items, None))?;
    Ok(Outcome {
        code: if failures.is_empty() {
            exit::OK
        } else {
            exit::BATTERY
        },
        stdout,
        failures,
    })
}

#[derive(Debug, Serialize)]
struct RegionsJson {
    side: &'static str,
    sigma: usize,
    tau: usize,
    bar_sigma: usize,
    bar_tau: usize,
}

fn cmd_regions(ctx: &Context) -> Result<Outcome> {
    let mut items = Vec::new();
    for side in ctx.resolved.sides() {
        let q = ctx.quote(side)?;
        write_regions(ctx, &q)?;
        items.push((
            side,
            RegionsJson {
                side: side.name(),
                sigma: q.region_sigma.len(),
                tau: q.region_tau.len(),
                bar_sigma: q.region_bar_sigma.len(),
                bar_tau: q.region_bar_tau.len(),
            },
        ));
    }
    Ok(Outcome {
        code: exit::OK,
        stdout: to_json(&per_side(items, None)),
        failures: Vec::new(),
    })
}

fn sweep_point(ctx: &Context, tree: toml::Value) -> Result<[f64; 2]> {
    let mut cfg = parse_value(tree)?;
    apply_tol_overrides(&mut cfg, &ctx.overrides)?;
    let r = cfg.resolve(&ctx.base_dir)?;
    let tol = r.config.tolerances.obstacle_eq;
    let [h, c] = r.both_views();
    let ph = acceptable_price_with_tol(&r.contract, &h, &r.generator, &r.lattice, tol)?.price;
    let pc = acceptable_price_with_tol(&r.contract, &c, &r.generator, &r.lattice, tol)?.price;
    Ok([ph, pc])
}

fn cmd_sweep(ctx: &Context, axis: &str, values: &[f64]) -> Result<Outcome> {
    let trees = values
        .iter()
        .map(|&x| {
            let mut t = ctx.tree.clone();
            set_axis(&mut t, axis, x)?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let prices = trees
        .into_par_iter()
        .map(|t| sweep_point(ctx, t))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows = values
        .iter()
        .zip(&prices)
        .map(|(x, [ph, pc])| vec![fmt_f64(*x), fmt_f64(*ph), fmt_f64(*pc), fmt_f64(ph - pc)]);
    let mut buf = Vec::new();
    write_rows(
        &mut buf,
        &["value", "price_hedger", "price_counterparty", "spread"],
        rows,
    )?;
    if ctx.wants(Format::Csv) {
        fs::write(ctx.file("sweep.csv"), &buf)?;
    }
    write_resolved_config(ctx)?;
    Ok(Outcome {
        code: exit::OK,
        stdout: String::from_utf8(buf).expect("csv output is utf-8"),
        failures: Vec::new(),
    })
}
