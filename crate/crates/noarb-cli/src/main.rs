//! Command line front end: diagnose markets, price claims, reproduce the
//! bond-gap experiment, verify strategies, decompose tree deflators, and run
//! the randomized no-arbitrage equivalence suite.
//!
//! Exit codes: 0 when a deflator/measure exists (or the command succeeded),
//! 2 when the market is arbitrageable or no deflator exists, 1 on input
//! errors. All randomness flows from `--seed` through fixed substreams
//! (assets = 0, deflator = 1, auxiliary driver = 2), so repeated runs are
//! bit-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;

use noarb_core::arbitrage::{brute_force_na, decide_na, BruteForceVerdict, LpCertificate};
use noarb_core::deflator::{
    build_deflator_paths, multiplicative_doob_decompose, solve_market_price_of_risk, PathDeflator,
    RiskPriceOutcome, RiskPriceSolution,
};
use noarb_core::error::Error;
use noarb_core::instances::random_tree;
use noarb_core::market::{
    load_market, savings_account_values, ItoMarketSpec, Market, RateCurve, ScenarioTree,
};
use noarb_core::portfolio::{
    build_mean_self_financing, roll_forward, roll_forward_tree, AllocationRule, PathStrategy,
    TreeStrategy,
};
use noarb_core::pricing::{
    bond_gap_experiment, csv_header, price_forward_measure, price_real_world,
    price_real_world_tree, price_risk_neutral, price_risk_neutral_tree, PricingResult,
};
use noarb_core::rat::{format_rat, parse_rat, rat_one};
use noarb_core::rng::{CounterRng, STREAM_INSTANCES};
use noarb_core::sde::{asset_label, martingale_test, simulate_stochastic_exponential, TestMode};
use noarb_core::{DEFAULT_CONFIDENCE, DEFAULT_GRID_CELLS, DEFAULT_N_PATHS, DEFAULT_SEED};

#[derive(Parser)]
#[command(
    name = "noarb",
    version,
    about = "Deflator construction, arbitrage diagnostics and claim pricing for finite market models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Seed for every random stream (fixed default, never time-based).
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Number of Monte Carlo paths.
    #[arg(long, default_value_t = DEFAULT_N_PATHS as u32)]
    n_paths: u32,
    /// Confidence multiplier for the statistical tests.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    confidence: f64,
    /// Minimum number of grid cells for simulation (cells are split evenly).
    #[arg(long, default_value_t = DEFAULT_GRID_CELLS as u32)]
    grid_cells: u32,
    /// Directory to copy reports into (in addition to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format where a choice exists (pricing supports csv and json).
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    RealWorld,
    RiskNeutral,
    Forward,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a market admits a deflator / martingale measure.
    Diagnose {
        market: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Price a claim by the real-world, risk-neutral or forward formula.
    Price {
        market: PathBuf,
        /// Claim description file (JSON).
        #[arg(long)]
        claim: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Reproduce the strict-local-martingale zero-coupon bond gap.
    Bondgap {
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Roll a strategy forward, deflate it, and run the martingale tests.
    Verify {
        market: PathBuf,
        strategy: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Multiplicative decomposition of a positive process on a tree.
    Decompose {
        tree: PathBuf,
        /// JSON file with the node values: {"Z": {"<node id>": "p/q", ...}}.
        #[arg(long)]
        deflator: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Randomized equivalence run: exact LP decision vs brute-force oracle.
    NaSuite {
        #[arg(long, default_value_t = 1000)]
        instances: u64,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Diagnose { market, opts } => cmd_diagnose(&market, &opts),
        Command::Price {
            market,
            claim,
            method,
            opts,
        } => cmd_price(&market, &claim, method, &opts),
        Command::Bondgap {
            horizon,
            rate,
            opts,
        } => cmd_bondgap(horizon, rate, &opts),
        Command::Verify {
            market,
            strategy,
            opts,
        } => cmd_verify(&market, &strategy, &opts),
        Command::Decompose {
            tree,
            deflator,
            opts,
        } => cmd_decompose(&tree, &deflator, &opts),
        Command::NaSuite { instances, opts } => cmd_na_suite(instances, &opts),
    }
}

fn emit(opts: &CommonOpts, name: &str, content: &str) -> Result<(), Error> {
    println!("{content}");
    if let Some(dir) = &opts.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), format!("{content}\n"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Extended market loading (adds the minimal-market-model configuration)
// ---------------------------------------------------------------------------

/// Minimal-market-model configuration: a zero-coupon bond priced under the
/// reciprocal squared Bessel(4) deflator with a flat deterministic rate.
struct MmmConfig {
    horizon: f64,
    rate: f64,
    x0: f64,
}

enum ExtendedMarket {
    Standard(Market),
    Mmm(MmmConfig),
}

fn load_extended_market(path: &Path) -> Result<ExtendedMarket, Error> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("type").and_then(|t| t.as_str()) == Some("mmm") {
        let horizon = value
            .get("T")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::validation("mmm market needs a numeric \"T\""))?;
        let rate = value.get("r").and_then(|v| v.as_f64()).unwrap_or(0.0);
        let x0 = value.get("x0").and_then(|v| v.as_f64()).unwrap_or(1.0);
        if !(horizon > 0.0) {
            return Err(Error::validation("mmm market needs T > 0"));
        }
        if !(x0 > 0.0) {
            return Err(Error::validation("mmm market needs x0 > 0"));
        }
        return Ok(ExtendedMarket::Mmm(MmmConfig { horizon, rate, x0 }));
    }
    Ok(ExtendedMarket::Standard(noarb_core::market::parse_market(
        &text,
    )?))
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

fn cmd_diagnose(market_path: &Path, opts: &CommonOpts) -> Result<u8, Error> {
    match load_extended_market(market_path)? {
        ExtendedMarket::Standard(Market::Ito(spec)) => {
            let (report, code) = diagnose_ito(&spec)?;
            emit(opts, "diagnose.json", &report.to_string())?;
            Ok(code)
        }
        ExtendedMarket::Standard(Market::Tree(tree)) => {
            let certificate = decide_na(&tree);
            let code = match &certificate {
                LpCertificate::Emm { .. } => 0,
                LpCertificate::Arbitrage { .. } => 2,
            };
            let report = serde_json::json!({
                "market": "tree",
                "outcome": certificate.kind(),
                "certificate": certificate.to_json(&tree),
            });
            emit(opts, "diagnose.json", &report.to_string())?;
            Ok(code)
        }
        ExtendedMarket::Mmm(config) => {
            let report = serde_json::json!({
                "market": "mmm",
                "outcome": "deflator",
                "note": "reciprocal squared Bessel(4) deflator exists by construction; \
                         it is a strict local martingale, so risk-neutral prices overstate bonds",
                "T": config.horizon,
                "r": config.rate,
            });
            emit(opts, "diagnose.json", &report.to_string())?;
            Ok(0)
        }
    }
}

fn diagnose_ito(spec: &ItoMarketSpec) -> Result<(serde_json::Value, u8), Error> {
    let outcome = solve_market_price_of_risk(spec, spec.rate.as_ref())?;
    Ok(match outcome {
        RiskPriceOutcome::Solved(solution) => (
            serde_json::json!({
                "market": "ito",
                "outcome": "deflator",
                "rate_mode": if solution.rate_was_free { "solved" } else { "given" },
                "theta": solution.theta,
                "rates": solution.rates,
                "max_violation": solution.max_violation(spec),
            }),
            0,
        ),
        RiskPriceOutcome::Infeasible(certificate) => (
            serde_json::json!({
                "market": "ito",
                "outcome": "infeasible",
                "certificate": certificate,
            }),
            2,
        ),
    })
}

// ---------------------------------------------------------------------------
// price
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum ClaimSpec {
    Bond,
    Asset {
        asset: usize,
    },
    Call {
        asset: usize,
        strike: serde_json::Value,
    },
    LeafValues(BTreeMap<u64, String>),
}

fn load_claim(path: &Path) -> Result<(String, ClaimSpec), Error> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| Error::validation("claim file needs a \"type\" field"))?;
    let asset_index = || {
        value
            .get("asset")
            .and_then(|a| a.as_u64())
            .map(|a| a as usize)
            .unwrap_or(0)
    };
    let spec = match kind {
        "bond" => ClaimSpec::Bond,
        "asset" => ClaimSpec::Asset {
            asset: asset_index(),
        },
        "call" => ClaimSpec::Call {
            asset: asset_index(),
            strike: value
                .get("strike")
                .cloned()
                .ok_or_else(|| Error::validation("call claim needs a \"strike\""))?,
        },
        "leaf-values" => {
            let map = value
                .get("values")
                .and_then(|v| v.as_object())
                .ok_or_else(|| Error::validation("leaf-values claim needs a \"values\" object"))?;
            let mut values = BTreeMap::new();
            for (key, entry) in map {
                let id: u64 = key
                    .parse()
                    .map_err(|_| Error::validation(format!("bad node id {key:?}")))?;
                let text = entry
                    .as_str()
                    .ok_or_else(|| Error::validation("leaf values must be \"p/q\" strings"))?;
                values.insert(id, text.to_string());
            }
            ClaimSpec::LeafValues(values)
        }
        other => {
            return Err(Error::validation(format!(
                "unknown claim type {other:?} (expected bond, asset, call or leaf-values)"
            )))
        }
    };
    let label = value
        .get("label")
        .and_then(|l| l.as_str())
        .unwrap_or(kind)
        .to_string();
    Ok((label, spec))
}

struct ItoPricingContext {
    solution: RiskPriceSolution,
    rate: RateCurve,
    bundle: noarb_core::sde::PathBundle,
    deflator: PathDeflator,
    terminal_assets: Vec<Vec<f64>>,
    b_terminal: f64,
}

fn prepare_ito_pricing(
    spec: &ItoMarketSpec,
    opts: &CommonOpts,
) -> Result<Result<ItoPricingContext, serde_json::Value>, Error> {
    let solution = match solve_market_price_of_risk(spec, spec.rate.as_ref())? {
        RiskPriceOutcome::Solved(solution) => solution,
        RiskPriceOutcome::Infeasible(certificate) => {
            return Ok(Err(serde_json::json!({
                "error": "no deflator exists; pricing refused",
                "certificate": certificate,
            })));
        }
    };
    let per_cell = (opts.grid_cells as usize).div_ceil(spec.n_cells()).max(1);
    let fine = spec.refined(per_cell);
    // Replicate the solved cell data onto the refined grid.
    let theta: Vec<Vec<f64>> = solution
        .theta
        .iter()
        .flat_map(|t| std::iter::repeat(t.clone()).take(per_cell))
        .collect();
    let rates: Vec<f64> = solution
        .rates
        .iter()
        .flat_map(|r| std::iter::repeat(*r).take(per_cell))
        .collect();
    let fine_solution = RiskPriceSolution {
        theta,
        rates: rates.clone(),
        rate_was_free: solution.rate_was_free,
        residuals: vec![0.0; fine.n_cells()],
    };
    let rate = RateCurve { rates };
    let bundle = simulate_stochastic_exponential(&fine, opts.n_paths as usize, opts.seed)?;
    let deflator = build_deflator_paths(&fine_solution, &rate, &bundle)?;
    let terminal_assets: Vec<Vec<f64>> = (0..fine.n_assets())
        .map(|i| bundle.process(&asset_label(i)).expect("asset").terminal())
        .collect();
    let savings = savings_account_values(&rate, &fine.grid)?;
    Ok(Ok(ItoPricingContext {
        solution: fine_solution,
        rate,
        bundle,
        deflator,
        terminal_assets,
        b_terminal: *savings.values.last().unwrap(),
    }))
}

fn ito_claim_values(
    context: &ItoPricingContext,
    claim: &ClaimSpec,
    n_paths: usize,
) -> Result<Vec<f64>, Error> {
    match claim {
        ClaimSpec::Bond => Ok(vec![1.0; n_paths]),
        ClaimSpec::Asset { asset } => context
            .terminal_assets
            .get(*asset)
            .cloned()
            .ok_or_else(|| Error::domain(format!("no asset {asset}"))),
        ClaimSpec::Call { asset, strike } => {
            let strike = match strike {
                serde_json::Value::Number(value) => value.as_f64(),
                serde_json::Value::String(text) => parse_rat(text)
                    .ok()
                    .map(|r| noarb_core::rat::rat_to_f64(&r)),
                _ => None,
            }
            .ok_or_else(|| Error::validation("call strikes must be numeric or \"p/q\" strings"))?;
            let s = context
                .terminal_assets
                .get(*asset)
                .ok_or_else(|| Error::domain(format!("no asset {asset}")))?;
            Ok(s.iter().map(|v| (v - strike).max(0.0)).collect())
        }
        ClaimSpec::LeafValues(_) => Err(Error::domain(
            "leaf-values claims apply to tree markets only",
        )),
    }
}

fn cmd_price(
    market_path: &Path,
    claim_path: &Path,
    method: MethodArg,
    opts: &CommonOpts,
) -> Result<u8, Error> {
    let (label, claim) = load_claim(claim_path)?;
    let mut rows: Vec<PricingResult> = Vec::new();
    let mut exact_rows: Vec<(String, String, String)> = Vec::new(); // method, price, n

    match load_extended_market(market_path)? {
        ExtendedMarket::Standard(Market::Ito(spec)) => {
            let context = match prepare_ito_pricing(&spec, opts)? {
                Ok(context) => context,
                Err(refusal) => {
                    eprintln!("{refusal}");
                    return Ok(2);
                }
            };
            let n = opts.n_paths as usize;
            let h = ito_claim_values(&context, &claim, n)?;
            let z_t = context.deflator.z_terminal();
            let d_t = context.deflator.d_terminal();
            let want_rw = matches!(method, MethodArg::RealWorld | MethodArg::Both);
            let want_rn = matches!(method, MethodArg::RiskNeutral | MethodArg::Both);
            if want_rw {
                rows.push(price_real_world(
                    &label,
                    &h,
                    context.deflator.z0(),
                    &z_t,
                    opts.seed,
                )?);
            }
            if want_rn {
                rows.push(price_risk_neutral(
                    &label,
                    &h,
                    1.0,
                    &d_t,
                    context.b_terminal,
                    opts.seed,
                )?);
            }
            if matches!(method, MethodArg::Forward) {
                let unit = vec![1.0; n];
                let bond = price_real_world(&label, &unit, context.deflator.z0(), &z_t, opts.seed)?;
                let p_t = vec![1.0; n];
                rows.push(price_forward_measure(
                    &label,
                    &h,
                    bond.price,
                    &p_t,
                    context.deflator.z0(),
                    &z_t,
                    opts.seed,
                )?);
            }
            if method == MethodArg::Both {
                eprintln!(
                    "note: real-world and risk-neutral rows share seed {}; with Z = D/B they \
                     coincide per path (theta = {:?})",
                    opts.seed, context.solution.theta[0]
                );
            }
        }
        ExtendedMarket::Standard(Market::Tree(tree)) => {
            let certificate = decide_na(&tree);
            let weights = match &certificate {
                LpCertificate::Emm { node_weights } => node_weights.clone(),
                LpCertificate::Arbitrage { .. } => {
                    eprintln!(
                        "{}",
                        serde_json::json!({
                            "error": "tree market admits arbitrage; pricing refused",
                            "certificate": certificate.to_json(&tree),
                        })
                    );
                    return Ok(2);
                }
            };
            let density = certificate.density_martingale(&tree).expect("emm kind");
            let z: Vec<BigRational> = (0..tree.nodes.len())
                .map(|i| &density[i] / &tree.node(i).savings)
                .collect();
            let h = tree_claim_values(&tree, &claim)?;
            let mut push_exact = |name: &str, prices: Vec<BigRational>| {
                exact_rows.push((
                    name.to_string(),
                    format_rat(&prices[tree.root()]),
                    "exact".to_string(),
                ));
            };
            if matches!(method, MethodArg::RealWorld | MethodArg::Both) {
                push_exact("real-world", price_real_world_tree(&tree, &z, &h)?);
            }
            if matches!(method, MethodArg::RiskNeutral | MethodArg::Both) {
                push_exact(
                    "risk-neutral",
                    price_risk_neutral_tree(&tree, &weights, &h)?,
                );
            }
            if matches!(method, MethodArg::Forward) {
                push_exact(
                    "forward",
                    noarb_core::pricing::price_forward_tree(&tree, &z, &h)?,
                );
            }
            if method == MethodArg::Both {
                eprintln!(
                    "note: exact tree prices; real-world and risk-neutral coincide identically"
                );
            }
        }
        ExtendedMarket::Mmm(config) => {
            if !matches!(claim, ClaimSpec::Bond) {
                return Err(Error::domain(
                    "the minimal-market-model configuration prices the zero-coupon bond claim only",
                ));
            }
            let n = opts.n_paths as usize;
            let besq =
                noarb_core::sde::sample_besq4_exact(config.x0, config.horizon, n, opts.seed)?;
            let z_t: Vec<f64> = besq.iter().map(|x| 1.0 / x).collect();
            let b_t = (config.rate * config.horizon).exp();
            let z_t_disc: Vec<f64> = z_t.iter().map(|z| z / b_t).collect();
            let z0 = 1.0 / config.x0;
            let h = vec![1.0; n];
            if matches!(method, MethodArg::RealWorld | MethodArg::Both) {
                rows.push(price_real_world(&label, &h, z0, &z_t_disc, opts.seed)?);
            }
            if matches!(method, MethodArg::RiskNeutral | MethodArg::Both) {
                rows.push(PricingResult {
                    claim: label.clone(),
                    method: noarb_core::pricing::PricingMethod::RiskNeutral,
                    price: 1.0 / b_t,
                    std_error: 0.0,
                    n_paths: None,
                    exact: true,
                    seed: None,
                    heavy_tail: false,
                });
            }
            if matches!(method, MethodArg::Forward) {
                let rw = price_real_world(&label, &h, z0, &z_t_disc, opts.seed)?;
                let p_t = vec![1.0; n];
                rows.push(price_forward_measure(
                    &label, &h, rw.price, &p_t, z0, &z_t_disc, opts.seed,
                )?);
            }
            if method == MethodArg::Both {
                eprintln!(
                    "note: the deflator is a strict local martingale; the risk-neutral bond \
                     price exceeds the real-world one"
                );
            }
        }
    }

    for row in &rows {
        if row.heavy_tail {
            eprintln!(
                "warning: claim {:?} ({}) looks heavy-tailed: the top 1% of samples carries \
                 more than half of the mean",
                row.claim,
                row.method.as_str()
            );
        }
    }

    let content = match opts.format {
        Format::Csv => {
            let mut lines = vec![csv_header().to_string()];
            lines.extend(rows.iter().map(|r| r.csv_row()));
            lines.extend(
                exact_rows
                    .iter()
                    .map(|(method, price, n)| format!("{label},{method},{price},0,{n},-")),
            );
            lines.join("\n")
        }
        Format::Json => {
            let exact_json: Vec<serde_json::Value> = exact_rows
                .iter()
                .map(|(method, price, _)| {
                    serde_json::json!({
                        "claim": label,
                        "method": method,
                        "price": price,
                        "exact": true,
                    })
                })
                .collect();
            serde_json::json!({
                "sampled": rows,
                "exact": exact_json,
            })
            .to_string()
        }
    };
    let file_name = match opts.format {
        Format::Csv => "prices.csv",
        Format::Json => "prices.json",
    };
    emit(opts, file_name, &content)?;
    Ok(0)
}

fn tree_claim_values(tree: &ScenarioTree, claim: &ClaimSpec) -> Result<Vec<BigRational>, Error> {
    let n = tree.nodes.len();
    let mut values = vec![rat_one(); n];
    match claim {
        ClaimSpec::Bond => {}
        ClaimSpec::Asset { asset } => {
            if *asset >= tree.n_assets() {
                return Err(Error::domain(format!("no asset {asset}")));
            }
            for leaf in tree.leaves() {
                values[leaf] = tree.node(leaf).prices[*asset].clone();
            }
        }
        ClaimSpec::Call { asset, strike } => {
            if *asset >= tree.n_assets() {
                return Err(Error::domain(format!("no asset {asset}")));
            }
            let strike = match strike {
                serde_json::Value::String(text) => parse_rat(text)?,
                serde_json::Value::Number(value) if value.is_i64() => {
                    parse_rat(&value.to_string())?
                }
                _ => {
                    return Err(Error::validation(
                        "tree call strikes must be rational strings like \"5/4\" or integers",
                    ))
                }
            };
            for leaf in tree.leaves() {
                let payoff = &tree.node(leaf).prices[*asset] - &strike;
                values[leaf] = payoff.max(BigRational::from_integer(0.into()));
            }
        }
        ClaimSpec::LeafValues(map) => {
            for leaf in tree.leaves() {
                let id = tree.node(leaf).id;
                let text = map.get(&id).ok_or_else(|| {
                    Error::validation(format!("leaf-values claim is missing leaf node {id}"))
                })?;
                values[leaf] = parse_rat(text)?;
            }
        }
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// bondgap
// ---------------------------------------------------------------------------

fn cmd_bondgap(horizon: f64, rate: f64, opts: &CommonOpts) -> Result<u8, Error> {
    let report = bond_gap_experiment(horizon, rate, opts.n_paths as usize, opts.seed)?;
    let json = serde_json::to_value(&report).expect("report serializes");
    emit(opts, "bondgap.json", &json.to_string())?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(market_path: &Path, strategy_path: &Path, opts: &CommonOpts) -> Result<u8, Error> {
    let strategy_text = std::fs::read_to_string(strategy_path)?;
    let strategy_json: serde_json::Value = serde_json::from_str(&strategy_text)?;
    match load_extended_market(market_path)? {
        ExtendedMarket::Standard(Market::Ito(spec)) => verify_ito(&spec, &strategy_json, opts),
        ExtendedMarket::Standard(Market::Tree(tree)) => verify_tree(&tree, &strategy_json, opts),
        ExtendedMarket::Mmm(_) => Err(Error::domain(
            "verify needs an ito or tree market with tradeable assets",
        )),
    }
}

fn parse_rule(value: &serde_json::Value) -> Result<AllocationRule, Error> {
    let rows = |key: &str| -> Result<Option<Vec<Vec<f64>>>, Error> {
        match value.get(key) {
            None => Ok(None),
            Some(raw) => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(raw.clone())
                    .map_err(|e| Error::validation(format!("bad {key}: {e}")))?;
                Ok(Some(rows))
            }
        }
    };
    if let Some(delta) = rows("delta")? {
        return Ok(AllocationRule::FixedUnits(delta));
    }
    if let Some(proportions) = rows("proportions")? {
        return Ok(AllocationRule::ConstantProportion(proportions));
    }
    Err(Error::validation(
        "strategy needs \"delta\" (units) or \"proportions\" rows",
    ))
}

fn verify_ito(
    spec: &ItoMarketSpec,
    strategy_json: &serde_json::Value,
    opts: &CommonOpts,
) -> Result<u8, Error> {
    let context = match prepare_ito_pricing(spec, opts)? {
        Ok(context) => context,
        Err(refusal) => {
            eprintln!("{refusal}");
            return Ok(2);
        }
    };
    let bundle = &context.bundle;
    let savings = savings_account_values(&context.rate, &bundle.grid)?;
    let kind = strategy_json
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::validation("strategy needs a \"kind\" (sf or dyn)"))?;
    let initial_value = strategy_json
        .get("V0")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::validation("strategy needs a numeric \"V0\""))?;
    let base = PathStrategy {
        initial_value,
        rule: parse_rule(strategy_json)?,
    };
    let report = match kind {
        "sf" => {
            let portfolio = roll_forward(&base, bundle, &savings)?;
            let deflated = portfolio.to_bundle("VZ", Some(&context.deflator));
            let reference = initial_value * context.deflator.z_at(0, 0);
            let martingale = martingale_test(
                &deflated,
                "VZ",
                reference,
                TestMode::Martingale,
                opts.confidence,
            )?;
            let supermartingale = martingale_test(
                &deflated,
                "VZ",
                reference,
                TestMode::Supermartingale,
                opts.confidence,
            )?;
            serde_json::json!({
                "kind": "sf",
                "accounting_residual": portfolio.accounting_residual(),
                "negative_value_paths": portfolio.negative_value_paths().len(),
                "deflated_martingale_test": martingale,
                "deflated_supermartingale_test": supermartingale,
            })
        }
        "dyn" => {
            let vartheta: Vec<f64> = strategy_json
                .get("vartheta")
                .map(|v| serde_json::from_value(v.clone()))
                .transpose()
                .map_err(|e| Error::validation(format!("bad vartheta: {e}")))?
                .ok_or_else(|| Error::validation("dyn strategy needs \"vartheta\""))?;
            let run = build_mean_self_financing(
                &base,
                &vartheta,
                bundle,
                &savings,
                &context.deflator,
                opts.confidence,
            )?;
            serde_json::json!({
                "kind": "dyn",
                "pnl_test": run.pnl_report,
                "deflated_supermartingale_test": run.deflated_report,
                "covariation_mean": run.covariation_mean,
                "covariation_se": run.covariation_se,
                "accounting_residual": run.portfolio.accounting_residual(),
            })
        }
        other => {
            return Err(Error::validation(format!(
                "unknown strategy kind {other:?} (expected sf or dyn)"
            )))
        }
    };
    emit(opts, "verify.json", &report.to_string())?;
    Ok(0)
}

fn verify_tree(
    tree: &ScenarioTree,
    strategy_json: &serde_json::Value,
    opts: &CommonOpts,
) -> Result<u8, Error> {
    let certificate = decide_na(tree);
    let density = match certificate.density_martingale(tree) {
        Some(density) => density,
        None => {
            eprintln!(
                "{}",
                serde_json::json!({
                    "error": "tree market admits arbitrage; verification refused",
                    "certificate": certificate.to_json(tree),
                })
            );
            return Ok(2);
        }
    };
    let initial_value = strategy_json
        .get("V0")
        .and_then(|v| v.as_str())
        .map(parse_rat)
        .transpose()?
        .ok_or_else(|| Error::validation("tree strategy needs \"V0\" as a \"p/q\" string"))?;
    let delta_map = strategy_json
        .get("delta")
        .and_then(|d| d.as_object())
        .ok_or_else(|| {
            Error::validation("tree strategy needs a \"delta\" object keyed by node id")
        })?;
    let mut delta: Vec<Option<Vec<BigRational>>> = vec![None; tree.nodes.len()];
    let index_of: BTreeMap<u64, usize> = (0..tree.nodes.len())
        .map(|i| (tree.node(i).id, i))
        .collect();
    for (key, entry) in delta_map {
        let id: u64 = key
            .parse()
            .map_err(|_| Error::validation(format!("bad node id {key:?}")))?;
        let idx = *index_of
            .get(&id)
            .ok_or_else(|| Error::validation(format!("strategy references unknown node {id}")))?;
        let units: Vec<String> = serde_json::from_value(entry.clone())
            .map_err(|e| Error::validation(format!("bad holdings at node {id}: {e}")))?;
        delta[idx] = Some(
            units
                .iter()
                .map(|u| parse_rat(u))
                .collect::<Result<_, _>>()?,
        );
    }
    let strategy = TreeStrategy {
        initial_value: initial_value.clone(),
        delta,
    };
    let portfolio = roll_forward_tree(tree, &strategy)?;
    let z: Vec<BigRational> = (0..tree.nodes.len())
        .map(|i| &density[i] / &tree.node(i).savings)
        .collect();
    let deflated: Vec<BigRational> = (0..tree.nodes.len())
        .map(|i| &portfolio.value[i] * &z[i])
        .collect();
    let is_martingale = tree.is_tree_martingale(&deflated);
    let report = serde_json::json!({
        "kind": "sf",
        "exact": true,
        "accounting_exact": portfolio.verify_accounting(&initial_value),
        "deflated_martingale": is_martingale,
        "verdict": if is_martingale { "consistent-martingale" } else { "rejected" },
        "terminal_values": tree.leaves().iter()
            .map(|&l| (tree.node(l).id.to_string(), format_rat(&portfolio.value[l])))
            .collect::<BTreeMap<_, _>>(),
    });
    emit(opts, "verify.json", &report.to_string())?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

fn cmd_decompose(tree_path: &Path, deflator_path: &Path, opts: &CommonOpts) -> Result<u8, Error> {
    let tree = match load_market(tree_path)? {
        Market::Tree(tree) => tree,
        Market::Ito(_) => {
            return Err(Error::domain(
                "decompose applies to tree markets; continuous deflators are constructed, not decomposed",
            ))
        }
    };
    let text = std::fs::read_to_string(deflator_path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let map = value.get("Z").and_then(|z| z.as_object()).ok_or_else(|| {
        Error::validation("deflator file needs {\"Z\": {\"<node id>\": \"p/q\"}}")
    })?;
    let index_of: BTreeMap<u64, usize> = (0..tree.nodes.len())
        .map(|i| (tree.node(i).id, i))
        .collect();
    let mut z = vec![rat_one(); tree.nodes.len()];
    for (key, entry) in map {
        let id: u64 = key
            .parse()
            .map_err(|_| Error::validation(format!("bad node id {key:?}")))?;
        let idx = *index_of
            .get(&id)
            .ok_or_else(|| Error::validation(format!("deflator references unknown node {id}")))?;
        z[idx] = parse_rat(
            entry
                .as_str()
                .ok_or_else(|| Error::validation("Z values must be \"p/q\" strings"))?,
        )?;
    }
    let decomposition = multiplicative_doob_decompose(&tree, &z)?;
    let as_map = |values: &[BigRational]| -> BTreeMap<String, String> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (tree.node(i).id.to_string(), format_rat(v)))
            .collect()
    };
    let report = serde_json::json!({
        "D": as_map(&decomposition.d),
        "C": as_map(&decomposition.c),
        "verified": decomposition.verify(&tree),
    });
    emit(opts, "decompose.json", &report.to_string())?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// na-suite
// ---------------------------------------------------------------------------

fn cmd_na_suite(instances: u64, opts: &CommonOpts) -> Result<u8, Error> {
    let mut emm = 0u64;
    let mut arbitrage = 0u64;
    let mut disagreements = 0u64;
    let mut unverified = 0u64;
    for instance in 0..instances {
        let mut rng = CounterRng::new(opts.seed, STREAM_INSTANCES, instance);
        let tree = random_tree(&mut rng);
        let certificate = decide_na(&tree);
        if !certificate.verify(&tree) {
            unverified += 1;
        }
        let lp_na = matches!(certificate, LpCertificate::Emm { .. });
        if lp_na {
            emm += 1;
        } else {
            arbitrage += 1;
        }
        if lp_na != (brute_force_na(&tree)? == BruteForceVerdict::NoArbitrage) {
            disagreements += 1;
        }
    }
    let report = serde_json::json!({
        "instances": instances,
        "seed": opts.seed,
        "emm": emm,
        "arbitrage": arbitrage,
        "disagreements": disagreements,
        "certificates_unverified": unverified,
    });
    emit(opts, "na-suite.json", &report.to_string())?;
    Ok(if disagreements == 0 && unverified == 0 {
        0
    } else {
        1
    })
}
