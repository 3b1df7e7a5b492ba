//! Claim pricing under a deflator: the three pricing routes and the
//! strict-local-martingale bond-gap experiment.
//!
//! On paths, prices are computed at time zero with a standard error; the
//! three routes share the seed, which turns distributional identities into
//! per-sample identities. On trees, prices are exact conditional
//! expectations at every node.

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::ScenarioTree;
use crate::rat::{format_rat, rat_one};
use crate::sde::{inverse_besq4_mean, sample_besq4_exact};
use crate::stats::mean_and_se;

/// Fraction of top-order samples inspected by the heavy-tail warning.
const HEAVY_TAIL_TOP_FRACTION: f64 = 0.01;
/// The warning fires when the top fraction carries more than this share.
const HEAVY_TAIL_SHARE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingMethod {
    RealWorld,
    RiskNeutral,
    Forward,
}

impl PricingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PricingMethod::RealWorld => "real-world",
            PricingMethod::RiskNeutral => "risk-neutral",
            PricingMethod::Forward => "forward",
        }
    }
}

/// A time-zero price with its sampling error (zero for exact tree prices).
#[derive(Debug, Clone, Serialize)]
pub struct PricingResult {
    pub claim: String,
    pub method: PricingMethod,
    pub price: f64,
    pub std_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    /// True when the price came out of exact tree arithmetic.
    pub exact: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Integrability warning: the top 1% of samples carried more than half
    /// of the sample mean.
    pub heavy_tail: bool,
}

impl PricingResult {
    /// CSV row `claim,method,price,stderr,n,seed`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.claim,
            self.method.as_str(),
            self.price,
            self.std_error,
            self.n_paths
                .map_or_else(|| "exact".to_string(), |n| n.to_string()),
            self.seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
        )
    }
}

pub fn csv_header() -> &'static str {
    "claim,method,price,stderr,n,seed"
}

fn check_nonnegative(claim: &[f64]) -> Result<()> {
    if claim.iter().any(|h| *h < 0.0) {
        return Err(Error::domain("claim values must be nonnegative"));
    }
    if claim.iter().any(|h| !h.is_finite()) {
        return Err(Error::domain("claim values must be finite"));
    }
    Ok(())
}

fn heavy_tail_flag(weighted: &[f64]) -> bool {
    let total: f64 = crate::stats::pairwise_sum(weighted);
    if !(total > 0.0) {
        return false;
    }
    let top_n = ((weighted.len() as f64 * HEAVY_TAIL_TOP_FRACTION).ceil() as usize).max(1);
    let mut sorted = weighted.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let top: f64 = sorted[..top_n].iter().sum();
    top / total > HEAVY_TAIL_SHARE
}

// ---------------------------------------------------------------------------
// Path pricing
// ---------------------------------------------------------------------------

/// Real-world price at time zero: `pi_0 = Z_0^-1 mean(H Z_T)`.
pub fn price_real_world(
    claim_label: &str,
    claim: &[f64],
    z0: f64,
    z_terminal: &[f64],
    seed: u64,
) -> Result<PricingResult> {
    check_nonnegative(claim)?;
    if claim.len() != z_terminal.len() {
        return Err(Error::dimension("claim and deflator samples must pair up"));
    }
    let weighted: Vec<f64> = claim.iter().zip(z_terminal).map(|(h, z)| h * z).collect();
    let (m, se) = mean_and_se(&weighted);
    Ok(PricingResult {
        claim: claim_label.to_string(),
        method: PricingMethod::RealWorld,
        price: m / z0,
        std_error: se / z0,
        n_paths: Some(claim.len()),
        exact: false,
        seed: Some(seed),
        heavy_tail: heavy_tail_flag(&weighted),
    })
}

/// Risk-neutral price at time zero with a deterministic savings account:
/// `pi_0 = B_0 mean((D_T / D_0) H B_T^-1)` with `B_0 = 1`.
///
/// The density `D` must be a true-martingale density; on paths that is the
/// caller's assertion (test it with the martingale machinery first).
pub fn price_risk_neutral(
    claim_label: &str,
    claim: &[f64],
    d0: f64,
    d_terminal: &[f64],
    b_terminal: f64,
    seed: u64,
) -> Result<PricingResult> {
    check_nonnegative(claim)?;
    if claim.len() != d_terminal.len() {
        return Err(Error::dimension("claim and density samples must pair up"));
    }
    let weighted: Vec<f64> = claim
        .iter()
        .zip(d_terminal)
        .map(|(h, d)| d / d0 * h / b_terminal)
        .collect();
    let (m, se) = mean_and_se(&weighted);
    Ok(PricingResult {
        claim: claim_label.to_string(),
        method: PricingMethod::RiskNeutral,
        price: m,
        std_error: se,
        n_paths: Some(claim.len()),
        exact: false,
        seed: Some(seed),
        heavy_tail: heavy_tail_flag(&weighted),
    })
}

/// Forward-measure price at time zero:
/// `pi_0 = P_0 mean(H (P_T Z_T) / (P_0 Z_0))`.
///
/// Requires `P Z` to be a true martingale (caller-checked); this holds even
/// when `D` itself is a strict local martingale, which is exactly what makes
/// the forward route usable where the risk-neutral one is not.
pub fn price_forward_measure(
    claim_label: &str,
    claim: &[f64],
    p0: f64,
    p_terminal: &[f64],
    z0: f64,
    z_terminal: &[f64],
    seed: u64,
) -> Result<PricingResult> {
    check_nonnegative(claim)?;
    if claim.len() != z_terminal.len() || claim.len() != p_terminal.len() {
        return Err(Error::dimension(
            "claim, bond and deflator samples must pair up",
        ));
    }
    let weighted: Vec<f64> = claim
        .iter()
        .zip(p_terminal.iter().zip(z_terminal))
        .map(|(h, (p, z))| h * (p * z) / (p0 * z0))
        .collect();
    let (m, se) = mean_and_se(&weighted);
    Ok(PricingResult {
        claim: claim_label.to_string(),
        method: PricingMethod::Forward,
        price: p0 * m,
        std_error: p0 * se,
        n_paths: Some(claim.len()),
        exact: false,
        seed: Some(seed),
        heavy_tail: heavy_tail_flag(&weighted),
    })
}

// ---------------------------------------------------------------------------
// Tree pricing (exact, every node)
// ---------------------------------------------------------------------------

/// Exact real-world prices at every node:
/// `pi_n = Z_n^-1 E[H Z_T | node n]`, claims read at the leaves.
pub fn price_real_world_tree(
    tree: &ScenarioTree,
    z: &[BigRational],
    claim: &[BigRational],
) -> Result<Vec<BigRational>> {
    validate_tree_inputs(tree, z, claim)?;
    let n = tree.nodes.len();
    let mut weighted = vec![BigRational::zero(); n];
    for leaf in tree.leaves() {
        weighted[leaf] = &claim[leaf] * &z[leaf];
    }
    backward_expectation(tree, &mut weighted);
    Ok((0..n).map(|i| &weighted[i] / &z[i]).collect())
}

/// Exact risk-neutral prices at every node from EMM node weights:
/// `pi_n = B_n E_Q[H B_T^-1 | node n]`.
pub fn price_risk_neutral_tree(
    tree: &ScenarioTree,
    node_weights: &[BigRational],
    claim: &[BigRational],
) -> Result<Vec<BigRational>> {
    let n = tree.nodes.len();
    if node_weights.len() != n {
        return Err(Error::dimension("node weights must cover every node"));
    }
    if claim.len() != n {
        return Err(Error::dimension("claim must cover every node"));
    }
    if node_weights.iter().any(|w| !w.is_positive()) {
        return Err(Error::domain("EMM node weights must be strictly positive"));
    }
    if tree.leaves().iter().any(|&l| claim[l].is_negative()) {
        return Err(Error::domain("claim values must be nonnegative"));
    }
    let mut discounted = vec![BigRational::zero(); n];
    for leaf in tree.leaves() {
        discounted[leaf] = &claim[leaf] / &tree.node(leaf).savings;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tree.node(i).time));
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let mut acc = BigRational::zero();
        for &c in &tree.node(node).children {
            acc += &node_weights[c] * &discounted[c];
        }
        discounted[node] = acc / &node_weights[node];
    }
    Ok((0..n)
        .map(|i| &tree.node(i).savings * &discounted[i])
        .collect())
}

/// Exact forward-measure prices at every node. The zero-coupon bond maturing
/// at the horizon is itself priced by the real-world formula, and the claim
/// is then priced under the forward weights `(P Z) / (P_n Z_n)`.
pub fn price_forward_tree(
    tree: &ScenarioTree,
    z: &[BigRational],
    claim: &[BigRational],
) -> Result<Vec<BigRational>> {
    validate_tree_inputs(tree, z, claim)?;
    let n = tree.nodes.len();
    let unit = vec![rat_one(); n];
    let bond = price_real_world_tree(tree, z, &unit)?;
    // E_{forward}[H | n] = E[H P_T Z_T | n] / (P_n Z_n), with P_T = 1.
    let mut weighted = vec![BigRational::zero(); n];
    for leaf in tree.leaves() {
        weighted[leaf] = &claim[leaf] * &z[leaf];
    }
    backward_expectation(tree, &mut weighted);
    Ok((0..n)
        .map(|i| &bond[i] * &weighted[i] / (&bond[i] * &z[i]))
        .collect())
}

fn validate_tree_inputs(
    tree: &ScenarioTree,
    z: &[BigRational],
    claim: &[BigRational],
) -> Result<()> {
    let n = tree.nodes.len();
    if z.len() != n {
        return Err(Error::dimension("deflator must cover every node"));
    }
    if claim.len() != n {
        return Err(Error::dimension("claim must cover every node"));
    }
    if z.iter().any(|v| !v.is_positive()) {
        return Err(Error::domain("deflator must be strictly positive"));
    }
    if tree.leaves().iter().any(|&l| claim[l].is_negative()) {
        return Err(Error::domain("claim values must be nonnegative"));
    }
    Ok(())
}

/// In-place backward induction: leaves hold values, internal nodes receive
/// their conditional expectations.
fn backward_expectation(tree: &ScenarioTree, values: &mut [BigRational]) {
    let n = tree.nodes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tree.node(i).time));
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let mut acc = BigRational::zero();
        for &c in &tree.node(node).children {
            acc += &tree.node(c).prob * &values[c];
        }
        values[node] = acc;
    }
}

/// Exact tree prices rendered as display strings (`"p/q"`).
pub fn format_tree_prices(tree: &ScenarioTree, prices: &[BigRational]) -> Vec<(u64, String)> {
    prices
        .iter()
        .enumerate()
        .map(|(i, p)| (tree.node(i).id, format_rat(p)))
        .collect()
}

// ---------------------------------------------------------------------------
// Bond-gap experiment
// ---------------------------------------------------------------------------

/// Outcome of the strict-local-martingale zero-coupon bond experiment.
#[derive(Debug, Clone, Serialize)]
pub struct BondGapReport {
    pub horizon: f64,
    pub rate: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Monte Carlo real-world bond price under the reciprocal squared
    /// Bessel(4) deflator.
    pub real_world_price: f64,
    pub real_world_se: f64,
    /// `B_T^-1`, the price every putative risk-neutral measure assigns.
    pub risk_neutral_price: f64,
    /// `risk_neutral_price - real_world_price`.
    pub gap: f64,
    /// Closed form `B_T^-1 (1 - exp(-1/(2T)))`.
    pub expected_real_world: f64,
    /// Closed form `B_T^-1 exp(-1/(2T))`.
    pub expected_gap: f64,
    /// Monte Carlo price within three standard errors of the closed form.
    pub real_world_within_3se: bool,
    /// The gap exceeds three standard errors: the two pricing rules really
    /// disagree, which is the free-lunch signature of a strict local
    /// martingale deflator.
    pub gap_flagged: bool,
}

/// Prices the zero-coupon bond both ways under the deflator
/// `Z = D B^-1` with `D` the reciprocal squared Bessel(4) process started
/// at one and `B = exp(r t)` deterministic.
///
/// The real-world price uses exact transition sampling of `D_T`; the
/// risk-neutral price is `B_T^-1` analytically, independent of the putative
/// measure. Their difference is the strict-local-martingale gap.
pub fn bond_gap_experiment(
    horizon: f64,
    rate: f64,
    n_paths: usize,
    seed: u64,
) -> Result<BondGapReport> {
    if !(horizon > 0.0) {
        return Err(Error::domain(format!("horizon must be > 0, got {horizon}")));
    }
    let besq = sample_besq4_exact(1.0, horizon, n_paths, seed)?;
    let d_terminal: Vec<f64> = besq.iter().map(|x| 1.0 / x).collect();
    let b_terminal_inv = (-rate * horizon).exp();
    let (d_mean, d_se) = mean_and_se(&d_terminal);
    let real_world_price = d_mean * b_terminal_inv;
    let real_world_se = d_se * b_terminal_inv;
    let risk_neutral_price = b_terminal_inv;
    let expected_real_world = inverse_besq4_mean(1.0, horizon) * b_terminal_inv;
    let expected_gap = (-1.0 / (2.0 * horizon)).exp() * b_terminal_inv;
    let gap = risk_neutral_price - real_world_price;
    Ok(BondGapReport {
        horizon,
        rate,
        n_paths,
        seed,
        real_world_price,
        real_world_se,
        risk_neutral_price,
        gap,
        expected_real_world,
        expected_gap,
        real_world_within_3se: (real_world_price - expected_real_world).abs()
            <= 3.0 * real_world_se,
        gap_flagged: gap > 3.0 * real_world_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::{decide_na, LpCertificate};
    use crate::market::{parse_market, Market};
    use crate::rat::{rat, rat_int};
    use crate::rng::CounterRng;

    #[test]
    fn unit_claim_trivial_deflator_prices_at_one() {
        let claim = vec![1.0; 100];
        let z = vec![1.0; 100];
        let result = price_real_world("unit", &claim, 1.0, &z, 0).unwrap();
        assert_eq!(result.price, 1.0);
        assert_eq!(result.std_error, 0.0);
    }

    #[test]
    fn negative_claims_are_rejected() {
        let claim = vec![1.0, -0.5];
        let z = vec![1.0, 1.0];
        assert!(price_real_world("bad", &claim, 1.0, &z, 0).is_err());
    }

    #[test]
    fn unit_claim_besq_deflator_matches_bond_formula() {
        let n = 100_000;
        let x = sample_besq4_exact(1.0, 1.0, n, 51).unwrap();
        let z: Vec<f64> = x.iter().map(|v| 1.0 / v).collect();
        let claim = vec![1.0; n];
        let result = price_real_world("bond", &claim, 1.0, &z, 51).unwrap();
        let expected = inverse_besq4_mean(1.0, 1.0);
        assert!(
            (result.price - expected).abs() <= 3.0 * result.std_error,
            "price {} vs {} (se {})",
            result.price,
            expected,
            result.std_error
        );
    }

    #[test]
    fn deflated_terminal_asset_prices_at_spot() {
        // H = S_T with S Z a true martingale: pi_0 = S_0.
        use crate::deflator::{build_deflator_paths, RiskPriceOutcome};
        use crate::market::{AssetSpec, ItoMarketSpec, RateCurve};
        use crate::sde::simulate_stochastic_exponential;
        let cells = 16;
        let grid: Vec<f64> = (0..=cells).map(|k| k as f64 / cells as f64).collect();
        let market = ItoMarketSpec {
            horizon: 1.0,
            grid,
            assets: vec![AssetSpec {
                initial: 1.0,
                drift: vec![0.05; cells],
                vol: vec![vec![0.2]; cells],
            }],
            n_drivers: 1,
            rate: Some(RateCurve {
                rates: vec![0.02; cells],
            }),
        };
        let rate = market.rate.clone().unwrap();
        let solution =
            match crate::deflator::solve_market_price_of_risk(&market, Some(&rate)).unwrap() {
                RiskPriceOutcome::Solved(s) => s,
                _ => panic!(),
            };
        let bundle = simulate_stochastic_exponential(&market, 100_000, 99).unwrap();
        let deflator = build_deflator_paths(&solution, &rate, &bundle).unwrap();
        let claim = bundle.process("S1").unwrap().terminal();
        let result =
            price_real_world("spot", &claim, deflator.z0(), &deflator.z_terminal(), 99).unwrap();
        assert!(
            (result.price - 1.0).abs() <= 3.0 * result.std_error,
            "price {} se {}",
            result.price,
            result.std_error
        );
    }

    #[test]
    fn unit_claim_risk_neutral_prices_the_discount_factor() {
        // A proper density (mean-one lognormal) prices 1 at B_T^{-1}.
        let n = 100_000;
        let mut rng = CounterRng::new(21, crate::rng::STREAM_INSTANCES, 0);
        let sigma = 0.3f64;
        let d: Vec<f64> = (0..n)
            .map(|_| (sigma * rng.standard_normal() - 0.5 * sigma * sigma).exp())
            .collect();
        let b_t = 0.04f64.exp();
        let claim = vec![1.0; n];
        let result = price_risk_neutral("unit", &claim, 1.0, &d, b_t, 21).unwrap();
        assert!(
            (result.price - 1.0 / b_t).abs() <= 3.0 * result.std_error,
            "price {} vs {} (se {})",
            result.price,
            1.0 / b_t,
            result.std_error
        );
    }

    #[test]
    fn path_prices_are_monotone_and_linear_per_seed() {
        let n = 5_000;
        let mut rng = CounterRng::new(22, crate::rng::STREAM_INSTANCES, 0);
        let z: Vec<f64> = (0..n).map(|_| rng.uniform_open() + 0.1).collect();
        let h1: Vec<f64> = (0..n).map(|_| rng.uniform_open()).collect();
        let h2: Vec<f64> = h1.iter().map(|h| h + 0.25).collect();
        let p1 = price_real_world("h1", &h1, 1.0, &z, 22).unwrap().price;
        let p2 = price_real_world("h2", &h2, 1.0, &z, 22).unwrap().price;
        assert!(p1 <= p2, "pointwise dominance must order the prices");
        let combo: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| 2.0 * a + 3.0 * b).collect();
        let pc = price_real_world("combo", &combo, 1.0, &z, 22)
            .unwrap()
            .price;
        let expected = 2.0 * p1 + 3.0 * p2;
        assert!(
            (pc - expected).abs() <= 1e-12 * expected.abs(),
            "linearity per seed: {pc} vs {expected}"
        );
    }

    #[test]
    fn real_world_and_risk_neutral_coincide_per_path() {
        // With Z = D B^-1 and shared samples the two routes are the same
        // arithmetic up to rounding.
        let n = 10_000;
        let mut rng = CounterRng::new(9, crate::rng::STREAM_INSTANCES, 0);
        let b_t = 0.02f64.exp();
        let d: Vec<f64> = (0..n)
            .map(|_| (rng.standard_normal() * 0.3).exp())
            .collect();
        let claim: Vec<f64> = (0..n).map(|_| rng.uniform_open() * 2.0).collect();
        // Z_0 = D_0 B_0^-1 = 1.
        let z: Vec<f64> = d.iter().map(|d| d / b_t).collect();
        let rw = price_real_world("h", &claim, 1.0, &z, 9).unwrap();
        let rn = price_risk_neutral("h", &claim, 1.0, &d, b_t, 9).unwrap();
        let rel = (rw.price - rn.price).abs() / rw.price.abs().max(1e-300);
        assert!(rel <= 1e-12, "relative gap {rel}");
    }

    #[test]
    fn forward_route_agrees_with_real_world_under_strict_local_martingale() {
        // Minimal-market-model bond: P Z is a true martingale even though D
        // is not, so the forward price matches the real-world price.
        let n = 50_000;
        let x = sample_besq4_exact(1.0, 1.0, n, 77).unwrap();
        let z: Vec<f64> = x.iter().map(|v| 1.0 / v).collect();
        let claim = vec![1.0; n];
        let rw = price_real_world("bond", &claim, 1.0, &z, 77).unwrap();
        let p0 = rw.price;
        let p_t = vec![1.0; n];
        let fwd = price_forward_measure("bond", &claim, p0, &p_t, 1.0, &z, 77).unwrap();
        assert!(
            (fwd.price - rw.price).abs() <= 3.0 * (fwd.std_error + rw.std_error),
            "forward {} vs real-world {}",
            fwd.price,
            rw.price
        );
        // And both sit far below the naive risk-neutral price of 1.
        assert!(rw.price < 0.5);
    }

    #[test]
    fn unit_claim_forward_price_is_the_bond_price() {
        let n = 1_000;
        let mut rng = CounterRng::new(10, crate::rng::STREAM_INSTANCES, 1);
        let z: Vec<f64> = (0..n)
            .map(|_| (rng.standard_normal() * 0.2).exp())
            .collect();
        let z0 = 1.0;
        let (zm, _) = mean_and_se(&z);
        let p0 = zm / z0; // bond priced by the real-world formula
        let claim = vec![1.0; n];
        let p_t = vec![1.0; n];
        let fwd = price_forward_measure("unit", &claim, p0, &p_t, z0, &z, 10).unwrap();
        assert!((fwd.price - p0).abs() < 1e-12);
    }

    fn binomial_tree() -> ScenarioTree {
        match parse_market(
            &serde_json::json!({
                "type": "tree",
                "nodes": [
                    {"id": 0, "parent": null, "t": 0, "prob": "1/1", "S": ["1/1"], "B": "1/1", "children": [1, 2]},
                    {"id": 1, "parent": 0, "t": 1, "prob": "1/2", "S": ["2/1"], "B": "1/1", "children": []},
                    {"id": 2, "parent": 0, "t": 1, "prob": "1/2", "S": ["1/2"], "B": "1/1", "children": []},
                ]
            })
            .to_string(),
        )
        .unwrap()
        {
            Market::Tree(t) => t,
            _ => panic!(),
        }
    }

    #[test]
    fn binomial_call_prices_exactly_one_third() {
        let tree = binomial_tree();
        let cert = decide_na(&tree);
        let weights = match &cert {
            LpCertificate::Emm { node_weights } => node_weights.clone(),
            _ => panic!("binomial tree has an EMM"),
        };
        // H = max(S_1 - 1, 0): pays 1 up, 0 down.
        let claim = vec![rat_int(0), rat_int(1), rat_int(0)];
        let prices = price_risk_neutral_tree(&tree, &weights, &claim).unwrap();
        assert_eq!(prices[0], rat(1, 3));
    }

    #[test]
    fn tree_real_world_equals_risk_neutral_exactly() {
        let tree = binomial_tree();
        let cert = decide_na(&tree);
        let weights = match &cert {
            LpCertificate::Emm { node_weights } => node_weights.clone(),
            _ => panic!(),
        };
        let density = cert.density_martingale(&tree).unwrap();
        // Z = D / B node by node.
        let z: Vec<BigRational> = (0..3)
            .map(|i| &density[i] / &tree.node(i).savings)
            .collect();
        let claim = vec![rat_int(0), rat(3, 2), rat(1, 4)];
        let rw = price_real_world_tree(&tree, &z, &claim).unwrap();
        let rn = price_risk_neutral_tree(&tree, &weights, &claim).unwrap();
        assert_eq!(rw, rn);
    }

    #[test]
    fn tree_forward_price_is_bond_reweighted_expectation() {
        let tree = binomial_tree();
        let cert = decide_na(&tree);
        let density = cert.density_martingale(&tree).unwrap();
        let z: Vec<BigRational> = (0..3)
            .map(|i| &density[i] / &tree.node(i).savings)
            .collect();
        // Indicator of S_T > 1.
        let claim = vec![rat_int(0), rat_int(1), rat_int(0)];
        let fwd = price_forward_tree(&tree, &z, &claim).unwrap();
        // Oracle: P_0 * E[H Z_T] / (P_0 Z_0) computed by hand:
        // E[Z_T] = 1/2 z_up + 1/2 z_down, forward weight of up state.
        let e_z = (&z[1] + &z[2]) / rat_int(2);
        let up_weight = (&z[1] / rat_int(2)) / &e_z;
        let p0 = &e_z / &z[0];
        let oracle = &p0 * up_weight;
        assert_eq!(fwd[0], oracle);
        // Consistency: unit claim forward price is the bond price.
        let unit = vec![rat_one(); 3];
        let unit_fwd = price_forward_tree(&tree, &z, &unit).unwrap();
        assert_eq!(unit_fwd[0], p0);
    }

    #[test]
    fn tree_real_world_price_process_deflates_to_martingale() {
        // pi Z must be a tree martingale: the price process is consistent.
        let tree = binomial_tree();
        let cert = decide_na(&tree);
        let density = cert.density_martingale(&tree).unwrap();
        let z: Vec<BigRational> = (0..3)
            .map(|i| &density[i] / &tree.node(i).savings)
            .collect();
        let claim = vec![rat_int(0), rat(7, 3), rat(1, 5)];
        let pi = price_real_world_tree(&tree, &z, &claim).unwrap();
        let deflated: Vec<BigRational> = (0..3).map(|i| &pi[i] * &z[i]).collect();
        assert!(tree.is_tree_martingale(&deflated));
    }

    #[test]
    fn monotone_and_linear_in_the_claim() {
        let tree = binomial_tree();
        let z = vec![rat_one(), rat(2, 3), rat(4, 3)];
        let h1 = vec![rat_int(0), rat_int(1), rat_int(2)];
        let h2 = vec![rat_int(0), rat_int(2), rat_int(2)];
        let p1 = price_real_world_tree(&tree, &z, &h1).unwrap();
        let p2 = price_real_world_tree(&tree, &z, &h2).unwrap();
        assert!(p1[0] <= p2[0]);
        // Linearity: price(2 h1 + 3 h2) = 2 price(h1) + 3 price(h2).
        let combo: Vec<BigRational> = h1
            .iter()
            .zip(&h2)
            .map(|(a, b)| rat_int(2) * a + rat_int(3) * b)
            .collect();
        let pc = price_real_world_tree(&tree, &z, &combo).unwrap();
        assert_eq!(pc[0], rat_int(2) * &p1[0] + rat_int(3) * &p2[0]);
    }

    #[test]
    fn bond_gap_flat_rate_zero() {
        let report = bond_gap_experiment(1.0, 0.0, 100_000, 1729).unwrap();
        assert_eq!(report.risk_neutral_price, 1.0);
        assert!(report.real_world_within_3se, "{report:?}");
        assert!(report.gap_flagged);
        assert!((report.expected_real_world - 0.39347).abs() < 1e-4);
        assert!((report.expected_gap - 0.60653).abs() < 1e-4);
    }

    #[test]
    fn bond_gap_scales_with_discounting() {
        let r0 = bond_gap_experiment(1.0, 0.0, 20_000, 3).unwrap();
        let r2 = bond_gap_experiment(1.0, 0.02, 20_000, 3).unwrap();
        let scale = (-0.02f64).exp();
        assert!((r2.risk_neutral_price - scale).abs() < 1e-15);
        assert!(
            (r2.real_world_price - scale * r0.real_world_price).abs() < 1e-12,
            "deterministic discounting must scale both prices"
        );
    }

    #[test]
    fn bond_gap_long_horizon_ratio() {
        let report = bond_gap_experiment(50.0, 0.0, 50_000, 4).unwrap();
        // Real-world price collapses to about 1% of the risk-neutral one.
        assert!((report.expected_real_world - 0.00995).abs() < 1e-4);
        assert!(report.expected_gap / report.risk_neutral_price > 0.98);
        assert!(report.real_world_within_3se, "{report:?}");
    }

    #[test]
    fn heavy_tail_warning_fires_on_concentrated_mass() {
        let mut weighted = vec![0.001; 999];
        weighted.push(1_000.0);
        assert!(heavy_tail_flag(&weighted));
        assert!(!heavy_tail_flag(&vec![1.0; 1000]));
    }
}
