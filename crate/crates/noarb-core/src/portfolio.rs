//! Trading strategies and portfolio accounting on paths and trees.
//!
//! Discrete stochastic integrals use left-endpoint (predictable) evaluation
//! throughout: the holding applied over a step is fixed at the step's start.
//! Self-financing portfolios have an identically zero profit-and-loss
//! process; dynamic strategies carry an explicit savings-holding process and
//! their P&L is the accounting residual.

use num_rational::BigRational;
use num_traits::Zero;
use serde::Serialize;

use crate::deflator::PathDeflator;
use crate::error::{Error, Result};
use crate::market::{SavingsPath, ScenarioTree};
use crate::rng::{CounterRng, STREAM_INDEPENDENT};
use crate::sde::{asset_label, martingale_test, MartingaleTestReport, PathBundle, TestMode};
use crate::stats::mean_and_se;

/// Wealth below this (absolute) level counts as a nonnegativity breach;
/// roll-forward noise sits well under it.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Path-side strategies
// ---------------------------------------------------------------------------

/// Predictable allocation rule for the risky assets.
#[derive(Debug, Clone, Serialize)]
pub enum AllocationRule {
    /// Units held per cell and asset, identical across paths. A single row
    /// is broadcast over all cells.
    FixedUnits(Vec<Vec<f64>>),
    /// Fraction of current wealth per asset, remainder in the savings
    /// account; row per cell, broadcast like `FixedUnits`.
    ConstantProportion(Vec<Vec<f64>>),
}

impl AllocationRule {
    fn row(&self, cell: usize) -> &[f64] {
        let rows = match self {
            AllocationRule::FixedUnits(r) | AllocationRule::ConstantProportion(r) => r,
        };
        if rows.len() == 1 {
            &rows[0]
        } else {
            &rows[cell]
        }
    }

    fn validate(&self, n_cells: usize, n_assets: usize) -> Result<()> {
        let rows = match self {
            AllocationRule::FixedUnits(r) | AllocationRule::ConstantProportion(r) => r,
        };
        if rows.len() != 1 && rows.len() != n_cells {
            return Err(Error::dimension(format!(
                "allocation has {} rows for {} cells",
                rows.len(),
                n_cells
            )));
        }
        if rows.iter().any(|r| r.len() != n_assets) {
            return Err(Error::dimension(format!(
                "allocation rows must carry {n_assets} entries"
            )));
        }
        Ok(())
    }
}

/// Self-financing strategy on simulated paths.
#[derive(Debug, Clone, Serialize)]
pub struct PathStrategy {
    pub initial_value: f64,
    pub rule: AllocationRule,
}

/// Rolled-forward portfolio with its accounting decomposition
/// `V = V_0 + (asset gains) + (savings gains) + P&L`.
#[derive(Debug, Clone)]
pub struct PortfolioPaths {
    pub grid: Vec<f64>,
    pub seed: u64,
    pub n_paths: usize,
    values: Vec<f64>,
    asset_gains: Vec<f64>,
    savings_gains: Vec<f64>,
    pnl: Vec<f64>,
    pub initial_value: f64,
}

impl PortfolioPaths {
    fn n_points(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn value_at(&self, path: usize, point: usize) -> f64 {
        self.values[path * self.n_points() + point]
    }

    #[inline]
    pub fn pnl_at(&self, path: usize, point: usize) -> f64 {
        self.pnl[path * self.n_points() + point]
    }

    pub fn terminal_values(&self) -> Vec<f64> {
        (0..self.n_paths)
            .map(|p| self.value_at(p, self.n_points() - 1))
            .collect()
    }

    /// Largest violation of the accounting identity across paths and times.
    pub fn accounting_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for idx in 0..self.values.len() {
            let residual = self.values[idx]
                - (self.initial_value
                    + self.asset_gains[idx]
                    + self.savings_gains[idx]
                    + self.pnl[idx]);
            worst = worst.max(residual.abs());
        }
        worst
    }

    /// Paths on which wealth drops below the nonnegativity tolerance.
    pub fn negative_value_paths(&self) -> Vec<usize> {
        (0..self.n_paths)
            .filter(|&p| (0..self.n_points()).any(|k| self.value_at(p, k) < -NEGATIVE_TOLERANCE))
            .collect()
    }

    /// Repackages the wealth process for the martingale test machinery,
    /// optionally deflated pointwise.
    pub fn to_bundle(&self, label: &str, deflator: Option<&PathDeflator>) -> PathBundle {
        let n_points = self.n_points();
        let mut values = self.values.clone();
        if let Some(z) = deflator {
            for p in 0..self.n_paths {
                for k in 0..n_points {
                    values[p * n_points + k] *= z.z_at(p, k);
                }
            }
        }
        let mut bundle = PathBundle::new(self.seed, self.grid.clone(), self.n_paths);
        bundle.add_process(label, values);
        bundle
    }
}

/// Rolls a self-financing strategy forward over simulated asset paths.
///
/// Holdings for a step are fixed from the values at the step's start; the
/// savings position is whatever the budget identity
/// `V_k = delta . S_k + eta B_k` leaves, so the P&L is identically zero.
pub fn roll_forward(
    strategy: &PathStrategy,
    bundle: &PathBundle,
    savings: &SavingsPath,
) -> Result<PortfolioPaths> {
    let n_points = bundle.n_points();
    let n_cells = n_points - 1;
    if savings.values.len() != n_points {
        return Err(Error::dimension("savings path and asset grid disagree"));
    }
    let n_assets = bundle.labels().len();
    strategy.rule.validate(n_cells, n_assets)?;
    let views: Vec<_> = (0..n_assets)
        .map(|i| bundle.process(&asset_label(i)).expect("asset process"))
        .collect();

    let total = bundle.n_paths * n_points;
    let mut values = vec![0.0; total];
    let mut asset_gains = vec![0.0; total];
    let mut savings_gains = vec![0.0; total];
    let pnl = vec![0.0; total];
    for p in 0..bundle.n_paths {
        let base = p * n_points;
        values[base] = strategy.initial_value;
        let mut v = strategy.initial_value;
        let mut a_gain = 0.0;
        let mut s_gain = 0.0;
        for k in 0..n_cells {
            let row = strategy.rule.row(k);
            let delta: Vec<f64> = match &strategy.rule {
                AllocationRule::FixedUnits(_) => row.to_vec(),
                AllocationRule::ConstantProportion(_) => (0..n_assets)
                    .map(|i| row[i] * v / views[i].at(p, k))
                    .collect(),
            };
            let position: f64 = delta
                .iter()
                .enumerate()
                .map(|(i, d)| d * views[i].at(p, k))
                .sum();
            let eta = (v - position) / savings.values[k];
            let step_assets: f64 = delta
                .iter()
                .enumerate()
                .map(|(i, d)| d * (views[i].at(p, k + 1) - views[i].at(p, k)))
                .sum();
            let step_savings = eta * (savings.values[k + 1] - savings.values[k]);
            v += step_assets + step_savings;
            a_gain += step_assets;
            s_gain += step_savings;
            values[base + k + 1] = v;
            asset_gains[base + k + 1] = a_gain;
            savings_gains[base + k + 1] = s_gain;
        }
    }
    Ok(PortfolioPaths {
        grid: bundle.grid.clone(),
        seed: bundle.seed,
        n_paths: bundle.n_paths,
        values,
        asset_gains,
        savings_gains,
        pnl,
        initial_value: strategy.initial_value,
    })
}

// ---------------------------------------------------------------------------
// P&L process
// ---------------------------------------------------------------------------

/// P&L of an explicit savings-holding process along one path:
/// `C_k = eta_k B_k - eta_0 B_0 - sum_{j<=k} eta_j (B_j - B_{j-1})`.
///
/// Increment form: `C_k - C_{k-1} = B_{k-1} (eta_k - eta_{k-1})`, the
/// left-endpoint discretization of trading inflows.
pub fn pnl_process(eta: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(eta.len(), b.len(), "eta and B must share the grid");
    let mut c = Vec::with_capacity(eta.len());
    c.push(0.0);
    let mut acc = 0.0;
    for k in 1..eta.len() {
        acc += b[k - 1] * (eta[k] - eta[k - 1]);
        c.push(acc);
    }
    c
}

// ---------------------------------------------------------------------------
// Mean self-financing construction
// ---------------------------------------------------------------------------

/// Result of overlaying an independent-driver savings process on a
/// self-financing base strategy.
#[derive(Debug)]
pub struct MeanSelfFinancingRun {
    /// The dynamic portfolio `V = V_base + eta B`.
    pub portfolio: PortfolioPaths,
    /// Overlay holdings, row-major `[n_paths x n_points]`; entry `k` is the
    /// holding over the step into `t_k`, known one step ahead.
    pub eta: Vec<f64>,
    /// P&L mean-zero test (martingale mode, reference 0).
    pub pnl_report: MartingaleTestReport,
    /// Deflated-portfolio test (supermartingale mode, reference `V_0 Z_0`).
    pub deflated_report: MartingaleTestReport,
    /// Sample mean and standard error of the discrete covariation
    /// `sum d(eta) d(Z)` per path; zero in expectation by independence.
    pub covariation_mean: f64,
    pub covariation_se: f64,
}

/// Builds a locally mean self-financing dynamic strategy: on top of a
/// self-financing base, the savings holding follows the discrete integral
/// `eta = vartheta . dW~` of a predictable process against a driver
/// independent of the asset drivers (its own stream), lagged one step so
/// the holding is known at the step's start.
///
/// Returns an error naming the first offending path if the dynamic wealth
/// goes negative; the verification reports are computed otherwise.
pub fn build_mean_self_financing(
    base: &PathStrategy,
    vartheta: &[f64],
    bundle: &PathBundle,
    savings: &SavingsPath,
    deflator: &PathDeflator,
    confidence: f64,
) -> Result<MeanSelfFinancingRun> {
    let n_points = bundle.n_points();
    let n_cells = n_points - 1;
    if vartheta.len() != n_cells && vartheta.len() != 1 {
        return Err(Error::dimension(format!(
            "vartheta has {} cells for a grid with {n_cells}",
            vartheta.len()
        )));
    }
    let vt = |k: usize| {
        if vartheta.len() == 1 {
            vartheta[0]
        } else {
            vartheta[k]
        }
    };
    let widths: Vec<f64> = bundle.grid.windows(2).map(|w| w[1] - w[0]).collect();

    let base_portfolio = roll_forward(base, bundle, savings)?;

    let total = bundle.n_paths * n_points;
    let mut eta = vec![0.0; total];
    let mut values = vec![0.0; total];
    let mut pnl = vec![0.0; total];
    let mut savings_gains = vec![0.0; total];
    let mut covariation = vec![0.0; bundle.n_paths];
    for p in 0..bundle.n_paths {
        let mut rng = CounterRng::new(bundle.seed, STREAM_INDEPENDENT, p as u64);
        let base_idx = p * n_points;
        // Integral of vartheta against the auxiliary driver. The holding
        // applied over the step into t_k is the integral up to t_{k-1}, so
        // it is fixed one step ahead (predictable).
        let mut integral = 0.0; // up to the current grid point
        let mut lagged = 0.0; // up to the previous grid point
        let mut prev_eta = 0.0;
        let mut cov = 0.0;
        for k in 0..=n_cells {
            let holding = if k == 0 { 0.0 } else { lagged };
            eta[base_idx + k] = holding;
            values[base_idx + k] = base_portfolio.value_at(p, k) + holding * savings.values[k];
            if k > 0 {
                pnl[base_idx + k] =
                    pnl[base_idx + k - 1] + savings.values[k - 1] * (holding - prev_eta);
                savings_gains[base_idx + k] = savings_gains[base_idx + k - 1]
                    + holding * (savings.values[k] - savings.values[k - 1]);
                let dz = deflator.z_at(p, k) - deflator.z_at(p, k - 1);
                cov += (holding - prev_eta) * dz;
            }
            if k < n_cells {
                lagged = integral;
                integral += vt(k) * widths[k].sqrt() * rng.standard_normal();
            }
            prev_eta = holding;
        }
        covariation[p] = cov;
    }

    // Decomposition terms: asset gains come from the base alone; savings
    // gains combine the base's derived holding with the overlay.
    let asset_gains = base_portfolio.asset_gains.clone();
    for idx in 0..total {
        savings_gains[idx] += base_portfolio.savings_gains[idx];
    }

    let portfolio = PortfolioPaths {
        grid: bundle.grid.clone(),
        seed: bundle.seed,
        n_paths: bundle.n_paths,
        values,
        asset_gains,
        savings_gains,
        pnl,
        initial_value: base.initial_value,
    };

    if let Some(&path) = portfolio.negative_value_paths().first() {
        return Err(Error::precondition(format!(
            "dynamic wealth goes negative on path {path}; shrink vartheta or raise the initial value"
        )));
    }

    let mut pnl_bundle = PathBundle::new(bundle.seed, bundle.grid.clone(), bundle.n_paths);
    pnl_bundle.add_process("C", portfolio.pnl.clone());
    let pnl_report = martingale_test(&pnl_bundle, "C", 0.0, TestMode::Martingale, confidence)?;

    let deflated = portfolio.to_bundle("VZ", Some(deflator));
    let deflated_report = martingale_test(
        &deflated,
        "VZ",
        base.initial_value * deflator.z_at(0, 0),
        TestMode::Supermartingale,
        confidence,
    )?;

    let (covariation_mean, covariation_se) = mean_and_se(&covariation);

    Ok(MeanSelfFinancingRun {
        portfolio,
        eta,
        pnl_report,
        deflated_report,
        covariation_mean,
        covariation_se,
    })
}

// ---------------------------------------------------------------------------
// Tree-side strategies
// ---------------------------------------------------------------------------

/// Predictable holdings on a scenario tree: units fixed at a node and held
/// into its children.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeStrategy {
    pub initial_value: BigRational,
    /// `delta[node]` for internal nodes; leaves carry `None`.
    pub delta: Vec<Option<Vec<BigRational>>>,
}

/// Exact self-financing roll-forward on a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePortfolio {
    pub value: Vec<BigRational>,
    pub asset_gains: Vec<BigRational>,
    pub savings_gains: Vec<BigRational>,
}

impl TreePortfolio {
    /// The accounting identity `V = V_0 + gains` holds exactly by
    /// construction; this re-checks it.
    pub fn verify_accounting(&self, initial: &BigRational) -> bool {
        self.value
            .iter()
            .zip(self.asset_gains.iter().zip(&self.savings_gains))
            .all(|(v, (a, s))| v == &(initial + a + s))
    }
}

/// Rolls a predictable strategy forward on the tree, deriving the savings
/// holding from the self-financing budget at every node. Exact rationals.
pub fn roll_forward_tree(tree: &ScenarioTree, strategy: &TreeStrategy) -> Result<TreePortfolio> {
    let n = tree.nodes.len();
    if strategy.delta.len() != n {
        return Err(Error::dimension(format!(
            "strategy covers {} nodes of {n}",
            strategy.delta.len()
        )));
    }
    let d = tree.n_assets();
    let mut value = vec![BigRational::zero(); n];
    let mut asset_gains = vec![BigRational::zero(); n];
    let mut savings_gains = vec![BigRational::zero(); n];
    value[tree.root()] = strategy.initial_value.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| tree.node(i).time);
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let delta = strategy.delta[node].as_ref().ok_or_else(|| {
            Error::domain(format!(
                "strategy is missing holdings at internal node {}",
                tree.node(node).id
            ))
        })?;
        if delta.len() != d {
            return Err(Error::dimension(format!(
                "holdings at node {} have {} entries for {d} assets",
                tree.node(node).id,
                delta.len()
            )));
        }
        let node_data = tree.node(node);
        let position: BigRational = delta
            .iter()
            .zip(&node_data.prices)
            .map(|(u, s)| u * s)
            .sum();
        let eta = (&value[node] - position) / &node_data.savings;
        for &child in &node_data.children {
            let child_data = tree.node(child);
            let step_assets: BigRational = delta
                .iter()
                .enumerate()
                .map(|(i, u)| u * (&child_data.prices[i] - &node_data.prices[i]))
                .sum();
            let step_savings = &eta * (&child_data.savings - &node_data.savings);
            value[child] = &value[node] + &step_assets + &step_savings;
            asset_gains[child] = &asset_gains[node] + step_assets;
            savings_gains[child] = &savings_gains[node] + step_savings;
        }
    }
    Ok(TreePortfolio {
        value,
        asset_gains,
        savings_gains,
    })
}
