//! Deflator construction and refutation.
//!
//! For a parametric continuous-time market the candidate deflators have the
//! multiplicative form `Z = D * B^-1` with `D = E(-theta . W)` and
//! `B = exp(r . l)`. Such a `Z` deflates every asset to a local martingale
//! exactly when, cell by cell, the market price of risk `theta` solves
//! `sigma theta = a - r 1`. This module solves that linear system (least-norm
//! when underdetermined), or produces a Farkas-type witness of
//! infeasibility, and builds the corresponding deflator paths.
//!
//! On scenario trees it performs the multiplicative decomposition
//! `Z = D * C` into a tree martingale `D` and a predictable finite-variation
//! part `C`, exactly in rational arithmetic.

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{savings_account_values, ItoMarketSpec, RateCurve, ScenarioTree};
use crate::rat::{format_rat, rat_one};
use crate::rng::STREAM_ASSETS;
use crate::sde::{wiener_increments, PathBundle};

/// Residual above which a cell's linear system is declared unsolvable.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Market price of risk
// ---------------------------------------------------------------------------

/// Market price of risk per grid cell, with the rate that was used or solved
/// for, and the attained residual per cell.
#[derive(Debug, Clone, Serialize)]
pub struct RiskPriceSolution {
    /// `theta` per cell (m-vector).
    pub theta: Vec<Vec<f64>>,
    /// Short rate per cell; equals the input curve when one was supplied.
    pub rates: Vec<f64>,
    /// Whether the rate was solved for rather than supplied.
    pub rate_was_free: bool,
    /// Euclidean residual of `sigma theta - (a - r 1)` per cell.
    pub residuals: Vec<f64>,
}

impl RiskPriceSolution {
    /// Largest componentwise violation of `sigma theta = a - r 1` over cells.
    pub fn max_violation(&self, market: &ItoMarketSpec) -> f64 {
        let mut worst = 0.0f64;
        for (k, theta) in self.theta.iter().enumerate() {
            for asset in &market.assets {
                let lhs: f64 = asset.vol[k].iter().zip(theta).map(|(s, t)| s * t).sum();
                let rhs = asset.drift[k] - self.rates[k];
                worst = worst.max((lhs - rhs).abs());
            }
        }
        worst
    }
}

/// Witness that no market price of risk exists on some grid cell: a vector
/// `y` orthogonal to every volatility column (and to `1` when the rate is
/// free) whose inner product with the drift side is nonzero.
#[derive(Debug, Clone, Serialize)]
pub struct InfeasibilityCertificate {
    pub cell: usize,
    pub rate_was_free: bool,
    /// Witness vector of length d, unit Euclidean norm.
    pub witness: Vec<f64>,
    /// `max_j |y . sigma_j|` over driver columns; near zero.
    pub sigma_inner: f64,
    /// `|y . 1|`; near zero in rate-free mode, absent otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ones_inner: Option<f64>,
    /// `|y . rhs|`, the certified nonzero inner product.
    pub excess_inner: f64,
    pub explanation: String,
}

impl InfeasibilityCertificate {
    /// Checks the witness conditions: orthogonality to 1e-12, nonzero inner
    /// product above 1e-8.
    pub fn verify(&self) -> bool {
        let orthogonal = self.sigma_inner <= 1e-12 && self.ones_inner.map_or(true, |v| v <= 1e-12);
        orthogonal && self.excess_inner > 1e-8
    }
}

/// Outcome of the per-cell linear solve; the two arms are exhaustive.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum RiskPriceOutcome {
    Solved(RiskPriceSolution),
    Infeasible(InfeasibilityCertificate),
}

/// Solves `sigma theta = a - r 1` on every grid cell.
///
/// With `rate` supplied, `theta` is the least-norm least-squares solution per
/// cell. With `rate = None` the rate is one extra unknown per cell, shared
/// across assets, and the least-norm solution of the augmented system is
/// taken. The solved arm is returned only if the residual stays below
/// [`RESIDUAL_TOLERANCE`] on every cell; otherwise the least-squares residual
/// of the first bad cell, which is orthogonal to the column space, is
/// returned as a Farkas-type witness.
pub fn solve_market_price_of_risk(
    market: &ItoMarketSpec,
    rate: Option<&RateCurve>,
) -> Result<RiskPriceOutcome> {
    market.validate()?;
    if let Some(curve) = rate {
        if curve.rates.len() != market.n_cells() {
            return Err(Error::dimension(format!(
                "rate curve has {} cells, market has {}",
                curve.rates.len(),
                market.n_cells()
            )));
        }
    }
    let d = market.n_assets();
    let m = market.n_drivers;
    let rate_was_free = rate.is_none();
    let mut theta = Vec::with_capacity(market.n_cells());
    let mut rates = Vec::with_capacity(market.n_cells());
    let mut residuals = Vec::with_capacity(market.n_cells());

    for k in 0..market.n_cells() {
        let n_unknowns = if rate_was_free { m + 1 } else { m };
        let mut a = DMatrix::<f64>::zeros(d, n_unknowns);
        let mut rhs = DVector::<f64>::zeros(d);
        for (i, asset) in market.assets.iter().enumerate() {
            for j in 0..m {
                a[(i, j)] = asset.vol[k][j];
            }
            if rate_was_free {
                a[(i, m)] = 1.0; // unknown rate column: sigma theta + r 1 = a
                rhs[i] = asset.drift[k];
            } else {
                rhs[i] = asset.drift[k] - rate.unwrap().rates[k];
            }
        }
        let svd = a.clone().svd(true, true);
        let sv_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let eps = if sv_max > 0.0 {
            RANK_TOLERANCE * sv_max
        } else {
            RANK_TOLERANCE
        };
        let solution = svd
            .solve(&rhs, eps)
            .map_err(|e| Error::domain(format!("SVD solve failed: {e}")))?;
        let residual_vec = &rhs - &a * &solution;
        let residual = residual_vec.norm();
        if residual >= RESIDUAL_TOLERANCE {
            let witness: DVector<f64> = &residual_vec / residual;
            let sigma_inner = (0..m)
                .map(|j| {
                    (0..d)
                        .map(|i| witness[i] * market.assets[i].vol[k][j])
                        .sum::<f64>()
                        .abs()
                })
                .fold(0.0f64, f64::max);
            let ones_inner = if rate_was_free {
                Some((0..d).map(|i| witness[i]).sum::<f64>().abs())
            } else {
                None
            };
            let excess_inner = witness.dot(&rhs).abs();
            let explanation = if rate_was_free {
                format!(
                    "cell {k}: no short rate and market price of risk solve \
                     sigma theta = a - r for all assets; witness y has y.sigma = 0, \
                     y.1 = 0 but y.a = {excess_inner:.3e}"
                )
            } else {
                format!(
                    "cell {k}: no market price of risk solves sigma theta = a - r; \
                     witness y has y.sigma = 0 but y.(a - r) = {excess_inner:.3e}"
                )
            };
            return Ok(RiskPriceOutcome::Infeasible(InfeasibilityCertificate {
                cell: k,
                rate_was_free,
                witness: witness.iter().cloned().collect(),
                sigma_inner,
                ones_inner,
                excess_inner,
                explanation,
            }));
        }
        let theta_k: Vec<f64> = (0..m).map(|j| solution[j]).collect();
        let r_k = if rate_was_free {
            solution[m]
        } else {
            rate.unwrap().rates[k]
        };
        theta.push(theta_k);
        rates.push(r_k);
        residuals.push(residual);
    }

    Ok(RiskPriceOutcome::Solved(RiskPriceSolution {
        theta,
        rates,
        rate_was_free,
        residuals,
    }))
}

// ---------------------------------------------------------------------------
// Deflator paths
// ---------------------------------------------------------------------------

/// How a decomposition came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Constructed,
    Decomposed,
}

/// Simulated deflator triple on paths: `Z = D * C` with `D` the exponential
/// local martingale part and `C = B^-1` deterministic on the grid.
#[derive(Debug, Clone)]
pub struct PathDeflator {
    pub seed: u64,
    pub grid: Vec<f64>,
    pub n_paths: usize,
    /// Row-major `[n_paths x n_points]` values of `D`.
    d: Vec<f64>,
    /// Row-major `[n_paths x n_points]` values of `Z`.
    z: Vec<f64>,
    /// Deterministic `C = B^-1` per grid point.
    pub c: Vec<f64>,
    pub provenance: Provenance,
}

impl PathDeflator {
    fn n_points(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn d_at(&self, path: usize, point: usize) -> f64 {
        self.d[path * self.n_points() + point]
    }

    #[inline]
    pub fn z_at(&self, path: usize, point: usize) -> f64 {
        self.z[path * self.n_points() + point]
    }

    pub fn z_terminal(&self) -> Vec<f64> {
        let n = self.n_points();
        (0..self.n_paths).map(|p| self.z[p * n + n - 1]).collect()
    }

    pub fn d_terminal(&self) -> Vec<f64> {
        let n = self.n_points();
        (0..self.n_paths).map(|p| self.d[p * n + n - 1]).collect()
    }

    pub fn z0(&self) -> f64 {
        self.z[0]
    }

    /// Repackages `D` and `Z` as bundle processes for the test machinery.
    pub fn to_bundle(&self) -> PathBundle {
        let mut bundle = PathBundle::new(self.seed, self.grid.clone(), self.n_paths);
        bundle.add_process("D", self.d.clone());
        bundle.add_process("Z", self.z.clone());
        bundle
    }
}

/// Builds deflator paths `D = E(-theta . W)`, `C = B^-1`, `Z = D * C` on the
/// same grid and driver increments as the given asset bundle (same seed,
/// same per-path streams), so that `B * Z = D` holds identically.
pub fn build_deflator_paths(
    solution: &RiskPriceSolution,
    rate: &RateCurve,
    bundle: &PathBundle,
) -> Result<PathDeflator> {
    let n_points = bundle.n_points();
    let n_cells = n_points - 1;
    if solution.theta.len() != n_cells {
        return Err(Error::dimension(format!(
            "theta has {} cells, grid has {n_cells}",
            solution.theta.len()
        )));
    }
    if rate.rates.len() != n_cells {
        return Err(Error::dimension(format!(
            "rate curve has {} cells, grid has {n_cells}",
            rate.rates.len()
        )));
    }
    let m = solution.theta[0].len();
    let widths: Vec<f64> = bundle.grid.windows(2).map(|w| w[1] - w[0]).collect();
    let savings = savings_account_values(rate, &bundle.grid)?;
    let mut d = vec![0.0; bundle.n_paths * n_points];
    let mut z = vec![0.0; bundle.n_paths * n_points];
    for path in 0..bundle.n_paths {
        let dw = wiener_increments(bundle.seed, STREAM_ASSETS, path as u64, &widths, m);
        let row_d = &mut d[path * n_points..(path + 1) * n_points];
        row_d[0] = 1.0;
        let mut log_d = 0.0;
        for (k, &h) in widths.iter().enumerate() {
            let theta = &solution.theta[k];
            let theta_sq: f64 = theta.iter().map(|t| t * t).sum();
            let diffusion: f64 = theta
                .iter()
                .zip(&dw[k * m..(k + 1) * m])
                .map(|(t, w)| t * w)
                .sum();
            log_d += -0.5 * theta_sq * h - diffusion;
            row_d[k + 1] = log_d.exp();
        }
        for k in 0..n_points {
            z[path * n_points + k] = row_d[k] * savings.inverse[k];
        }
    }
    Ok(PathDeflator {
        seed: bundle.seed,
        grid: bundle.grid.clone(),
        n_paths: bundle.n_paths,
        d,
        z,
        c: savings.inverse,
        provenance: Provenance::Constructed,
    })
}

// ---------------------------------------------------------------------------
// Multiplicative decomposition on trees
// ---------------------------------------------------------------------------

/// Multiplicative decomposition `Z = D * C` on a scenario tree, exact in
/// rationals: `D` is a tree martingale and `C` is predictable (constant
/// across siblings) of finite variation with `C_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeDecomposition {
    pub z: Vec<BigRational>,
    pub d: Vec<BigRational>,
    pub c: Vec<BigRational>,
    pub provenance: Provenance,
}

impl TreeDecomposition {
    /// Verifies `Z = D * C`, positivity, `C_0 = 1`, predictability of `C`,
    /// and the martingale property of `D`, all exactly.
    pub fn verify(&self, tree: &ScenarioTree) -> bool {
        let n = tree.nodes.len();
        if self.z.len() != n || self.d.len() != n || self.c.len() != n {
            return false;
        }
        if self.c[tree.root()] != rat_one() {
            return false;
        }
        for i in 0..n {
            if !self.z[i].is_positive() || !self.d[i].is_positive() || !self.c[i].is_positive() {
                return false;
            }
            if self.z[i] != &self.d[i] * &self.c[i] {
                return false;
            }
        }
        for &node in &tree.internal_nodes() {
            let children = &tree.node(node).children;
            let first = &self.c[children[0]];
            if children.iter().any(|&c| &self.c[c] != first) {
                return false;
            }
        }
        tree.is_tree_martingale(&self.d)
    }
}

/// Decomposes a strictly positive tree process `Z` into `Z = D * C`.
///
/// `C` is built predictably through the one-step conditional growth of `Z`:
/// `C_{k+1} = C_k * E[Z_{k+1}/Z_k | node]`, identical across the children of
/// each node, and `D = Z / C` is then a tree martingale by construction. The
/// decomposition is exact and unique.
pub fn multiplicative_doob_decompose(
    tree: &ScenarioTree,
    z: &[BigRational],
) -> Result<TreeDecomposition> {
    if z.len() != tree.nodes.len() {
        return Err(Error::dimension(format!(
            "Z has {} entries for {} nodes",
            z.len(),
            tree.nodes.len()
        )));
    }
    for (idx, value) in z.iter().enumerate() {
        if !value.is_positive() {
            return Err(Error::domain(format!(
                "Z must be strictly positive, node {} carries {}",
                tree.node(idx).id,
                format_rat(value)
            )));
        }
    }
    let n = tree.nodes.len();
    let mut c = vec![BigRational::zero(); n];
    let mut d = vec![BigRational::zero(); n];
    c[tree.root()] = rat_one();
    d[tree.root()] = z[tree.root()].clone();
    // Parents before children: time-ordered traversal from the root.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| tree.node(i).time);
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let mut growth = BigRational::zero();
        for &child in &tree.node(node).children {
            growth += &tree.node(child).prob * &z[child];
        }
        growth /= &z[node];
        for &child in &tree.node(node).children {
            c[child] = &c[node] * &growth;
            d[child] = &z[child] / &c[child];
        }
    }
    Ok(TreeDecomposition {
        z: z.to_vec(),
        d,
        c,
        provenance: Provenance::Decomposed,
    })
}

// ---------------------------------------------------------------------------
// Savings account uniqueness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniquenessVerdict {
    Equal,
    Unequal,
}

fn is_tree_savings_account(tree: &ScenarioTree, b: &[BigRational]) -> bool {
    if b.len() != tree.nodes.len() {
        return false;
    }
    if b[tree.root()] != rat_one() {
        return false;
    }
    if b.iter().any(|v| !v.is_positive()) {
        return false;
    }
    tree.internal_nodes().iter().all(|&n| {
        let children = &tree.node(n).children;
        children.iter().all(|&c| b[c] == b[children[0]])
    })
}

/// Checks that two candidate savings accounts fitting the same martingale
/// part must coincide.
///
/// Precondition: some strictly positive asset is deflated to an exact tree
/// martingale by both `D * B^-1` and `D * B_hat^-1`. A violated precondition
/// is reported as an error, never as `Unequal`.
pub fn verify_savings_account_uniqueness(
    tree: &ScenarioTree,
    d: &[BigRational],
    b: &[BigRational],
    b_hat: &[BigRational],
) -> Result<UniquenessVerdict> {
    let n = tree.nodes.len();
    if d.len() != n || b.len() != n || b_hat.len() != n {
        return Err(Error::dimension("D, B and B_hat must cover every node"));
    }
    if d.iter().any(|v| !v.is_positive()) {
        return Err(Error::domain("martingale part D must be strictly positive"));
    }
    if !is_tree_savings_account(tree, b) {
        return Err(Error::precondition(
            "B is not a savings account (predictable, positive, B_0 = 1)",
        ));
    }
    if !is_tree_savings_account(tree, b_hat) {
        return Err(Error::precondition(
            "B_hat is not a savings account (predictable, positive, B_0 = 1)",
        ));
    }
    let deflates_with = |savings: &[BigRational], asset: usize| -> bool {
        let values: Vec<BigRational> = (0..n)
            .map(|i| &tree.node(i).prices[asset] * &d[i] / &savings[i])
            .collect();
        tree.is_tree_martingale(&values)
    };
    let witness_asset = (0..tree.n_assets()).find(|&i| {
        (0..n).all(|node| tree.node(node).prices[i].is_positive())
            && deflates_with(b, i)
            && deflates_with(b_hat, i)
    });
    if witness_asset.is_none() {
        return Err(Error::precondition(
            "no strictly positive asset is deflated to a tree martingale by both candidates",
        ));
    }
    if b == b_hat {
        Ok(UniquenessVerdict::Equal)
    } else {
        Ok(UniquenessVerdict::Unequal)
    }
}
