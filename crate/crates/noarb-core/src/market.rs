//! Market data model: parametric continuous-time markets, savings accounts,
//! and finite scenario trees, together with JSON ingestion and validation.
//!
//! Continuous-time quantities are `f64` with piecewise-constant coefficients
//! on the grid, so every time integral is an exact finite sum. Scenario trees
//! carry exact rationals throughout: probabilities, prices and the savings
//! account, so discrete no-arbitrage questions can be decided without
//! tolerances.

use std::fmt;
use std::path::Path;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rat::{format_rat, parse_rat, rat_one};

// ---------------------------------------------------------------------------
// Continuous-time market
// ---------------------------------------------------------------------------

/// One risky asset of a parametric market: a stochastic exponential with
/// piecewise-constant drift and volatility row.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetSpec {
    /// Initial value, strictly positive.
    pub initial: f64,
    /// Drift per grid cell (1/year).
    pub drift: Vec<f64>,
    /// Volatility row per grid cell; each entry is an m-vector.
    pub vol: Vec<Vec<f64>>,
}

/// Piecewise-constant short rate per grid cell (1/year).
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub rates: Vec<f64>,
}

/// Multi-asset market driven by independent Wiener processes, with every
/// asset a strictly positive stochastic exponential.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoMarketSpec {
    /// Horizon in years, strictly positive.
    pub horizon: f64,
    /// Strictly increasing grid `0 = t_0 < ... < t_N = T`.
    pub grid: Vec<f64>,
    /// Risky assets; `d >= 1`.
    pub assets: Vec<AssetSpec>,
    /// Number of Wiener drivers; `m >= 1`.
    pub n_drivers: usize,
    /// Short rate per cell when the market designates a savings account.
    /// `None` means the rate is left free (a savings account is searched for,
    /// not given).
    pub rate: Option<RateCurve>,
}

impl ItoMarketSpec {
    pub fn n_cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Cell widths `t_{k+1} - t_k`.
    pub fn cell_widths(&self) -> Vec<f64> {
        self.grid.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Splits every grid cell into `per_cell` equal parts, replicating the
    /// piecewise-constant coefficients; the market is unchanged in law.
    pub fn refined(&self, per_cell: usize) -> ItoMarketSpec {
        assert!(per_cell >= 1, "refinement factor must be at least 1");
        if per_cell == 1 {
            return self.clone();
        }
        let mut grid = Vec::with_capacity(self.n_cells() * per_cell + 1);
        grid.push(self.grid[0]);
        for w in self.grid.windows(2) {
            let h = (w[1] - w[0]) / per_cell as f64;
            for j in 1..per_cell {
                grid.push(w[0] + h * j as f64);
            }
            grid.push(w[1]);
        }
        let replicate = |xs: &[f64]| -> Vec<f64> {
            xs.iter()
                .flat_map(|&x| std::iter::repeat(x).take(per_cell))
                .collect()
        };
        ItoMarketSpec {
            horizon: self.horizon,
            grid,
            assets: self
                .assets
                .iter()
                .map(|a| AssetSpec {
                    initial: a.initial,
                    drift: replicate(&a.drift),
                    vol: a
                        .vol
                        .iter()
                        .flat_map(|row| std::iter::repeat(row.clone()).take(per_cell))
                        .collect(),
                })
                .collect(),
            n_drivers: self.n_drivers,
            rate: self.rate.as_ref().map(|r| RateCurve {
                rates: replicate(&r.rates),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::validation("horizon T must be > 0"));
        }
        if self.grid.len() < 2 {
            return Err(Error::validation("grid needs at least two points"));
        }
        if self.grid[0] != 0.0 {
            return Err(Error::validation("grid must start at 0"));
        }
        let last = *self.grid.last().unwrap();
        if (last - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(Error::validation(format!(
                "grid must end at T = {}, ends at {last}",
                self.horizon
            )));
        }
        for w in self.grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.assets.is_empty() {
            return Err(Error::validation(
                "market needs at least one asset (d >= 1)",
            ));
        }
        if self.n_drivers == 0 {
            return Err(Error::validation(
                "market needs at least one driver (m >= 1)",
            ));
        }
        let cells = self.n_cells();
        for (i, asset) in self.assets.iter().enumerate() {
            if !(asset.initial > 0.0) {
                return Err(Error::validation(format!(
                    "asset {i} initial value must be > 0, got {}",
                    asset.initial
                )));
            }
            if asset.drift.len() != cells {
                return Err(Error::validation(format!(
                    "asset {i} drift has {} cells, grid has {cells}",
                    asset.drift.len()
                )));
            }
            if asset.vol.len() != cells {
                return Err(Error::validation(format!(
                    "asset {i} vol has {} cells, grid has {cells}",
                    asset.vol.len()
                )));
            }
            for (k, row) in asset.vol.iter().enumerate() {
                if row.len() != self.n_drivers {
                    return Err(Error::validation(format!(
                        "asset {i} vol row at cell {k} has {} entries, expected m = {}",
                        row.len(),
                        self.n_drivers
                    )));
                }
            }
            let finite = asset.drift.iter().all(|x| x.is_finite())
                && asset.vol.iter().flatten().all(|x| x.is_finite());
            if !finite {
                return Err(Error::validation(format!(
                    "asset {i} has non-finite coefficients"
                )));
            }
        }
        if let Some(rate) = &self.rate {
            if rate.rates.len() != cells {
                return Err(Error::validation(format!(
                    "rate curve has {} cells, grid has {cells}",
                    rate.rates.len()
                )));
            }
            if !rate.rates.iter().all(|r| r.is_finite()) {
                return Err(Error::validation("rate curve has non-finite entries"));
            }
        }
        Ok(())
    }
}

/// Savings account values along a grid, with the inverse computed from the
/// negated integral so that `B * B^-1 == 1` to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingsPath {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub inverse: Vec<f64>,
}

/// Evaluates `B_t = exp(integral of r)` on the grid points.
///
/// The integral over piecewise-constant cells is an exact sum, so `B_0 = 1`
/// holds exactly and positivity is structural.
pub fn savings_account_values(rate: &RateCurve, grid: &[f64]) -> Result<SavingsPath> {
    if grid.len() < 2 {
        return Err(Error::dimension("grid needs at least two points"));
    }
    if rate.rates.len() != grid.len() - 1 {
        return Err(Error::dimension(format!(
            "rate curve has {} cells for a grid with {} cells",
            rate.rates.len(),
            grid.len() - 1
        )));
    }
    let mut integral = 0.0;
    let mut values = Vec::with_capacity(grid.len());
    let mut inverse = Vec::with_capacity(grid.len());
    values.push(1.0);
    inverse.push(1.0);
    for (k, w) in grid.windows(2).enumerate() {
        integral += rate.rates[k] * (w[1] - w[0]);
        values.push(integral.exp());
        inverse.push((-integral).exp());
    }
    Ok(SavingsPath {
        grid: grid.to_vec(),
        values,
        inverse,
    })
}

// ---------------------------------------------------------------------------
// Scenario tree
// ---------------------------------------------------------------------------

/// Node of a finite-horizon, finite-state market tree. All quantities are
/// exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Identifier from the input file; used in messages and serialization.
    pub id: u64,
    /// Index of the parent in [`ScenarioTree::nodes`]; `None` for the root.
    pub parent: Option<usize>,
    /// Time index `k`, root at 0, leaves at `T_disc`.
    pub time: usize,
    /// Transition probability from the parent; 1 at the root.
    pub prob: BigRational,
    /// Asset prices `S_k`, nonnegative.
    pub prices: Vec<BigRational>,
    /// Savings account value `B_k`, strictly positive and predictable.
    pub savings: BigRational,
    /// Indices of the children in [`ScenarioTree::nodes`].
    pub children: Vec<usize>,
}

/// Finite scenario tree with transition probabilities, asset prices and a
/// predictable savings account.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub nodes: Vec<TreeNode>,
    root: usize,
    horizon: usize,
    n_assets: usize,
}

impl ScenarioTree {
    /// Builds a tree from nodes and validates every invariant.
    pub fn new(nodes: Vec<TreeNode>) -> Result<Self> {
        let mut root = None;
        for (idx, node) in nodes.iter().enumerate() {
            if node.parent.is_none() {
                if root.is_some() {
                    return Err(Error::validation("tree has more than one root"));
                }
                root = Some(idx);
            }
        }
        let root = root.ok_or_else(|| Error::validation("tree has no root"))?;
        let n_assets = nodes[root].prices.len();
        let horizon = nodes.iter().map(|n| n.time).max().unwrap_or(0);
        let tree = ScenarioTree {
            nodes,
            root,
            horizon,
            n_assets,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn node(&self, idx: usize) -> &TreeNode {
        &self.nodes[idx]
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.nodes[idx].children.is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| !self.is_leaf(i))
            .collect()
    }

    /// Unconditional probability of reaching a node under the tree measure.
    pub fn path_probability(&self, idx: usize) -> BigRational {
        let mut p = rat_one();
        let mut cur = idx;
        while let Some(parent) = self.nodes[cur].parent {
            p *= &self.nodes[cur].prob;
            cur = parent;
        }
        p
    }

    /// Discounted price `S^i / B` at a node.
    pub fn discounted_price(&self, idx: usize, asset: usize) -> BigRational {
        &self.nodes[idx].prices[asset] / &self.nodes[idx].savings
    }

    /// Replaces the savings account, revalidating predictability/positivity.
    pub fn with_savings(&self, savings: &[BigRational]) -> Result<ScenarioTree> {
        if savings.len() != self.nodes.len() {
            return Err(Error::dimension(format!(
                "savings vector has {} entries for {} nodes",
                savings.len(),
                self.nodes.len()
            )));
        }
        let mut nodes = self.nodes.clone();
        for (node, b) in nodes.iter_mut().zip(savings) {
            node.savings = b.clone();
        }
        ScenarioTree::new(nodes)
    }

    /// The market discounted by its own savings account: prices become
    /// `S / B` and the savings account becomes the constant 1.
    pub fn discounted(&self) -> ScenarioTree {
        let mut nodes = self.nodes.clone();
        for node in nodes.iter_mut() {
            for price in node.prices.iter_mut() {
                *price = &*price / &node.savings;
            }
            node.savings = rat_one();
        }
        ScenarioTree::new(nodes).expect("discounting preserves validity")
    }

    /// Conditional one-step expectation `E[values at children | node]`.
    pub fn child_expectation(&self, idx: usize, values: &[BigRational]) -> BigRational {
        let mut acc = BigRational::zero();
        for &c in &self.nodes[idx].children {
            acc += &self.nodes[c].prob * &values[c];
        }
        acc
    }

    /// Whether a per-node process is a tree martingale, exactly:
    /// at every internal node the conditional expectation of the children
    /// values equals the node value.
    pub fn is_tree_martingale(&self, values: &[BigRational]) -> bool {
        self.internal_nodes()
            .iter()
            .all(|&n| self.child_expectation(n, values) == values[n])
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.n_assets == 0 {
            return Err(Error::validation("tree market needs at least one asset"));
        }
        if self.nodes[self.root].time != 0 {
            return Err(Error::validation(format!(
                "root node {} must have time index 0",
                self.nodes[self.root].id
            )));
        }
        if self.nodes[self.root].prob != rat_one() {
            return Err(Error::validation(format!(
                "root node {} must carry probability 1/1",
                self.nodes[self.root].id
            )));
        }
        if self.nodes[self.root].savings != rat_one() {
            return Err(Error::validation(format!(
                "savings account must start at 1, node {} has B = {}",
                self.nodes[self.root].id,
                format_rat(&self.nodes[self.root].savings)
            )));
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.prices.len() != self.n_assets {
                return Err(Error::validation(format!(
                    "node {} has {} asset prices, expected {}",
                    node.id,
                    node.prices.len(),
                    self.n_assets
                )));
            }
            for (i, price) in node.prices.iter().enumerate() {
                if price < &BigRational::zero() {
                    return Err(Error::validation(format!(
                        "asset {} price at node {} is negative: {}",
                        i,
                        node.id,
                        format_rat(price)
                    )));
                }
            }
            if node.savings <= BigRational::zero() {
                return Err(Error::validation(format!(
                    "savings account must be > 0, node {} has B = {}",
                    node.id,
                    format_rat(&node.savings)
                )));
            }
            if !node.prob.is_positive() {
                return Err(Error::validation(format!(
                    "transition probability at node {} must be > 0, got {}",
                    node.id,
                    format_rat(&node.prob)
                )));
            }
            for &c in &node.children {
                if c >= n {
                    return Err(Error::validation(format!(
                        "node {} references a child out of range",
                        node.id
                    )));
                }
                if self.nodes[c].parent != Some(idx) {
                    return Err(Error::validation(format!(
                        "child/parent links disagree between nodes {} and {}",
                        node.id, self.nodes[c].id
                    )));
                }
                if self.nodes[c].time != node.time + 1 {
                    return Err(Error::validation(format!(
                        "node {} at time {} has child {} at time {}",
                        node.id, node.time, self.nodes[c].id, self.nodes[c].time
                    )));
                }
            }
            if !node.children.is_empty() {
                let sum: BigRational = node
                    .children
                    .iter()
                    .map(|&c| self.nodes[c].prob.clone())
                    .sum();
                if sum != rat_one() {
                    return Err(Error::validation(format!(
                        "child probabilities at node {} sum to {}",
                        node.id,
                        format_rat(&sum)
                    )));
                }
                let first_b = &self.nodes[node.children[0]].savings;
                if node
                    .children
                    .iter()
                    .any(|&c| &self.nodes[c].savings != first_b)
                {
                    return Err(Error::validation(format!(
                        "B not predictable: children of node {} carry different savings values",
                        node.id
                    )));
                }
            } else if node.time != self.horizon {
                return Err(Error::validation(format!(
                    "leaf node {} sits at time {} but the horizon is {}",
                    node.id, node.time, self.horizon
                )));
            }
        }
        // Reachability: every node except the root must hang off the root.
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            if seen[i] {
                return Err(Error::validation("tree contains a cycle".to_string()));
            }
            seen[i] = true;
            stack.extend(self.nodes[i].children.iter().copied());
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::validation(
                "tree has nodes unreachable from the root",
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON wire formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ItoFile {
    #[serde(rename = "T")]
    horizon: f64,
    grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<Vec<f64>>,
    assets: Vec<ItoAssetFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ItoAssetFile {
    s0: f64,
    drift: Vec<f64>,
    vol: Vec<Vec<f64>>,
}

/// Compact single-asset form: `{"S0":1,"a":0.05,"sigma":0.2,"r":0.02,"T":1}`.
/// The optional `r` designates a savings account; omit it to leave the rate
/// free. Maps to one grid cell `[0, T]`.
#[derive(Debug, Deserialize)]
struct CompactItoFile {
    #[serde(rename = "S0")]
    s0: f64,
    a: f64,
    sigma: f64,
    #[serde(default)]
    r: Option<f64>,
    #[serde(rename = "T")]
    horizon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeFile {
    nodes: Vec<TreeNodeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeNodeFile {
    id: u64,
    parent: Option<u64>,
    t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob: Option<String>,
    #[serde(rename = "S")]
    prices: Vec<String>,
    #[serde(rename = "B")]
    savings: String,
    children: Vec<u64>,
}

/// A loaded market: either parametric continuous-time or a scenario tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Market {
    Ito(ItoMarketSpec),
    Tree(ScenarioTree),
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Market::Ito(m) => write!(
                f,
                "ito market: d={}, m={}, {} cells, T={}",
                m.n_assets(),
                m.n_drivers,
                m.n_cells(),
                m.horizon
            ),
            Market::Tree(t) => write!(
                f,
                "scenario tree: d={}, {} nodes, horizon {}",
                t.n_assets(),
                t.nodes.len(),
                t.horizon()
            ),
        }
    }
}

/// Parses a market description from JSON text and validates it.
///
/// Accepts the tagged `{"type":"ito",...}` and `{"type":"tree",...}` schemas
/// as well as the compact single-asset form.
pub fn parse_market(text: &str) -> Result<Market> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("type").and_then(|t| t.as_str()) {
        Some("ito") => {
            let file: ItoFile = serde_json::from_value(value)?;
            Ok(Market::Ito(ito_from_file(file)?))
        }
        Some("tree") => {
            let file: TreeFile = serde_json::from_value(value)?;
            Ok(Market::Tree(tree_from_file(file)?))
        }
        Some(other) => Err(Error::validation(format!("unknown market type {other:?}"))),
        None if value.get("S0").is_some() => {
            let file: CompactItoFile = serde_json::from_value(value)?;
            Ok(Market::Ito(ito_from_compact(file)?))
        }
        None => Err(Error::validation(
            "market file needs a \"type\" field (\"ito\" or \"tree\") or the compact single-asset keys",
        )),
    }
}

/// Loads and validates a market from a JSON file.
pub fn load_market(path: impl AsRef<Path>) -> Result<Market> {
    let text = std::fs::read_to_string(path)?;
    parse_market(&text)
}

fn ito_from_file(file: ItoFile) -> Result<ItoMarketSpec> {
    let n_drivers = file
        .assets
        .first()
        .and_then(|a| a.vol.first())
        .map(|row| row.len())
        .unwrap_or(0);
    let spec = ItoMarketSpec {
        horizon: file.horizon,
        grid: file.grid,
        assets: file
            .assets
            .into_iter()
            .map(|a| AssetSpec {
                initial: a.s0,
                drift: a.drift,
                vol: a.vol,
            })
            .collect(),
        n_drivers,
        rate: file.rate.map(|rates| RateCurve { rates }),
    };
    spec.validate()?;
    Ok(spec)
}

fn ito_from_compact(file: CompactItoFile) -> Result<ItoMarketSpec> {
    let spec = ItoMarketSpec {
        horizon: file.horizon,
        grid: vec![0.0, file.horizon],
        assets: vec![AssetSpec {
            initial: file.s0,
            drift: vec![file.a],
            vol: vec![vec![file.sigma]],
        }],
        n_drivers: 1,
        rate: file.r.map(|r| RateCurve { rates: vec![r] }),
    };
    spec.validate()?;
    Ok(spec)
}

fn tree_from_file(file: TreeFile) -> Result<ScenarioTree> {
    let mut index_of = std::collections::HashMap::new();
    for (idx, node) in file.nodes.iter().enumerate() {
        if index_of.insert(node.id, idx).is_some() {
            return Err(Error::validation(format!("duplicate node id {}", node.id)));
        }
    }
    let mut nodes = Vec::with_capacity(file.nodes.len());
    for node in &file.nodes {
        let parent = match node.parent {
            None => None,
            Some(pid) => Some(*index_of.get(&pid).ok_or_else(|| {
                Error::validation(format!(
                    "node {} references unknown parent {}",
                    node.id, pid
                ))
            })?),
        };
        let prob = match (&node.prob, parent) {
            (Some(p), _) => parse_rat(p)?,
            (None, None) => rat_one(),
            (None, Some(_)) => {
                return Err(Error::validation(format!(
                    "node {} is missing its transition probability",
                    node.id
                )))
            }
        };
        let prices = node
            .prices
            .iter()
            .map(|p| parse_rat(p))
            .collect::<Result<Vec<_>>>()?;
        let children = node
            .children
            .iter()
            .map(|cid| {
                index_of.get(cid).copied().ok_or_else(|| {
                    Error::validation(format!("node {} references unknown child {}", node.id, cid))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        nodes.push(TreeNode {
            id: node.id,
            parent,
            time: node.t,
            prob,
            prices,
            savings: parse_rat(&node.savings)?,
            children,
        });
    }
    ScenarioTree::new(nodes)
}

/// Serializes a tree back to its JSON wire form.
pub fn tree_to_json(tree: &ScenarioTree) -> serde_json::Value {
    let nodes: Vec<TreeNodeFile> = tree
        .nodes
        .iter()
        .map(|node| TreeNodeFile {
            id: node.id,
            parent: node.parent.map(|p| tree.nodes[p].id),
            t: node.time,
            prob: Some(format_rat(&node.prob)),
            prices: node.prices.iter().map(format_rat).collect(),
            savings: format_rat(&node.savings),
            children: node.children.iter().map(|&c| tree.nodes[c].id).collect(),
        })
        .collect();
    serde_json::json!({ "type": "tree", "nodes": nodes })
}
