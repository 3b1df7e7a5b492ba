//! Exact no-arbitrage decision on scenario trees.
//!
//! [`decide_na`] settles the discrete fundamental dichotomy constructively:
//! either it finds an equivalent martingale measure for the discounted
//! market `S B^-1` (strictly positive node weights under which every
//! discounted asset is a tree martingale), or it extracts a self-financing
//! arbitrage strategy. Both sides are produced by an exact rational simplex
//! and verified against their defining identities before being returned.
//!
//! [`brute_force_na`] is an independent oracle for the same question that
//! never pivots: it decomposes the tree into one-step markets and decides
//! each by exhaustive vertex enumeration of the one-step measure polytope
//! (the Farkas alternative at that node).

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::lp::{solve, LinearProgram, LpOutcome, Relation};
use crate::market::ScenarioTree;
use crate::rat::{format_rat, rat_one};

/// Certificate returned by [`decide_na`]: exactly one of the two kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum LpCertificate {
    /// Strictly positive node weights `Q(node)` forming a probability
    /// measure under which every discounted asset is a tree martingale.
    Emm { node_weights: Vec<BigRational> },
    /// Predictable strategy in the discounted market with zero initial
    /// value whose terminal gains are nonnegative everywhere and positive
    /// somewhere.
    Arbitrage {
        /// Holdings per internal node (indexed like the tree nodes; leaves
        /// carry `None`).
        strategy: Vec<Option<Vec<BigRational>>>,
        /// Discounted terminal gain per node, populated at the leaves.
        leaf_gains: Vec<Option<BigRational>>,
    },
}

impl LpCertificate {
    pub fn kind(&self) -> &'static str {
        match self {
            LpCertificate::Emm { .. } => "emm",
            LpCertificate::Arbitrage { .. } => "arbitrage",
        }
    }

    /// Conditional density process `D = dQ/dP` of an EMM certificate: a
    /// strictly positive tree martingale with `D_0 = 1`.
    pub fn density_martingale(&self, tree: &ScenarioTree) -> Option<Vec<BigRational>> {
        match self {
            LpCertificate::Emm { node_weights } => Some(
                (0..tree.nodes.len())
                    .map(|n| &node_weights[n] / tree.path_probability(n))
                    .collect(),
            ),
            LpCertificate::Arbitrage { .. } => None,
        }
    }

    /// Checks the certificate's defining identities, exactly.
    pub fn verify(&self, tree: &ScenarioTree) -> bool {
        match self {
            LpCertificate::Emm { node_weights } => verify_emm(tree, node_weights),
            LpCertificate::Arbitrage {
                strategy,
                leaf_gains,
            } => verify_arbitrage(tree, strategy, leaf_gains).is_some(),
        }
    }

    /// Wire form: `{"kind":"emm","q":{...}}` or
    /// `{"kind":"arbitrage","delta":{...}}`, rationals as `"p/q"` strings
    /// keyed by the node ids from the input file.
    pub fn to_json(&self, tree: &ScenarioTree) -> serde_json::Value {
        match self {
            LpCertificate::Emm { node_weights } => {
                let q: BTreeMap<String, String> = node_weights
                    .iter()
                    .enumerate()
                    .map(|(n, w)| (tree.node(n).id.to_string(), format_rat(w)))
                    .collect();
                serde_json::json!({"kind": "emm", "q": q})
            }
            LpCertificate::Arbitrage {
                strategy,
                leaf_gains,
            } => {
                let delta: BTreeMap<String, Vec<String>> = strategy
                    .iter()
                    .enumerate()
                    .filter_map(|(n, d)| {
                        d.as_ref().map(|d| {
                            (
                                tree.node(n).id.to_string(),
                                d.iter().map(format_rat).collect(),
                            )
                        })
                    })
                    .collect();
                let gains: BTreeMap<String, String> = leaf_gains
                    .iter()
                    .enumerate()
                    .filter_map(|(n, g)| {
                        g.as_ref()
                            .map(|g| (tree.node(n).id.to_string(), format_rat(g)))
                    })
                    .collect();
                serde_json::json!({"kind": "arbitrage", "delta": delta, "gains": gains})
            }
        }
    }
}

fn verify_emm(tree: &ScenarioTree, weights: &[BigRational]) -> bool {
    if weights.len() != tree.nodes.len() {
        return false;
    }
    if weights[tree.root()] != rat_one() {
        return false;
    }
    if weights.iter().any(|w| !w.is_positive()) {
        return false;
    }
    for &n in &tree.internal_nodes() {
        let children = &tree.node(n).children;
        let mass: BigRational = children.iter().map(|&c| weights[c].clone()).sum();
        if mass != weights[n] {
            return false;
        }
        for asset in 0..tree.n_assets() {
            let lhs: BigRational = children
                .iter()
                .map(|&c| &weights[c] * tree.discounted_price(c, asset))
                .sum();
            if lhs != &weights[n] * tree.discounted_price(n, asset) {
                return false;
            }
        }
    }
    true
}

/// Recomputes the gains of a strategy and checks the arbitrage inequalities;
/// returns the per-leaf gains when valid.
fn verify_arbitrage(
    tree: &ScenarioTree,
    strategy: &[Option<Vec<BigRational>>],
    claimed: &[Option<BigRational>],
) -> Option<Vec<BigRational>> {
    if strategy.len() != tree.nodes.len() || claimed.len() != tree.nodes.len() {
        return None;
    }
    let gains = discounted_gains(tree, strategy)?;
    let mut some_positive = false;
    for leaf in tree.leaves() {
        let g = &gains[leaf];
        if g.is_negative() {
            return None;
        }
        if g.is_positive() {
            some_positive = true;
        }
        match &claimed[leaf] {
            Some(c) if c == g => {}
            _ => return None,
        }
    }
    some_positive.then_some(gains)
}

/// Cumulative discounted gain `sum delta . (X_k - X_{k-1})` at every node.
pub fn discounted_gains(
    tree: &ScenarioTree,
    strategy: &[Option<Vec<BigRational>>],
) -> Option<Vec<BigRational>> {
    let n = tree.nodes.len();
    let mut gains = vec![BigRational::zero(); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| tree.node(i).time);
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let delta = strategy[node].as_ref()?;
        if delta.len() != tree.n_assets() {
            return None;
        }
        for &child in &tree.node(node).children {
            let mut step = BigRational::zero();
            for (asset, units) in delta.iter().enumerate() {
                step += units
                    * (tree.discounted_price(child, asset) - tree.discounted_price(node, asset));
            }
            gains[child] = &gains[node] + step;
        }
    }
    Some(gains)
}

/// Decides no-arbitrage on the tree, constructively and exactly.
///
/// The measure side maximizes the minimum node weight subject to the
/// martingale and consistency constraints; a positive optimum yields the
/// EMM certificate. Otherwise no strictly positive measure exists, and the
/// strategy side maximizes total terminal gain under nonnegativity and a
/// normalization cap, which then attains 1 and yields the arbitrage
/// certificate. Exactly one certificate kind is returned, and it is verified
/// against its invariants before being handed back.
pub fn decide_na(tree: &ScenarioTree) -> LpCertificate {
    if let Some(weights) = emm_weights(tree) {
        let cert = LpCertificate::Emm {
            node_weights: weights,
        };
        assert!(
            cert.verify(tree),
            "EMM certificate failed self-verification"
        );
        return cert;
    }
    let (strategy, leaf_gains) = arbitrage_strategy(tree)
        .expect("no EMM exists, so an arbitrage strategy must (finite-market dichotomy)");
    let cert = LpCertificate::Arbitrage {
        strategy,
        leaf_gains,
    };
    assert!(
        cert.verify(tree),
        "arbitrage certificate failed self-verification"
    );
    cert
}

fn emm_weights(tree: &ScenarioTree) -> Option<Vec<BigRational>> {
    let n = tree.nodes.len();
    let root = tree.root();
    // Variables: one weight per non-root node, then the min-weight bound.
    let mut var_of = vec![usize::MAX; n];
    let mut next = 0usize;
    for i in 0..n {
        if i != root {
            var_of[i] = next;
            next += 1;
        }
    }
    let eps_var = next;
    let n_vars = next + 1;

    let mut constraints = Vec::new();
    for &node in &tree.internal_nodes() {
        let children = &tree.node(node).children;
        // Consistency: child mass equals the node weight.
        let mut row = vec![BigRational::zero(); n_vars];
        let mut rhs = BigRational::zero();
        for &c in children {
            row[var_of[c]] = BigRational::one();
        }
        if node == root {
            rhs = rat_one();
        } else {
            row[var_of[node]] = -BigRational::one();
        }
        constraints.push((row, Relation::Eq, rhs));
        // Martingale identity per asset.
        for asset in 0..tree.n_assets() {
            let mut row = vec![BigRational::zero(); n_vars];
            let mut rhs = BigRational::zero();
            for &c in children {
                row[var_of[c]] = tree.discounted_price(c, asset);
            }
            let x_node = tree.discounted_price(node, asset);
            if node == root {
                rhs = x_node;
            } else {
                row[var_of[node]] = -x_node;
            }
            constraints.push((row, Relation::Eq, rhs));
        }
    }
    // Weights dominate the bound; the root weight is the constant 1.
    for i in 0..n {
        let mut row = vec![BigRational::zero(); n_vars];
        row[eps_var] = BigRational::one();
        let rhs = if i == root {
            rat_one()
        } else {
            row[var_of[i]] = -BigRational::one();
            BigRational::zero()
        };
        constraints.push((row, Relation::Le, rhs));
    }
    let mut objective = vec![BigRational::zero(); n_vars];
    objective[eps_var] = BigRational::one();

    let lp = LinearProgram {
        n_vars,
        objective,
        constraints,
    };
    match solve(&lp) {
        LpOutcome::Optimal {
            objective,
            solution,
        } if objective.is_positive() => {
            let mut weights = vec![rat_one(); n];
            for i in 0..n {
                if i != root {
                    weights[i] = solution[var_of[i]].clone();
                }
            }
            Some(weights)
        }
        LpOutcome::Optimal { .. } | LpOutcome::Infeasible => None,
        LpOutcome::Unbounded => unreachable!("weights are capped by the consistency rows"),
    }
}

type StrategyAndGains = (Vec<Option<Vec<BigRational>>>, Vec<Option<BigRational>>);

fn arbitrage_strategy(tree: &ScenarioTree) -> Option<StrategyAndGains> {
    let n = tree.nodes.len();
    let d = tree.n_assets();
    let internal = tree.internal_nodes();
    let leaves = tree.leaves();
    // Variables: split holdings per (internal node, asset), then one gain
    // variable per leaf.
    let var_plus = |i: usize, asset: usize| 2 * (i * d + asset);
    let var_minus = |i: usize, asset: usize| 2 * (i * d + asset) + 1;
    let gain_var_base = 2 * internal.len() * d;
    let n_vars = gain_var_base + leaves.len();

    let index_in_internal: BTreeMap<usize, usize> = internal
        .iter()
        .enumerate()
        .map(|(k, &node)| (node, k))
        .collect();

    let mut constraints = Vec::new();
    for (l, &leaf) in leaves.iter().enumerate() {
        // Gain along the path to this leaf, expressed edge by edge.
        let mut row = vec![BigRational::zero(); n_vars];
        let mut cur = leaf;
        while let Some(parent) = tree.node(cur).parent {
            let k = index_in_internal[&parent];
            for asset in 0..d {
                let move_ =
                    tree.discounted_price(cur, asset) - tree.discounted_price(parent, asset);
                row[var_plus(k, asset)] += &move_;
                row[var_minus(k, asset)] -= &move_;
            }
            cur = parent;
        }
        row[gain_var_base + l] = -BigRational::one();
        constraints.push((row, Relation::Eq, BigRational::zero()));
    }
    // Normalization: total gain capped at one, so the optimum is 0 or 1.
    let mut cap = vec![BigRational::zero(); n_vars];
    for l in 0..leaves.len() {
        cap[gain_var_base + l] = BigRational::one();
    }
    constraints.push((cap.clone(), Relation::Le, rat_one()));

    let lp = LinearProgram {
        n_vars,
        objective: cap,
        constraints,
    };
    match solve(&lp) {
        LpOutcome::Optimal {
            objective,
            solution,
        } if objective.is_positive() => {
            let mut strategy: Vec<Option<Vec<BigRational>>> = vec![None; n];
            for (k, &node) in internal.iter().enumerate() {
                let delta: Vec<BigRational> = (0..d)
                    .map(|asset| &solution[var_plus(k, asset)] - &solution[var_minus(k, asset)])
                    .collect();
                strategy[node] = Some(delta);
            }
            let gains = discounted_gains(tree, &strategy)?;
            let mut leaf_gains = vec![None; n];
            for &leaf in &leaves {
                leaf_gains[leaf] = Some(gains[leaf].clone());
            }
            Some((strategy, leaf_gains))
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteForceVerdict {
    NoArbitrage,
    ArbitrageExists,
}

/// Decides no-arbitrage by exhaustive one-step enumeration, without LP
/// pivoting.
///
/// A finite tree admits an arbitrage iff some single step does, and one-step
/// no-arbitrage at a node is equivalent (Stiemke alternative) to a strictly
/// positive weighting of the children that annuls every asset's discounted
/// move. That polytope is decided exactly by enumerating candidate vertex
/// supports: a strictly positive point exists iff the union of the vertex
/// supports covers all children.
pub fn brute_force_na(tree: &ScenarioTree) -> Result<BruteForceVerdict> {
    if tree.horizon() > 3 {
        return Err(Error::SizeLimit(format!(
            "brute force handles at most 3 periods, tree has {}",
            tree.horizon()
        )));
    }
    if tree.n_assets() > 3 {
        return Err(Error::SizeLimit(format!(
            "brute force handles at most 3 assets, tree has {}",
            tree.n_assets()
        )));
    }
    for &node in &tree.internal_nodes() {
        let n_children = tree.node(node).children.len();
        if n_children > 4 {
            return Err(Error::SizeLimit(format!(
                "brute force handles at most 4 children per node, node {} has {n_children}",
                tree.node(node).id
            )));
        }
        if !one_step_has_positive_annihilator(tree, node) {
            return Ok(BruteForceVerdict::ArbitrageExists);
        }
    }
    Ok(BruteForceVerdict::NoArbitrage)
}

fn one_step_has_positive_annihilator(tree: &ScenarioTree, node: usize) -> bool {
    let children = &tree.node(node).children;
    let d = tree.n_assets();
    let nc = children.len();
    // Columns (move vector, 1) per child; a vertex support S solves
    // sum_{c in S} q_c move_c = 0, sum q_c = 1 uniquely with q >= 0.
    let columns: Vec<Vec<BigRational>> = children
        .iter()
        .map(|&c| {
            let mut col: Vec<BigRational> = (0..d)
                .map(|asset| tree.discounted_price(c, asset) - tree.discounted_price(node, asset))
                .collect();
            col.push(BigRational::one());
            col
        })
        .collect();
    let mut covered = vec![false; nc];
    let mut any_vertex = false;
    for mask in 1u32..(1 << nc) {
        let support: Vec<usize> = (0..nc).filter(|&c| mask & (1 << c) != 0).collect();
        let rows = d + 1;
        let mut a = vec![vec![BigRational::zero(); support.len()]; rows];
        for (j, &c) in support.iter().enumerate() {
            for r in 0..rows {
                a[r][j] = columns[c][r].clone();
            }
        }
        let mut b = vec![BigRational::zero(); rows];
        b[d] = BigRational::one();
        if let Some(q) = solve_unique(&a, &b) {
            if q.iter().all(|v| !v.is_negative()) {
                any_vertex = true;
                for (j, &c) in support.iter().enumerate() {
                    if q[j].is_positive() {
                        covered[c] = true;
                    }
                }
            }
        }
    }
    any_vertex && covered.iter().all(|&c| c)
}

/// Solves an (over)determined exact system, returning the solution only
/// when it exists and is unique (full column rank, consistent).
fn solve_unique(a: &[Vec<BigRational>], b: &[BigRational]) -> Option<Vec<BigRational>> {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut aug: Vec<Vec<BigRational>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let mut pivot_row = 0usize;
    let mut pivot_cols = Vec::new();
    for col in 0..cols {
        let found = (pivot_row..rows).find(|&r| !aug[r][col].is_zero());
        let Some(found) = found else { continue };
        aug.swap(pivot_row, found);
        let p = aug[pivot_row][col].clone();
        for e in aug[pivot_row].iter_mut() {
            *e /= &p;
        }
        for r in 0..rows {
            if r != pivot_row && !aug[r][col].is_zero() {
                let f = aug[r][col].clone();
                let prow = aug[pivot_row].clone();
                for (e, pe) in aug[r].iter_mut().zip(&prow) {
                    *e -= &f * pe;
                }
            }
        }
        pivot_cols.push(col);
        pivot_row += 1;
        if pivot_row == rows {
            break;
        }
    }
    if pivot_cols.len() != cols {
        return None; // rank-deficient: no unique solution
    }
    // Consistency: remaining rows must be all zero.
    for r in pivot_row..rows {
        if !aug[r][cols].is_zero() {
            return None;
        }
    }
    let mut x = vec![BigRational::zero(); cols];
    for (k, &col) in pivot_cols.iter().enumerate() {
        x[col] = aug[k][cols].clone();
    }
    Some(x)
}

/// Runs [`decide_na`] after replacing the savings account with a caller
/// supplied candidate.
///
/// The search over savings accounts is caller-driven: this routine only
/// checks one candidate, which must be predictable, strictly positive and
/// start at one.
pub fn find_savings_account(
    tree: &ScenarioTree,
    candidate: &[BigRational],
) -> Result<LpCertificate> {
    if candidate.len() != tree.nodes.len() {
        return Err(Error::dimension(format!(
            "candidate savings account has {} entries for {} nodes",
            candidate.len(),
            tree.nodes.len()
        )));
    }
    if candidate[tree.root()] != rat_one() {
        return Err(Error::domain("candidate savings account must start at 1"));
    }
    if candidate.iter().any(|b| !b.is_positive()) {
        return Err(Error::domain(
            "candidate savings account must be strictly positive",
        ));
    }
    for &node in &tree.internal_nodes() {
        let children = &tree.node(node).children;
        if children
            .iter()
            .any(|&c| candidate[c] != candidate[children[0]])
        {
            return Err(Error::domain(format!(
                "candidate savings account is not predictable: children of node {} differ",
                tree.node(node).id
            )));
        }
    }
    let renormalized = tree.with_savings(candidate)?;
    Ok(decide_na(&renormalized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{parse_market, Market};
    use crate::rat::{rat, rat_int};

    fn tree_from(json: serde_json::Value) -> ScenarioTree {
        match parse_market(&json.to_string()).unwrap() {
            Market::Tree(t) => t,
            _ => panic!("expected tree"),
        }
    }

    fn binomial(up: &str, down: &str, b1: &str) -> ScenarioTree {
        tree_from(serde_json::json!({
            "type": "tree",
            "nodes": [
                {"id": 0, "parent": null, "t": 0, "prob": "1/1", "S": ["1/1"], "B": "1/1", "children": [1, 2]},
                {"id": 1, "parent": 0, "t": 1, "prob": "1/2", "S": [up], "B": b1, "children": []},
                {"id": 2, "parent": 0, "t": 1, "prob": "1/2", "S": [down], "B": b1, "children": []},
            ]
        }))
    }

    #[test]
    fn binomial_emm_weights_are_one_third_two_thirds() {
        let tree = binomial("2/1", "1/2", "1/1");
        match decide_na(&tree) {
            LpCertificate::Emm { node_weights } => {
                assert_eq!(node_weights[1], rat(1, 3));
                assert_eq!(node_weights[2], rat(2, 3));
            }
            other => panic!("expected EMM, got {other:?}"),
        }
    }

    #[test]
    fn dominating_asset_yields_arbitrage() {
        let tree = binomial("2/1", "3/2", "1/1");
        match decide_na(&tree) {
            LpCertificate::Arbitrage {
                strategy,
                leaf_gains,
            } => {
                let cert = LpCertificate::Arbitrage {
                    strategy,
                    leaf_gains,
                };
                assert!(cert.verify(&tree));
            }
            other => panic!("expected arbitrage, got {other:?}"),
        }
    }

    #[test]
    fn discounting_changes_the_measure() {
        // With B_1 = 5/4 the up weight solves 2q + (1-q)/2 = 5/4: q = 1/2.
        let tree = binomial("2/1", "1/2", "5/4");
        match decide_na(&tree) {
            LpCertificate::Emm { node_weights } => {
                assert_eq!(node_weights[1], rat(1, 2));
                assert_eq!(node_weights[2], rat(1, 2));
            }
            other => panic!("expected EMM, got {other:?}"),
        }
    }

    #[test]
    fn density_martingale_is_a_tree_martingale() {
        let tree = binomial("2/1", "1/2", "1/1");
        let cert = decide_na(&tree);
        let density = cert.density_martingale(&tree).unwrap();
        assert_eq!(density[0], rat_int(1));
        assert!(tree.is_tree_martingale(&density));
        assert!(density.iter().all(|d| d.is_positive()));
    }

    #[test]
    fn brute_force_agrees_on_the_basic_instances() {
        assert_eq!(
            brute_force_na(&binomial("2/1", "1/2", "1/1")).unwrap(),
            BruteForceVerdict::NoArbitrage
        );
        assert_eq!(
            brute_force_na(&binomial("2/1", "3/2", "1/1")).unwrap(),
            BruteForceVerdict::ArbitrageExists
        );
    }

    #[test]
    fn assets_equal_to_savings_never_arbitrage() {
        let tree = tree_from(serde_json::json!({
            "type": "tree",
            "nodes": [
                {"id": 0, "parent": null, "t": 0, "prob": "1/1", "S": ["1/1"], "B": "1/1", "children": [1, 2]},
                {"id": 1, "parent": 0, "t": 1, "prob": "1/3", "S": ["6/5"], "B": "6/5", "children": []},
                {"id": 2, "parent": 0, "t": 1, "prob": "2/3", "S": ["6/5"], "B": "6/5", "children": []},
            ]
        }));
        assert_eq!(
            brute_force_na(&tree).unwrap(),
            BruteForceVerdict::NoArbitrage
        );
        assert!(matches!(decide_na(&tree), LpCertificate::Emm { .. }));
    }

    #[test]
    fn certificate_json_shapes() {
        let tree = binomial("2/1", "1/2", "1/1");
        let cert = decide_na(&tree);
        let json = cert.to_json(&tree);
        assert_eq!(json["kind"], "emm");
        assert_eq!(json["q"]["1"], "1/3");

        let tree = binomial("2/1", "3/2", "1/1");
        let cert = decide_na(&tree);
        let json = cert.to_json(&tree);
        assert_eq!(json["kind"], "arbitrage");
        assert!(json["delta"]["0"].is_array());
    }

    #[test]
    fn find_savings_account_flat_candidate() {
        let tree = binomial("2/1", "1/2", "5/4");
        let flat = vec![rat_int(1); 3];
        let cert = find_savings_account(&tree, &flat).unwrap();
        match cert {
            LpCertificate::Emm { node_weights } => {
                assert_eq!(node_weights[1], rat(1, 3));
            }
            other => panic!("expected EMM, got {other:?}"),
        }
    }

    #[test]
    fn find_savings_account_rejects_non_predictable() {
        let tree = binomial("2/1", "1/2", "1/1");
        let bad = vec![rat_int(1), rat_int(2), rat_int(1)];
        let err = find_savings_account(&tree, &bad).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn self_discounting_by_a_predictable_asset() {
        // Asset 0 is predictable (deterministic) and positive; using it as
        // the savings account renormalizes it to the constant 1.
        let tree = tree_from(serde_json::json!({
            "type": "tree",
            "nodes": [
                {"id": 0, "parent": null, "t": 0, "prob": "1/1", "S": ["1/1", "1/1"], "B": "1/1", "children": [1, 2]},
                {"id": 1, "parent": 0, "t": 1, "prob": "1/2", "S": ["5/4", "2/1"], "B": "1/1", "children": []},
                {"id": 2, "parent": 0, "t": 1, "prob": "1/2", "S": ["5/4", "1/2"], "B": "1/1", "children": []},
            ]
        }));
        let candidate: Vec<BigRational> = (0..3).map(|n| tree.node(n).prices[0].clone()).collect();
        let cert = find_savings_account(&tree, &candidate).unwrap();
        assert!(matches!(cert, LpCertificate::Emm { .. }));
    }

    #[test]
    fn three_period_tree_with_interior_arbitrage_step() {
        // The first step is fair; the second step dominates, so only a
        // multi-period procedure that inspects every node finds it.
        let tree = tree_from(serde_json::json!({
            "type": "tree",
            "nodes": [
                {"id": 0, "parent": null, "t": 0, "prob": "1/1", "S": ["1/1"], "B": "1/1", "children": [1, 2]},
                {"id": 1, "parent": 0, "t": 1, "prob": "1/2", "S": ["2/1"], "B": "1/1", "children": [3, 4]},
                {"id": 2, "parent": 0, "t": 1, "prob": "1/2", "S": ["1/2"], "B": "1/1", "children": [5, 6]},
                {"id": 3, "parent": 1, "t": 2, "prob": "1/2", "S": ["3/1"], "B": "1/1", "children": []},
                {"id": 4, "parent": 1, "t": 2, "prob": "1/2", "S": ["5/2"], "B": "1/1", "children": []},
                {"id": 5, "parent": 2, "t": 2, "prob": "1/2", "S": ["3/4"], "B": "1/1", "children": []},
                {"id": 6, "parent": 2, "t": 2, "prob": "1/2", "S": ["1/4"], "B": "1/1", "children": []},
            ]
        }));
        assert_eq!(
            brute_force_na(&tree).unwrap(),
            BruteForceVerdict::ArbitrageExists
        );
        let cert = decide_na(&tree);
        assert_eq!(cert.kind(), "arbitrage");
        assert!(cert.verify(&tree));
    }

    #[test]
    fn brute_force_rejects_oversized_trees() {
        // 4 periods exceeds the documented limit.
        let mut nodes = vec![serde_json::json!(
            {"id": 0, "parent": null, "t": 0, "prob": "1/1", "S": ["1/1"], "B": "1/1", "children": [1]}
        )];
        for k in 1..=4 {
            nodes.push(serde_json::json!({
                "id": k, "parent": k - 1, "t": k, "prob": "1/1", "S": ["1/1"], "B": "1/1",
                "children": if k < 4 { vec![k + 1] } else { vec![] }
            }));
        }
        let tree = tree_from(serde_json::json!({"type": "tree", "nodes": nodes}));
        assert!(matches!(brute_force_na(&tree), Err(Error::SizeLimit(_))));
    }
}
