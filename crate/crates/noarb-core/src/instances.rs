//! Deterministic generation of random test instances: small scenario trees,
//! tree martingales, predictable savings accounts and strategies.
//!
//! Everything draws from counter streams, so a suite of N instances is fully
//! determined by one seed and instances can be regenerated individually.

use num_rational::BigRational;
use num_traits::Zero;

use crate::market::{ScenarioTree, TreeNode};
use crate::portfolio::TreeStrategy;
use crate::rat::{rat, rat_one};
use crate::rng::CounterRng;

fn pick(rng: &mut CounterRng, lo: u64, hi: u64) -> u64 {
    lo + rng.next_value() % (hi - lo + 1)
}

/// Random price in [1/4, 4] with denominator 4.
fn random_price(rng: &mut CounterRng) -> BigRational {
    rat(pick(rng, 1, 16) as i64, 4)
}

/// Random strictly positive probabilities over `n` branches, summing to one.
fn random_probabilities(rng: &mut CounterRng, n: usize) -> Vec<BigRational> {
    let weights: Vec<i64> = (0..n).map(|_| pick(rng, 1, 6) as i64).collect();
    let total: i64 = weights.iter().sum();
    weights.iter().map(|&w| rat(w, total)).collect()
}

struct ShapeParams {
    periods: usize,
    n_assets: usize,
}

fn random_shape(rng: &mut CounterRng) -> ShapeParams {
    ShapeParams {
        periods: pick(rng, 1, 3) as usize,
        n_assets: pick(rng, 1, 2) as usize,
    }
}

/// Grows the node skeleton (parents, times, probabilities, predictable
/// savings); prices are filled in by the caller.
fn grow_skeleton(rng: &mut CounterRng, periods: usize) -> Vec<TreeNode> {
    let mut nodes = vec![TreeNode {
        id: 0,
        parent: None,
        time: 0,
        prob: rat_one(),
        prices: Vec::new(),
        savings: rat_one(),
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for t in 1..=periods {
        let mut next_frontier = Vec::new();
        for &parent in &frontier {
            let n_children = pick(rng, 2, 3) as usize;
            let probs = random_probabilities(rng, n_children);
            // Predictable savings: the children's value is fixed at the
            // parent, in [1/2, 2] times the parent's value.
            let factor = rat(pick(rng, 4, 16) as i64, 8);
            let child_savings = &nodes[parent].savings * &factor;
            for prob in probs {
                let idx = nodes.len();
                nodes.push(TreeNode {
                    id: idx as u64,
                    parent: Some(parent),
                    time: t,
                    prob,
                    prices: Vec::new(),
                    savings: child_savings.clone(),
                    children: Vec::new(),
                });
                nodes[parent].children.push(idx);
                next_frontier.push(idx);
            }
        }
        frontier = next_frontier;
    }
    nodes
}

/// Random small tree: 1-3 periods, 2-3 children per node, 1-2 assets,
/// prices drawn independently in [1/4, 4]. May or may not admit arbitrage.
pub fn random_tree(rng: &mut CounterRng) -> ScenarioTree {
    let shape = random_shape(rng);
    let mut nodes = grow_skeleton(rng, shape.periods);
    for node in nodes.iter_mut() {
        node.prices = (0..shape.n_assets).map(|_| random_price(rng)).collect();
    }
    ScenarioTree::new(nodes).expect("generated tree is structurally valid")
}

/// Random arbitrage-free tree together with the EMM node weights that
/// certify it: discounted prices are built backward as conditional
/// expectations under a random strictly positive measure.
pub fn random_arbitrage_free_tree(rng: &mut CounterRng) -> (ScenarioTree, Vec<BigRational>) {
    let shape = random_shape(rng);
    let mut nodes = grow_skeleton(rng, shape.periods);
    let n = nodes.len();
    // Strictly positive conditional Q per node, then node weights.
    let mut q_cond = vec![BigRational::zero(); n];
    q_cond[0] = rat_one();
    for parent in 0..n {
        let children = nodes[parent].children.clone();
        if children.is_empty() {
            continue;
        }
        for (q, &c) in random_probabilities(rng, children.len())
            .into_iter()
            .zip(&children)
        {
            q_cond[c] = q;
        }
    }
    let mut weights = vec![rat_one(); n];
    for idx in 1..n {
        let parent = nodes[idx].parent.unwrap();
        weights[idx] = &weights[parent] * &q_cond[idx];
    }
    // Discounted prices: random at the leaves, conditional Q-expectations
    // inward, then undiscounted by the savings account.
    let mut discounted = vec![vec![BigRational::zero(); shape.n_assets]; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(nodes[i].time));
    for &idx in &order {
        if nodes[idx].children.is_empty() {
            discounted[idx] = (0..shape.n_assets).map(|_| random_price(rng)).collect();
        } else {
            for asset in 0..shape.n_assets {
                let mut acc = BigRational::zero();
                for &c in &nodes[idx].children {
                    acc += &q_cond[c] * &discounted[c][asset];
                }
                discounted[idx][asset] = acc;
            }
        }
    }
    for idx in 0..n {
        nodes[idx].prices = discounted[idx]
            .iter()
            .map(|x| x * &nodes[idx].savings)
            .collect();
    }
    let tree = ScenarioTree::new(nodes).expect("generated tree is structurally valid");
    (tree, weights)
}

/// Random strictly positive tree martingale started at `start`: children
/// values are random positive numbers rescaled so each one-step conditional
/// expectation is exact.
pub fn random_tree_martingale(
    rng: &mut CounterRng,
    tree: &ScenarioTree,
    start: BigRational,
) -> Vec<BigRational> {
    let n = tree.nodes.len();
    let mut values = vec![BigRational::zero(); n];
    values[tree.root()] = start;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| tree.node(i).time);
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let children = &tree.node(node).children;
        let raw: Vec<BigRational> = children.iter().map(|_| random_price(rng)).collect();
        let mut expectation = BigRational::zero();
        for (&c, y) in children.iter().zip(&raw) {
            expectation += &tree.node(c).prob * y;
        }
        for (&c, y) in children.iter().zip(&raw) {
            values[c] = y * &values[node] / &expectation;
        }
    }
    values
}

/// Random predictable, strictly positive savings account with `B_0 = 1`:
/// the children of each node share a value in [1/2, 2] times the parent's.
pub fn random_predictable_savings(rng: &mut CounterRng, tree: &ScenarioTree) -> Vec<BigRational> {
    let n = tree.nodes.len();
    let mut savings = vec![rat_one(); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| tree.node(i).time);
    for &node in &order {
        if tree.is_leaf(node) {
            continue;
        }
        let factor = rat(pick(rng, 4, 16) as i64, 8);
        let value = &savings[node] * &factor;
        for &c in &tree.node(node).children {
            savings[c] = value.clone();
        }
    }
    savings
}

/// Random predictable strategy with holdings bounded by `max_units`
/// (numerators up to `4 max_units`, denominator 4, either sign).
pub fn random_tree_strategy(
    rng: &mut CounterRng,
    tree: &ScenarioTree,
    initial: BigRational,
    max_units: i64,
) -> TreeStrategy {
    let d = tree.n_assets();
    let delta = (0..tree.nodes.len())
        .map(|idx| {
            if tree.is_leaf(idx) {
                None
            } else {
                Some(
                    (0..d)
                        .map(|_| {
                            let mag = pick(rng, 0, (4 * max_units) as u64) as i64;
                            let sign = if pick(rng, 0, 1) == 0 { 1 } else { -1 };
                            rat(sign * mag, 4)
                        })
                        .collect(),
                )
            }
        })
        .collect();
    TreeStrategy {
        initial_value: initial,
        delta,
    }
}
