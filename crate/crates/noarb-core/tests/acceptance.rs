//! Acceptance suite: one test per criterion, one printed PASS/FAIL line
//! each. Run with `cargo test --test acceptance -- --nocapture` to see the
//! lines; every tolerance is pinned in code.

use std::time::Instant;

use num_rational::BigRational;

use noarb_core::arbitrage::{brute_force_na, decide_na, BruteForceVerdict, LpCertificate};
use noarb_core::deflator::{
    build_deflator_paths, multiplicative_doob_decompose, solve_market_price_of_risk,
    RiskPriceOutcome,
};
use noarb_core::instances::{
    random_arbitrage_free_tree, random_predictable_savings, random_tree, random_tree_martingale,
};
use noarb_core::market::{savings_account_values, AssetSpec, ItoMarketSpec, RateCurve};
use noarb_core::portfolio::{
    build_mean_self_financing, roll_forward, AllocationRule, PathStrategy,
};
use noarb_core::pricing::{
    bond_gap_experiment, price_real_world, price_real_world_tree, price_risk_neutral,
    price_risk_neutral_tree,
};
use noarb_core::rat::{rat, rat_one};
use noarb_core::rng::{CounterRng, STREAM_INSTANCES};
use noarb_core::sde::{
    martingale_test_terminal, sample_besq4_exact, simulate_stochastic_exponential,
    stochastic_exponential_product_convergence, PathBundle, TestMode, Verdict,
};
use noarb_core::{DEFAULT_CONFIDENCE, DEFAULT_N_PATHS, DEFAULT_SEED};

fn report(name: &str, pass: bool, detail: &str) {
    println!("{name}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// The single-asset reference market: a = 0.05, sigma = 0.2, r = 0.02.
fn reference_market(cells: usize) -> ItoMarketSpec {
    let grid: Vec<f64> = (0..=cells).map(|k| k as f64 / cells as f64).collect();
    ItoMarketSpec {
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
    }
}

/// The two-asset market with a shared volatility and distinct drifts.
fn infeasible_market() -> ItoMarketSpec {
    ItoMarketSpec {
        horizon: 1.0,
        grid: vec![0.0, 1.0],
        assets: vec![
            AssetSpec {
                initial: 1.0,
                drift: vec![0.05],
                vol: vec![vec![0.2]],
            },
            AssetSpec {
                initial: 1.0,
                drift: vec![0.07],
                vol: vec![vec![0.2]],
            },
        ],
        n_drivers: 1,
        rate: None,
    }
}

#[test]
fn criterion_1_bond_gap_reproduction() {
    let start = Instant::now();
    let gap = bond_gap_experiment(1.0, 0.0, DEFAULT_N_PATHS, DEFAULT_SEED).unwrap();
    let elapsed = start.elapsed();
    let expected = 1.0 - (-0.5f64).exp(); // 0.39347
    let pass = (gap.real_world_price - expected).abs() <= 3.0 * gap.real_world_se
        && gap.risk_neutral_price == 1.0
        && gap.gap_flagged
        && elapsed.as_secs() < 60;
    report(
        "criterion 1 (bond gap)",
        pass,
        &format!(
            "real-world {:.5} +/- {:.5} vs {:.5}, risk-neutral {}, gap {:.5} flagged={}, {:?}",
            gap.real_world_price,
            gap.real_world_se,
            expected,
            gap.risk_neutral_price,
            gap.gap,
            gap.gap_flagged,
            elapsed
        ),
    );
}

#[test]
fn criterion_2_elmd_feasibility() {
    let start = Instant::now();
    let market = reference_market(1);
    let rate = market.rate.clone().unwrap();
    let theta_ok = match solve_market_price_of_risk(&market, Some(&rate)).unwrap() {
        RiskPriceOutcome::Solved(sol) => {
            (sol.theta[0][0] - 0.15).abs() <= 1e-12 && sol.max_violation(&market) <= 1e-12
        }
        RiskPriceOutcome::Infeasible(_) => false,
    };
    let cert_ok = match solve_market_price_of_risk(&infeasible_market(), None).unwrap() {
        RiskPriceOutcome::Infeasible(cert) => cert.verify(),
        RiskPriceOutcome::Solved(_) => false,
    };
    let elapsed = start.elapsed();
    let pass = theta_ok && cert_ok && elapsed.as_secs() < 1;
    report(
        "criterion 2 (ELMD feasibility)",
        pass,
        &format!("theta=0.15 to 1e-12: {theta_ok}, witness invariants: {cert_ok}, {elapsed:?}"),
    );
}

#[test]
fn criterion_3_discrete_ftap_equivalence() {
    let start = Instant::now();
    let mut disagreements = 0usize;
    let mut bad_certificates = 0usize;
    let mut emm_count = 0usize;
    for instance in 0..1000u64 {
        let mut rng = CounterRng::new(DEFAULT_SEED, STREAM_INSTANCES, instance);
        let tree = random_tree(&mut rng);
        let certificate = decide_na(&tree);
        if !certificate.verify(&tree) {
            bad_certificates += 1;
        }
        let lp_says_na = matches!(certificate, LpCertificate::Emm { .. });
        if lp_says_na {
            emm_count += 1;
        }
        let brute = brute_force_na(&tree).unwrap();
        if lp_says_na != (brute == BruteForceVerdict::NoArbitrage) {
            disagreements += 1;
        }
    }
    // Balance the evidence: arbitrage-free-by-construction instances must
    // come back as EMMs and agree with the oracle as well.
    let mut constructed_failures = 0usize;
    for instance in 0..500u64 {
        let mut rng = CounterRng::new(DEFAULT_SEED, STREAM_INSTANCES, 5_000 + instance);
        let (tree, _) = random_arbitrage_free_tree(&mut rng);
        let certificate = decide_na(&tree);
        let ok = matches!(certificate, LpCertificate::Emm { .. })
            && certificate.verify(&tree)
            && brute_force_na(&tree).unwrap() == BruteForceVerdict::NoArbitrage;
        if !ok {
            constructed_failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = disagreements == 0
        && bad_certificates == 0
        && constructed_failures == 0
        && emm_count > 0
        && emm_count < 1000
        && elapsed.as_secs() < 120;
    report(
        "criterion 3 (discrete FTAP equivalence)",
        pass,
        &format!(
            "1000 random trees ({emm_count} EMM / {} arbitrage) + 500 constructed \
             arbitrage-free trees, disagreements {disagreements}, constructed failures \
             {constructed_failures}, failed self-verifications {bad_certificates}, {elapsed:?}",
            1000 - emm_count
        ),
    );
}

#[test]
fn criterion_4_deflated_portfolio_supermartingale_suite() {
    let cells = 32;
    let market = reference_market(cells);
    let rate = market.rate.clone().unwrap();
    let solution = match solve_market_price_of_risk(&market, Some(&rate)).unwrap() {
        RiskPriceOutcome::Solved(s) => s,
        _ => panic!("reference market admits a deflator"),
    };
    let bundle = simulate_stochastic_exponential(&market, DEFAULT_N_PATHS, DEFAULT_SEED).unwrap();
    let deflator = build_deflator_paths(&solution, &rate, &bundle).unwrap();
    let savings = savings_account_values(&rate, &market.grid).unwrap();

    let mut failures = Vec::new();
    for instance in 0..20u64 {
        let mut rng = CounterRng::new(DEFAULT_SEED, STREAM_INSTANCES, 10_000 + instance);
        // Random predictable constant-proportion strategies: weight per cell
        // in [0, 1] keeps wealth strictly positive.
        let weights: Vec<Vec<f64>> = (0..cells)
            .map(|_| vec![(rng.next_value() % 1001) as f64 / 1000.0])
            .collect();
        let strategy = PathStrategy {
            initial_value: 1.0,
            rule: AllocationRule::ConstantProportion(weights),
        };
        let portfolio = roll_forward(&strategy, &bundle, &savings).unwrap();
        if !portfolio.negative_value_paths().is_empty() {
            failures.push(format!("instance {instance}: negative wealth"));
            continue;
        }
        let deflated = portfolio.to_bundle("VZ", Some(&deflator));
        let report_vz = noarb_core::sde::martingale_test(
            &deflated,
            "VZ",
            1.0,
            TestMode::Supermartingale,
            DEFAULT_CONFIDENCE,
        )
        .unwrap();
        if report_vz.verdict == Verdict::Rejected {
            failures.push(format!("instance {instance}: rejected"));
        }
    }

    // The strict-local-martingale deflator run: the reciprocal squared
    // Bessel(4) process loses mass and must be flagged strict.
    let besq = sample_besq4_exact(1.0, 1.0, DEFAULT_N_PATHS, DEFAULT_SEED).unwrap();
    let inverse: Vec<f64> = besq.iter().map(|x| 1.0 / x).collect();
    let strict = martingale_test_terminal(
        "D",
        1.0,
        &inverse,
        1.0,
        TestMode::Supermartingale,
        DEFAULT_CONFIDENCE,
    );
    let strict_ok = strict.verdict == Verdict::ConsistentSupermartingaleStrict;

    let pass = failures.is_empty() && strict_ok;
    report(
        "criterion 4 (deflated portfolios)",
        pass,
        &format!(
            "20 strategies at c=3, n={DEFAULT_N_PATHS}: failures {failures:?}; \
             strict-local-martingale run: {:?}",
            strict.verdict
        ),
    );
}

#[test]
fn criterion_5_multiplicative_decomposition_round_trip() {
    let mut failures = 0usize;
    for instance in 0..200u64 {
        let mut rng = CounterRng::new(DEFAULT_SEED, STREAM_INSTANCES, 20_000 + instance);
        let tree = random_tree(&mut rng);
        let martingale = random_tree_martingale(&mut rng, &tree, rat(3, 2));
        let savings = random_predictable_savings(&mut rng, &tree);
        let z: Vec<BigRational> = (0..tree.nodes.len())
            .map(|n| &martingale[n] / &savings[n])
            .collect();
        let decomposition = multiplicative_doob_decompose(&tree, &z).unwrap();
        let c_expected: Vec<BigRational> = savings.iter().map(|b| rat_one() / b).collect();
        if decomposition.d != martingale
            || decomposition.c != c_expected
            || !decomposition.verify(&tree)
        {
            failures += 1;
        }
    }
    report(
        "criterion 5 (decomposition round trip)",
        failures == 0,
        &format!("200 random trees, {failures} mismatches"),
    );
}

#[test]
fn criterion_6_pricing_coupling_identity() {
    // Exact tree mode: real-world and risk-neutral prices coincide exactly.
    let mut tree_failures = 0usize;
    for instance in 0..50u64 {
        let mut rng = CounterRng::new(DEFAULT_SEED, STREAM_INSTANCES, 30_000 + instance);
        let (tree, weights) = random_arbitrage_free_tree(&mut rng);
        let n = tree.nodes.len();
        let density: Vec<BigRational> = (0..n)
            .map(|i| &weights[i] / tree.path_probability(i))
            .collect();
        let z: Vec<BigRational> = (0..n)
            .map(|i| &density[i] / &tree.node(i).savings)
            .collect();
        let mut claim = vec![rat_one(); n];
        for leaf in tree.leaves() {
            claim[leaf] = rat((rng.next_value() % 17) as i64, 4);
        }
        let rw = price_real_world_tree(&tree, &z, &claim).unwrap();
        let rn = price_risk_neutral_tree(&tree, &weights, &claim).unwrap();
        if rw != rn {
            tree_failures += 1;
        }
    }

    // Path mode with a shared seed: difference at most 1e-12 relative.
    let market = reference_market(16);
    let rate = market.rate.clone().unwrap();
    let solution = match solve_market_price_of_risk(&market, Some(&rate)).unwrap() {
        RiskPriceOutcome::Solved(s) => s,
        _ => panic!(),
    };
    let bundle = simulate_stochastic_exponential(&market, 50_000, DEFAULT_SEED).unwrap();
    let deflator = build_deflator_paths(&solution, &rate, &bundle).unwrap();
    let savings = savings_account_values(&rate, &market.grid).unwrap();
    let s_terminal = bundle.process("S1").unwrap().terminal();
    let z_terminal = deflator.z_terminal();
    let d_terminal = deflator.d_terminal();
    let b_terminal = *savings.values.last().unwrap();
    let mut path_failures = 0usize;
    let mut rng = CounterRng::new(DEFAULT_SEED, STREAM_INSTANCES, 31_000);
    for instance in 0..50usize {
        let strike = 0.5 + (rng.next_value() % 1001) as f64 / 1000.0;
        let claim: Vec<f64> = s_terminal.iter().map(|s| (s - strike).max(0.0)).collect();
        let label = format!("call{instance}");
        let rw =
            price_real_world(&label, &claim, deflator.z0(), &z_terminal, DEFAULT_SEED).unwrap();
        let rn =
            price_risk_neutral(&label, &claim, 1.0, &d_terminal, b_terminal, DEFAULT_SEED).unwrap();
        let rel = (rw.price - rn.price).abs() / rw.price.abs().max(f64::MIN_POSITIVE);
        if rel > 1e-12 {
            path_failures += 1;
        }
    }
    report(
        "criterion 6 (pricing coupling)",
        tree_failures == 0 && path_failures == 0,
        &format!(
            "50 exact tree claims ({tree_failures} mismatches), 50 path claims \
             ({path_failures} above 1e-12 relative)"
        ),
    );
}

#[test]
fn criterion_7_mean_self_financing_construction() {
    let cells = 32;
    let market = reference_market(cells);
    let rate = market.rate.clone().unwrap();
    let solution = match solve_market_price_of_risk(&market, Some(&rate)).unwrap() {
        RiskPriceOutcome::Solved(s) => s,
        _ => panic!(),
    };
    let bundle = simulate_stochastic_exponential(&market, DEFAULT_N_PATHS, DEFAULT_SEED).unwrap();
    let deflator = build_deflator_paths(&solution, &rate, &bundle).unwrap();
    let savings = savings_account_values(&rate, &market.grid).unwrap();
    let base = PathStrategy {
        initial_value: 1.0,
        rule: AllocationRule::FixedUnits(vec![vec![1.0]]),
    };
    let run = build_mean_self_financing(
        &base,
        &[0.02],
        &bundle,
        &savings,
        &deflator,
        DEFAULT_CONFIDENCE,
    )
    .unwrap();
    let pnl_ok = run.pnl_report.verdict != Verdict::Rejected;
    let deflated_ok = run.deflated_report.verdict != Verdict::Rejected;
    let cov_ok = run.covariation_mean.abs() <= 3.0 * run.covariation_se.max(f64::MIN_POSITIVE);
    report(
        "criterion 7 (mean self-financing)",
        pnl_ok && deflated_ok && cov_ok,
        &format!(
            "P&L verdict {:?}, deflated verdict {:?}, covariation {:.2e} +/- {:.2e}",
            run.pnl_report.verdict,
            run.deflated_report.verdict,
            run.covariation_mean,
            run.covariation_se
        ),
    );
}

#[test]
fn criterion_8_product_identity_convergence() {
    let convergence = stochastic_exponential_product_convergence(
        0.05,
        0.3,
        0.02,
        0.2,
        1.0,
        64,
        1_000,
        DEFAULT_SEED,
    );
    let pass = convergence.ratio >= 0.4 && convergence.ratio <= 0.6;
    report(
        "criterion 8 (product-identity convergence)",
        pass,
        &format!(
            "mean sup-gap {:.3e} -> {:.3e}, ratio {:.4} (raw max ratio {:.4})",
            convergence.coarse.mean_max_relative_gap,
            convergence.fine.mean_max_relative_gap,
            convergence.ratio,
            convergence.max_ratio
        ),
    );
}

/// Paths with the same seed are identical whether the bundle is produced in
/// one batch or reassembled from single-path runs; the suite relies on that.
#[test]
fn determinism_is_worker_count_independent() {
    let market = reference_market(8);
    let full = simulate_stochastic_exponential(&market, 64, DEFAULT_SEED).unwrap();
    let view = full.process("S1").unwrap();
    let mut reassembled = PathBundle::new(DEFAULT_SEED, market.grid.clone(), 0);
    let _ = &mut reassembled;
    for chunk in [0..16usize, 16..64usize] {
        let part = simulate_stochastic_exponential(&market, chunk.end, DEFAULT_SEED).unwrap();
        let pview = part.process("S1").unwrap();
        for p in chunk {
            for k in 0..market.grid.len() {
                assert_eq!(view.at(p, k).to_bits(), pview.at(p, k).to_bits());
            }
        }
    }
}
