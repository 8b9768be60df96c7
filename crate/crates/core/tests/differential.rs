use exmm::harness::{run_mixed, MixedConfig, OpKind};
use exmm::multiqueue::Variant;

fn mixed(variant: Variant, beta: f64, gamma: f64, seed: u64, ops: u64) -> MixedConfig {
    MixedConfig {
        variant,
        beta,
        gamma,
        seed,
        ops,
        ..MixedConfig::default()
    }
}

fn check(cfg: MixedConfig) {
    let label = format!("{:?} beta={} gamma={} seed={}", cfg.variant, cfg.beta, cfg.gamma, cfg.seed);
    let report = run_mixed(&cfg).unwrap_or_else(|e| panic!("{label}: {e}"));
    assert_eq!(report.audits, cfg.ops, "{label}");
    assert!(report.kind(OpKind::Insert).n > 0);
}

#[test]
fn deamortized_matches_oracle() {
    for seed in 1..=3 {
        check(mixed(Variant::Deamortized, 3.0, 4.0, seed, 20_000));
    }
}

#[test]
fn basic_matches_oracle() {
    for seed in 1..=3 {
        check(mixed(Variant::Basic, 3.0, 4.0, seed, 20_000));
    }
}

#[test]
fn other_thresholds_match_oracle() {
    for (beta, gamma) in [(2.0, 5.0), (3.0, 5.0), (2.0, 3.0), (4.0, 8.0)] {
        check(mixed(Variant::Basic, beta, gamma, 7, 10_000));
        check(mixed(Variant::Deamortized, beta, gamma, 7, 10_000));
    }
}

#[test]
fn larger_blocks_match_oracle() {
    let mut cfg = mixed(Variant::Deamortized, 3.0, 5.0, 5, 20_000);
    cfg.block_bytes = 1440;
    cfg.cache_bytes = 8 * 1440;
    cfg.target_pairs = 4000;
    check(cfg.clone());
    cfg.variant = Variant::Basic;
    check(cfg);
}
