use trome_core::airtime_energy::EnergyModel;
use trome_core::markov_analyzer::*;
use trome_core::protocol_engine::{Protocol, ProtocolParams};
use trome_lab::oracle::expected_cost;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

const GRID: [f64; 4] = [1.0, 0.97, 0.75, 0.5];

#[test]
fn solver_matches_fundamental_matrix() {
    for protocol in Protocol::ALL {
        let params = ProtocolParams::new(protocol);
        for costs in [CostConstants::time(&params, 100), CostConstants::energy(&params, &EnergyModel::default(), 100)] {
            for m in 2..=6 {
                for p in GRID {
                    for q in GRID {
                        let chain = ChainParams::new(protocol, m, p, q);
                        let got = solve(&build(protocol, &chain, &costs).unwrap(), MetaState::start()).unwrap();
                        let want = expected_cost(protocol, &chain, &costs).unwrap();
                        assert!(rel(got, want) < 1e-6, "{protocol:?} m={m} p={p} q={q}: {got} vs {want}");
                    }
                }
            }
        }
    }
}

#[test]
fn other_ttl_and_exponents() {
    let costs = CostConstants::time(&ProtocolParams::new(Protocol::Trome), 50);
    for ttl in 1..=5u8 {
        for wake_exponent in [1, 3, 5] {
            let chain = ChainParams { ttl, wake_exponent, ..ChainParams::new(Protocol::Trome, 7, 0.8, 0.9) };
            let got = solve(&build_trome(&chain, &costs).unwrap(), MetaState::start()).unwrap();
            let want = expected_cost(Protocol::Trome, &chain, &costs).unwrap();
            assert!(rel(got, want) < 1e-6, "ttl={ttl} exp={wake_exponent}");
        }
    }
}

#[test]
fn oracle_rejects_dead_links() {
    let costs = CostConstants::time(&ProtocolParams::new(Protocol::Naive), 100);
    assert!(expected_cost(Protocol::Naive, &ChainParams::new(Protocol::Naive, 3, 0.0, 1.0), &costs).is_err());
}
