use proptest::prelude::*;
use trome_core::markov_analyzer::*;
use trome_core::protocol_engine::{Protocol, ProtocolParams};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn lossless_limit_is_the_success_path() {
    for protocol in Protocol::ALL {
        let costs = CostConstants::time(&ProtocolParams::new(protocol), 100);
        for m in 2..=6 {
            let chain = ChainParams::new(protocol, m, 1.0, 1.0);
            let sys = build(protocol, &chain, &costs).unwrap();
            let path: f64 = {
                // Follow success edges only.
                let mut s = MetaState::start();
                let mut total = 0.0;
                while s != MetaState::Delivered {
                    let i = sys.index_of(s).unwrap();
                    total += sys.transitions[i].cost.success;
                    s = sys.transitions[i].next[0];
                }
                total
            };
            let near = solve(&build(protocol, &ChainParams::new(protocol, m, 1.0 - 1e-9, 1.0 - 1e-9), &costs).unwrap(), MetaState::start()).unwrap();
            assert!(rel(solve(&sys, MetaState::start()).unwrap(), path) < 1e-12);
            assert!(rel(near, path) < 1e-6);
        }
    }
}

#[test]
fn multi_packet_single_equals_solve() {
    for protocol in Protocol::ALL {
        let costs = CostConstants::time(&ProtocolParams::new(protocol), 100);
        let chain = ChainParams::new(protocol, 4, 0.75, 0.97);
        let one = multi_packet_cost(protocol, &chain, &costs, 1).unwrap();
        assert!(rel(one, solve(&build(protocol, &chain, &costs).unwrap(), MetaState::start()).unwrap()) < 1e-12);
        if protocol != Protocol::Trome {
            assert!(rel(multi_packet_cost(protocol, &chain, &costs, 5).unwrap(), 5.0 * one) < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lower_loss_never_costs_more(
        m in 2usize..=6,
        a in 0.05f64..=1.0,
        b in 0.05f64..=1.0,
        q in 0.05f64..=1.0,
        which in 0usize..3,
    ) {
        let protocol = Protocol::ALL[which];
        let costs = CostConstants::time(&ProtocolParams::new(protocol), 100);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let e = |p: f64, q: f64| solve(&build(protocol, &ChainParams::new(protocol, m, p, q), &costs).unwrap(), MetaState::start()).unwrap();
        prop_assert!(e(lo, q) >= e(hi, q) * (1.0 - 1e-9));
        prop_assert!(e(q, lo) >= e(q, hi) * (1.0 - 1e-9));
    }
}
