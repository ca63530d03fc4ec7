use eovsim_core::config::ExperimentConfig;
use eovsim_core::gateway::{gateway_vscc, EndorsementPolicy};
use eovsim_core::harness::{run_all, RunOptions};
use eovsim_core::identity::{IdentityRegistry, Principal};
use eovsim_core::ledger::{ClientId, EndorsementTag, Key, PeerId, Transaction, TxId, Version};
use eovsim_core::sim::SimConfig;
use eovsim_core::Mode;

#[test]
fn defaults_match_reference_topology() {
    let c = ExperimentConfig::default();
    assert_eq!((c.clients, c.orderers, c.peers, c.gateways), (10, 3, 4, 1));
    assert_eq!(c.block_size, 10);
    assert_eq!(c.block_interval_ms, 2000.0);
    assert_eq!(c.conflict_rates, vec![0.2, 0.5, 0.8]);
    assert_eq!(c.endorsements_required, 1);
    assert_eq!(c.modes, Mode::ALL.to_vec());
    assert_eq!(c.runs().len(), 45);
    assert!(c.validate().is_ok());
}

#[test]
fn one_endorsement_satisfies_default_policy() {
    let sim = SimConfig::default();
    let reg = IdentityRegistry::new(5);
    let policy = EndorsementPolicy::at_least(sim.endorsements_required, (0..sim.peers).map(PeerId).collect());
    let mut tx = Transaction::genesis(std::iter::once((Key::from("a"), b"x".to_vec())).collect());
    tx.tx_id = TxId(1);
    tx.client = ClientId(0);
    tx.rset = std::iter::once((Key::from("a"), Version(1))).collect();
    let payload = tx.endorsement_payload();
    tx.endorsements = vec![EndorsementTag { peer: PeerId(2), tag: reg.identity(Principal::Peer(2)).sign(&payload) }];
    tx.client_sig = Some(reg.identity(Principal::Client(0)).sign(&tx.envelope_payload()));
    assert!(gateway_vscc(&tx, &policy, &reg));
    tx.endorsements.clear();
    tx.client_sig = Some(reg.identity(Principal::Client(0)).sign(&tx.envelope_payload()));
    assert!(!gateway_vscc(&tx, &policy, &reg));
}

fn small_sweep() -> Vec<SimConfig> {
    let mut c = ExperimentConfig::from_text("tx_per_client = 30\nseeds = 3, 4").unwrap();
    c.crash_at_ms = Some(700.0);
    c.runs()
}

#[test]
fn runs_are_independent_of_sweep_order() {
    let opts = RunOptions::default();
    let forward = run_all(small_sweep(), &opts);
    let mut reversed_cfgs = small_sweep();
    reversed_cfgs.reverse();
    let mut backward = run_all(reversed_cfgs, &opts);
    backward.reverse();
    assert_eq!(forward.len(), 18);
    for (a, b) in forward.iter().zip(&backward) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.label(), b.label());
        assert_eq!(
            a.result.reference_peer().ledger.world_state().digest(),
            b.result.reference_peer().ledger.world_state().digest()
        );
        assert_eq!(a.result.trace, b.result.trace);
        assert_eq!(a.summary.as_ref().unwrap(), b.summary.as_ref().unwrap());
    }
}
