mod common;

use common::*;
use num_complex::Complex64;
use qamc::gibbs::ground_states;
use qamc::qa::{self, AnnealSpec, QuantumState};
use qamc::SkInstance;

/// TV between Strang and the dense propagator for a frozen schedule.
fn frozen_error(es: &[f64], n: usize, s: f64, total: f64, steps: usize) -> f64 {
    let mut state = QuantumState::uniform(n);
    qa::evolve_frozen(&mut state, es, s, total, steps).unwrap();
    let psi0 = vec![Complex64::new(((1 << n) as f64).sqrt().recip(), 0.0); 1 << n];
    let want = expm_apply(&dense_hamiltonian(es, n, s), total, &psi0);
    tv(&born(&want), &born(state.amplitudes()))
}

#[test]
fn frozen_schedule_is_second_order() {
    for n in 2..=4 {
        let inst = SkInstance::generate(n, 40 + n as u64).unwrap();
        let es = inst.all_energies();
        for s in [0.25, 0.5, 0.75] {
            let steps = AnnealSpec::new(1.0).unwrap().step_count(qa::hamiltonian_scale(&es, n));
            let e1 = frozen_error(&es, n, s, 1.0, steps);
            let e2 = frozen_error(&es, n, s, 1.0, 2 * steps);
            assert!(e1 < 1e-6, "n={n} s={s}: {e1:e}");
            assert!(e1 / e2 >= 3.5, "n={n} s={s}: ratio {}", e1 / e2);
        }
    }
}

#[test]
fn single_spin_anneal_matches_propagator_oracle() {
    // E(σ) = hσ with h = 1, no couplings.
    let inst = SkInstance::from_parts(1, vec![], vec![1.0], 0).unwrap();
    let es = inst.all_energies();
    let want = born(&anneal_oracle(&es, 1, 1.0, 1e-4));
    for (a, b) in qa::qa_proposal(&inst, 1.0).unwrap().probs().iter().zip(&want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    for spec in [
        AnnealSpec::new(1.0).unwrap(),
        AnnealSpec::new(1.0).unwrap().with_dt_max(1e-4).unwrap(),
    ] {
        let (state, _) = qa::evolve_energies(&es, 1, &spec).unwrap();
        for (a, b) in born(state.amplitudes()).iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn slow_anneal_reaches_the_ground_state() {
    // First instance whose annealing path keeps a clear gap above the ground state.
    let inst = (0..)
        .map(|seed| SkInstance::generate(4, seed).unwrap())
        .find(|i| min_anneal_gap(&i.all_energies(), 4, 200) > 0.5)
        .unwrap();
    let es = inst.all_energies();
    let gs = ground_states(&es);
    assert_eq!(gs.len(), 1);
    assert_eq!(gs[0].index(), dense_ground_state(&es));
    let mut last = 0.0;
    for tau in [100.0, 1000.0] {
        let p = qa::qa_proposal(&inst, tau).unwrap().probs()[gs[0].index()];
        assert!(p >= last, "tau={tau}: {p} < {last}");
        last = p;
    }
    assert!(last >= 0.99, "{last}");
}

#[test]
fn halving_dt_changes_little() {
    for (n, seed, tau) in [(4, 1, 10.0), (6, 2, 30.0), (8, 3, 5.0)] {
        let inst = SkInstance::generate(n, seed).unwrap();
        let es = inst.all_energies();
        let base = AnnealSpec::new(tau).unwrap();
        let steps = base.step_count(qa::hamiltonian_scale(&es, n));
        let dt = tau / steps as f64;
        let (a, _) = qa::evolve_energies(&es, n, &base.with_dt_max(dt).unwrap()).unwrap();
        let (b, _) = qa::evolve_energies(&es, n, &base.with_dt_max(dt / 2.0).unwrap()).unwrap();
        let d = tv(&born(a.amplitudes()), &born(b.amplitudes()));
        assert!(d < 1e-6, "n={n}: {d:e}");
    }
}

#[test]
fn evolution_is_unitary_without_renormalization() {
    for (n, tau) in [(3, 1.0), (6, 50.0), (10, 20.0)] {
        let inst = SkInstance::generate(n, 17).unwrap();
        let (state, stats) = qa::evolve_with_stats(&inst, &AnnealSpec::new(tau).unwrap()).unwrap();
        assert!(stats.max_norm_drift < 1e-9, "{}", stats.max_norm_drift);
        assert_eq!(stats.renormalizations, 0);
        assert!((state.norm_sqr() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn fast_anneal_stays_uniform() {
    for seed in 0..3 {
        let inst = SkInstance::generate(10, seed).unwrap();
        let q = qa::qa_proposal(&inst, 0.01).unwrap();
        let u = vec![1.0 / 1024.0; 1024];
        assert!(tv(q.probs(), &u) < 1e-3);
    }
}

#[test]
fn zero_time_returns_the_superposition() {
    let inst = SkInstance::generate(5, 0).unwrap();
    let q = qa::qa_proposal(&inst, 0.0).unwrap();
    assert!(q.probs().iter().all(|&p| (p - 1.0 / 32.0).abs() < 1e-15));
    assert!(!q.floor_applied());
}
