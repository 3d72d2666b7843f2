mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use qamc::spectral::{self, build_transition_matrix};
use qamc::{qa, sk, Kernel, KernelKind, ProposalDistribution, SkInstance, SpinConfig, TargetDistribution};

fn kernels(inst: &SkInstance, tau: f64) -> Vec<Kernel> {
    let n = inst.n();
    vec![
        Kernel::local(n),
        Kernel::uniform(n),
        Kernel::qa(qa::qa_proposal(inst, tau).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_round_trips(n in 1usize..=8, seed in any::<u64>()) {
        let inst = if n >= sk::MIN_SPINS {
            SkInstance::generate(n, seed).unwrap()
        } else {
            SkInstance::from_parts(1, vec![], vec![(seed % 1000) as f64 / 7.0 - 50.0], seed).unwrap()
        };
        let back = SkInstance::from_text(&inst.to_text()).unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(back.all_energies(), inst.all_energies());
    }

    #[test]
    fn generation_is_a_pure_function(n in 2usize..=10, seed in any::<u64>()) {
        prop_assert_eq!(SkInstance::generate(n, seed).unwrap(), SkInstance::generate(n, seed).unwrap());
    }

    #[test]
    fn zero_field_energies_are_flip_symmetric(n in 2usize..=8, seed in any::<u64>()) {
        let inst = SkInstance::generate(n, seed).unwrap();
        let zero = SkInstance::from_parts(n, inst.couplings().to_vec(), vec![0.0; n], seed).unwrap();
        let es = zero.all_energies();
        let mask = (1usize << n) - 1;
        for k in 0..es.len() {
            prop_assert!((es[k] - es[k ^ mask]).abs() < 1e-12);
        }
        // With fields: E(σ) = E(-σ) + 2 Σ h_i σ_i.
        let full = inst.all_energies();
        for k in 0..full.len() {
            let field: f64 = SpinConfig::new(k)
                .spins(n)
                .iter()
                .zip(inst.fields())
                .map(|(&s, &h)| s as f64 * h)
                .sum();
            prop_assert!((full[k] - full[k ^ mask] - 2.0 * field).abs() < 1e-10);
        }
    }

    #[test]
    fn transition_matrices_are_stochastic_and_reversible(
        n in 2usize..=6,
        seed in any::<u64>(),
        t in prop::sample::select(vec![0.1, 0.3, 1.0, 10.0]),
        tau in 0.01f64..20.0,
    ) {
        let inst = SkInstance::generate(n, seed).unwrap();
        let target = TargetDistribution::new(&inst, t).unwrap();
        for k in kernels(&inst, tau) {
            let tm = build_transition_matrix(&target, &k).unwrap();
            prop_assert!(tm.entries().iter().all(|&p| p >= 0.0));
            prop_assert!(tm.row_sum_residual() < 1e-12);
            prop_assert!(tm.detailed_balance_residual(&target) < 1e-12);
            prop_assert!(tm.stationarity_residual(&target) < 1e-10);
        }
    }

    #[test]
    fn symmetrized_spectrum_is_bounded_with_sqrt_mu_on_top(
        n in 2usize..=5,
        seed in any::<u64>(),
        t in prop::sample::select(vec![0.3, 1.0, 10.0]),
    ) {
        let inst = SkInstance::generate(n, seed).unwrap();
        let target = TargetDistribution::new(&inst, t).unwrap();
        for k in kernels(&inst, 1.0) {
            let tm = build_transition_matrix(&target, &k).unwrap();
            let rep = spectral::spectral_gap(&tm, &target).unwrap();
            prop_assert!(rep.spectrum.iter().all(|l| l.abs() <= 1.0 + 1e-10));
            prop_assert!((rep.unit_eigenvalue - 1.0).abs() < 1e-10);
            prop_assert!(rep.stationary_overlap > 1.0 - 1e-8);
            prop_assert!(rep.gap >= 0.0 && rep.gap <= 1.0);
        }
    }

    #[test]
    fn closed_form_gap_matches_dense_for_random_proposals(
        n in 2usize..=5,
        seed in any::<u64>(),
        weights in prop::collection::vec(0.01f64..1.0, 32),
    ) {
        let inst = SkInstance::generate(n, seed).unwrap();
        let target = TargetDistribution::new(&inst, 1.0).unwrap();
        let dim = 1 << n;
        let total: f64 = weights[..dim].iter().sum();
        let q = ProposalDistribution::from_probs(weights[..dim].iter().map(|w| w / total).collect()).unwrap();
        let closed = spectral::proposal_gap(&target, &q);
        let k = Kernel::qa(q);
        let dense = spectral::spectral_gap(&build_transition_matrix(&target, &k).unwrap(), &target).unwrap();
        prop_assert!((closed - dense.gap).abs() < 1e-9, "{} vs {}", closed, dense.gap);
    }

    #[test]
    fn proposal_sampling_respects_support(seed in any::<u64>(), hot in 0usize..16) {
        let mut probs = vec![0.0; 16];
        probs[hot] = 1.0;
        let q = ProposalDistribution::from_probs(probs).unwrap();
        let mut r = qamc::rng::stream(seed, qamc::rng::purpose::TEST);
        for _ in 0..64 {
            prop_assert_eq!(q.sample(&mut r).index(), hot);
        }
    }
}

#[test]
fn qa_gap_matches_power_iteration_oracle() {
    for seed in 0..4 {
        let inst = SkInstance::generate(4, seed).unwrap();
        let target = TargetDistribution::new(&inst, 1.0).unwrap();
        let k = Kernel::qa(qa::qa_proposal(&inst, 2.0).unwrap());
        let tm = build_transition_matrix(&target, &k).unwrap();
        let gap = spectral::spectral_gap(&tm, &target).unwrap().gap;
        let want = common::power_iteration_gap(tm.entries(), target.probs(), 4000);
        assert!((gap - want).abs() < 1e-8, "seed {seed}: {gap} vs {want}");
    }
}

#[test]
fn local_gap_matches_an_independent_dense_eigensolve() {
    // Eigenvalues of D^{1/2} P D^{-1/2} assembled here from Q and A directly.
    let inst = SkInstance::generate(5, 9).unwrap();
    let target = TargetDistribution::new(&inst, 0.5).unwrap();
    let mu = target.probs();
    let dim = 32;
    let mut p = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for b in 0..5 {
            let j = i ^ (1 << b);
            p[(i, j)] = 0.2 * (mu[j] / mu[i]).min(1.0);
        }
        p[(i, i)] = 1.0 - (0..dim).filter(|&j| j != i).map(|j| p[(i, j)]).sum::<f64>();
    }
    let s = DMatrix::from_fn(dim, dim, |i, j| p[(i, j)] * (mu[i] / mu[j]).sqrt());
    let s = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().map(|l| l.abs()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let want = 1.0 - ev[1];
    let got = spectral::kernel_gap(&target, &Kernel::local(5), spectral::GapMethod::Dense).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    let lanczos = spectral::local_gap_lanczos(&target).unwrap();
    assert!((lanczos - want).abs() < 1e-8, "{lanczos} vs {want}");
}

#[test]
fn mixing_bounds_bracket_matrix_powering() {
    for seed in 0..3 {
        let inst = SkInstance::generate(4, seed).unwrap();
        for t in [0.5, 1.0, 5.0] {
            let target = TargetDistribution::new(&inst, t).unwrap();
            for k in kernels(&inst, 1.0) {
                let tm = build_transition_matrix(&target, &k).unwrap();
                let gap = spectral::spectral_gap(&tm, &target).unwrap().gap;
                let b = spectral::mixing_bounds(gap, 0.01, target.min_probability()).unwrap();
                let steps = spectral::mixing_time_by_powering(&tm, &target, 0.01, 1_000_000).unwrap() as f64;
                assert!(b.lower <= steps && steps <= b.upper, "{:?} {t}: {} <= {steps} <= {}", k.kind(), b.lower, b.upper);
            }
        }
    }
    assert!(KernelKind::PAPER_KERNELS.len() == 3);
}

#[test]
fn periodic_single_spin_chain_does_not_mix() {
    let target = TargetDistribution::from_energies(&[0.0, 0.0], 0.0).unwrap();
    let tm = build_transition_matrix(&target, &Kernel::local(1)).unwrap();
    assert_eq!(tm.entries(), &[0.0, 1.0, 1.0, 0.0]);
    let rep = spectral::spectral_gap(&tm, &target).unwrap();
    assert!(rep.gap.abs() < 1e-12);
    assert!(matches!(
        spectral::mixing_bounds(rep.gap.max(0.0).min(0.0), 0.01, 0.5),
        Err(qamc::QamcError::NonMixing)
    ));
}
