use proptest::prelude::*;
use tenslift::instances::{gaussian_instance, odd_support_factor, pmc_instance, SensingEnsemble};
use tenslift::lifted::{init_lifted, lifted_loss_grad, recover_factor, LiftedProblem, Strategy};
use tenslift::optim::{run_lifted, Algorithm, OptimizerConfig};
use tenslift::pca::PcaConfig;
use tenslift::rng::{self, Tag};
use tenslift::tensor::asymmetry;
use tenslift::DenseTensor;

#[test]
fn lifted_descent_recovers_an_easy_completion() {
    let e = pmc_instance(4, 1, 1.0, Some(odd_support_factor(4, 1, 3, 0)), 3).unwrap();
    let p = LiftedProblem::new(e, 3, Strategy::Auto).unwrap();
    let init = init_lifted(&p, 1e-2, 0.25, 3, 0).unwrap();
    let cfg = OptimizerConfig { algorithm: Algorithm::Gd, learning_rate: 1e-3, max_iters: 4000, ..OptimizerConfig::default() };
    let (w, log) = run_lifted(&p, &init.w0, &cfg).unwrap();
    assert!(asymmetry(&w).unwrap() < 1e-10);
    let first = log.rows.first().unwrap().loss;
    let last = log.final_row().unwrap().loss;
    assert!(last < 1e-3 * first, "loss {first} -> {last}");
    let rec = recover_factor(&p, &w, &PcaConfig::default()).unwrap();
    assert!(rec.recovery_error.unwrap() < 0.05, "{:?}", rec.recovery_error);
}

#[test]
fn instance_json_round_trips_into_the_same_objective() {
    let e = gaussian_instance(3, 1, 4, 11).unwrap();
    let back = SensingEnsemble::from_json(&e.to_json().unwrap()).unwrap();
    let w = DenseTensor::from_vec(3, 3, rng::normal_vec(&mut rng::stream(11, 0, Tag::Instance), 27)).unwrap();
    let a = lifted_loss_grad(&LiftedProblem::new(e, 3, Strategy::Gram).unwrap(), &w).unwrap();
    let b = lifted_loss_grad(&LiftedProblem::new(back, 3, Strategy::Gram).unwrap(), &w).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grad, b.grad);
}

#[test]
fn tiny_budget_falls_back_to_staged() {
    let e = gaussian_instance(3, 1, 4, 2).unwrap();
    let p = LiftedProblem::with_budget(e, 3, Strategy::Auto, 16).unwrap();
    assert_eq!(p.strategy(), Strategy::Staged);
    assert!(p.fell_back_to_staged());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn evaluation_paths_agree(seed in 0u64..1000, n in 2usize..4, m in 1usize..5) {
        let e = gaussian_instance(n, 1, m, seed).unwrap();
        let reference = LiftedProblem::new(e, 3, Strategy::Reference).unwrap();
        let w = DenseTensor::from_vec(3, n, rng::normal_vec(&mut rng::stream(seed, 1, Tag::Instance), n.pow(3))).unwrap();
        let base = lifted_loss_grad(&reference, &w).unwrap();
        for s in [Strategy::Gram, Strategy::Staged] {
            let other = lifted_loss_grad(&reference.with_strategy(s).unwrap(), &w).unwrap();
            prop_assert!((other.loss - base.loss).abs() <= 1e-9 * base.loss.abs().max(1.0));
            let diff = other.grad.sub(&base.grad).unwrap().norm();
            prop_assert!(diff <= 1e-9 * base.grad.norm().max(1.0));
        }
    }
}
