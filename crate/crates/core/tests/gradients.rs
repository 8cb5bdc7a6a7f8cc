use dtsemnet::backprop::{add_l1, backward_classification, backward_regression};
use dtsemnet::gradcheck::{
    batch_loss, numeric_matrix_gradient, random_problem, relative_error, run_gradcheck,
    GradcheckOptions, Targets, DEFAULT_TOLERANCE,
};
use dtsemnet::linalg::Matrix;
use dtsemnet::optim::make_overparam_chain;
use dtsemnet::semnet::{SemNet, Task};
use dtsemnet::tree::graft_classifier;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| relative_error(*x, *y))
        .fold(0.0, f64::max)
}

#[test]
fn fifty_classification_networks() {
    let r = run_gradcheck(&GradcheckOptions::new(Task::Classification, 50, 11)).unwrap();
    assert!(r.passed(DEFAULT_TOLERANCE), "{r:?}");
    assert!(r.parameters_checked > 200);
}

#[test]
fn fifty_regression_networks() {
    let r = run_gradcheck(&GradcheckOptions::new(Task::Regression, 50, 12)).unwrap();
    assert!(r.passed(DEFAULT_TOLERANCE), "{r:?}");
    assert_eq!(r.ste_paths, Some("by-definition"));
}

#[test]
fn chain_factor_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let (mut net, xs, targets) = random_problem(Task::Classification, &mut rng, 6).unwrap();
        let widths = [rng.gen_range(2..6), rng.gen_range(2..6)];
        let chain = make_overparam_chain(
            net.num_internal(),
            net.dim(),
            &widths[..trial % 3],
            &mut rng,
        )
        .unwrap();
        net.attach_chain(chain).unwrap();
        let Targets::Classes(labels) = &targets else {
            unreachable!()
        };
        let (_, mut g) = backward_classification(&net, &xs, labels).unwrap();
        g.project_to_chain(&net).unwrap();
        let analytic = g.chain.clone().unwrap();
        for (f, expected) in analytic.iter().enumerate() {
            let base = net.chain().unwrap()[f].clone();
            let mut probe = net.clone();
            let numeric = numeric_matrix_gradient(&base, H, &mut |m| {
                probe.chain_mut().unwrap()[f] = m.clone();
                batch_loss(&probe, &xs, &targets).unwrap()
            });
            assert!(
                max_rel(expected, &numeric) < DEFAULT_TOLERANCE,
                "trial {trial} factor {f}"
            );
        }
    }
}

#[test]
fn l1_gradient_matches_penalized_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = SemNet::encode(
        graft_classifier(3, 3).unwrap(),
        3,
        Task::Classification,
        0,
        &mut rng,
    )
    .unwrap();
    for i in 0..net.num_internal() {
        net.raw_decisions_mut()[(i, 3)] = rng.gen_range(-0.5..0.5);
    }
    let xs: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let lambda = 0.05;
    let (mut report, mut g) = backward_classification(&net, &xs, &labels).unwrap();
    let decisions = net.decisions().into_owned();
    add_l1(&mut report, &mut g, &decisions, lambda).unwrap();

    let targets = Targets::Classes(labels.clone());
    let penalized = |n: &SemNet| {
        let d = n.decisions();
        let w: f64 = d
            .iter_rows()
            .map(|r| r[..3].iter().map(|v| v.abs()).sum::<f64>())
            .sum();
        batch_loss(n, &xs, &targets).unwrap() + lambda * w
    };
    assert!((report.loss - penalized(&net)).abs() < 1e-12);
    let mut probe = net.clone();
    let numeric = numeric_matrix_gradient(&decisions, H, &mut |m| {
        *probe.raw_decisions_mut() = m.clone();
        penalized(&probe)
    });
    assert!(max_rel(&g.decisions, &numeric) < DEFAULT_TOLERANCE);
}

#[test]
fn regression_leaf_gradients_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (net, xs, targets) = random_problem(Task::Regression, &mut rng, 10).unwrap();
        let Targets::Values(y) = &targets else {
            unreachable!()
        };
        let (report, g) = backward_regression(&net, &xs, y).unwrap();
        assert_eq!(report.ste_substitutions, xs.len());
        assert!((report.loss - batch_loss(&net, &xs, &targets).unwrap()).abs() < 1e-12);
        for (d, block) in g.regressors.iter().enumerate() {
            let mut probe = net.clone();
            let base = net.regressors().unwrap().blocks[d].clone();
            let numeric = numeric_matrix_gradient(&base, H, &mut |m| {
                probe.regressors_mut().unwrap().blocks[d] = m.clone();
                batch_loss(&probe, &xs, &targets).unwrap()
            });
            assert!(max_rel(block, &numeric) < DEFAULT_TOLERANCE);
        }
    }
}
