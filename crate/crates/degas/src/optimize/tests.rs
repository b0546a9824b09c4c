use approx::assert_relative_eq;

use super::*;
use crate::cfg::build_cfg;
use crate::diff::Interval;
use crate::frontend::{parse, parse_param_file, validate};
use crate::oracle::mc_sample;

fn compile(src: &str, params_text: &str) -> (Cfg, ParamStore) {
    let (ast, store) = validate(
        parse(src).unwrap(),
        parse_param_file(params_text).unwrap(),
    )
    .unwrap();
    (build_cfg(&ast), store)
}

#[test]
fn adam_minimizes_a_quadratic() {
    // loss(theta) = (theta - 2)^2, driven directly through the stepper.
    let mut params = ParamStore::new();
    params.insert("theta", -1.0, Interval::unbounded());
    let ocfg = OptimizerConfig::new(0.1, 500, 1e-3);
    let mut adam = Adam::new(&ocfg);
    for _ in 0..500 {
        let theta = params.value("theta").unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("theta".to_string(), 2.0 * (theta - 2.0));
        adam.step(&mut params, &grads);
    }
    assert!((params.value("theta").unwrap() - 2.0).abs() < 1e-3);
}

#[test]
fn one_small_step_descends() {
    let mut params = ParamStore::new();
    params.insert("a", 1.0, Interval::unbounded());
    params.insert("b", -2.0, Interval::unbounded());
    let mut ocfg = OptimizerConfig::new(1e-6, 1, 1e-3);
    ocfg.adam_eps = 1e-12;
    let mut adam = Adam::new(&ocfg);
    let mut grads = BTreeMap::new();
    grads.insert("a".to_string(), 3.0);
    grads.insert("b".to_string(), -0.5);
    adam.step(&mut params, &grads);
    assert!(params.value("a").unwrap() < 1.0);
    assert!(params.value("b").unwrap() > -2.0);
}

#[test]
fn projection_examples() {
    let mut params = ParamStore::new();
    params.insert("sigma", -0.3, Interval::new(0.0, f64::INFINITY));
    params.insert("theta", 5.0, Interval::unbounded());
    project_params(&mut params);
    assert_eq!(params.value("sigma").unwrap(), 1e-6);
    assert_eq!(params.value("theta").unwrap(), 5.0);

    let mut params = ParamStore::new();
    params.insert("w1", 0.7, Interval::new(0.0, 1.0));
    params.insert("w2", 0.5, Interval::new(0.0, 1.0));
    params.add_simplex_group(vec!["w1".into(), "w2".into()], 0.0);
    project_params(&mut params);
    assert_relative_eq!(params.value("w1").unwrap(), 0.7 / 1.2, max_relative = 1e-9);
    assert_relative_eq!(params.value("w2").unwrap(), 0.5 / 1.2, max_relative = 1e-9);

    // Idempotence.
    let before = params.snapshot();
    project_params(&mut params);
    assert_eq!(before, params.snapshot());
}

#[test]
fn nll_of_standard_normal_at_zero() {
    let (cfg, store) = compile("x = gm([1.], [0.], [1.]);", "");
    diff::reset();
    let post = eval_program(&cfg, &store, &SmoothConfig::degas(1e-3), 64).unwrap();
    let ds = Dataset { var_names: vec!["x".into()], rows: vec![vec![0.0]] };
    let loss = nll_loss(&post, &ds).unwrap();
    assert_relative_eq!(loss.value(), 0.9189385332046727, max_relative = 1e-12);
}

#[test]
fn nll_gradient_is_gaussian_score() {
    let (cfg, store) = compile("x = gm([1.], [_mu], [1.]);", "mu 0.4 -inf inf");
    diff::reset();
    let post = eval_program(&cfg, &store, &SmoothConfig::degas(1e-3), 64).unwrap();
    let rows: Vec<Vec<f64>> = vec![vec![0.1], vec![-0.3], vec![0.7], vec![0.25]];
    let n = rows.len() as f64;
    let xbar: f64 = rows.iter().map(|r| r[0]).sum::<f64>() / n;
    let ds = Dataset { var_names: vec!["x".into()], rows };
    let loss = nll_loss(&post, &ds).unwrap();
    let g = gradient(loss, &store).unwrap();
    // d/dmu of the Gaussian NLL is N (mu - xbar).
    assert_relative_eq!(g["mu"], n * (0.4 - xbar), max_relative = 1e-9);
}

#[test]
fn nll_rejects_zero_density_rows() {
    let (cfg, store) = compile("x = gm([1.], [0.], [1.]);", "");
    diff::reset();
    let post = eval_program(&cfg, &store, &SmoothConfig::degas(1e-3), 64).unwrap();
    let ds = Dataset { var_names: vec!["x".into()], rows: vec![vec![0.0], vec![1e200]] };
    match nll_loss(&post, &ds) {
        Err(OptimError::NonFiniteLoss { detail, .. }) => {
            assert!(detail.contains("row 2"), "{detail}")
        }
        other => panic!("{other:?}"),
    }
    let ds = Dataset { var_names: vec!["bogus".into()], rows: vec![vec![0.0]] };
    assert!(matches!(nll_loss(&post, &ds), Err(OptimError::Dataset(_))));
}

#[test]
fn dataset_csv_round_trip() {
    let ds = Dataset {
        var_names: vec!["x".into(), "y".into()],
        rows: vec![vec![0.5, -1.25], vec![2.0, 3.5]],
    };
    let txt = ds.to_csv();
    assert_eq!(Dataset::from_csv(&txt).unwrap(), ds);
    assert!(Dataset::from_csv("x\n").is_err());
    assert!(Dataset::from_csv("x,x\n1,2\n").is_err());
    assert!(Dataset::from_csv("x\n1,2\n").is_err());
    assert!(Dataset::from_csv("x\nnan\n").is_err());
}

#[test]
fn reachability_leaves_and_combinators() {
    let (cfg, store) = compile("v = gm([1.], [16.], [1.]);", "");
    diff::reset();
    let post = eval_program(&cfg, &store, &SmoothConfig::degas(1e-3), 64).unwrap();
    let half = ReachExpr::Cdf { var: "v".into(), lo: f64::NEG_INFINITY, hi: 16.0 };
    assert_relative_eq!(
        reachability_loss(&half, &post).unwrap().value(),
        0.5,
        max_relative = 1e-9
    );
    let product = ReachExpr::Prod(vec![half.clone(), half.clone()]);
    assert_relative_eq!(
        reachability_loss(&product, &post).unwrap().value(),
        0.25,
        max_relative = 1e-9
    );
    let compl = ReachExpr::Complement(Box::new(ReachExpr::Neg(Box::new(half.clone()))));
    assert_relative_eq!(
        reachability_loss(&compl, &post).unwrap().value(),
        1.5,
        max_relative = 1e-9
    );
    let p0 = ReachExpr::PathProb(0);
    assert_relative_eq!(reachability_loss(&p0, &post).unwrap().value(), 1.0);
    assert!(matches!(
        reachability_loss(&ReachExpr::PathProb(7), &post),
        Err(OptimError::BadLossSpec(_))
    ));
}

#[test]
fn parse_reach_expr_grammar() {
    let e = parse_reach_expr("neg(prod(cdf(t6, 19.9, 20.1), pathprob(0)))").unwrap();
    assert_eq!(
        e,
        ReachExpr::Neg(Box::new(ReachExpr::Prod(vec![
            ReachExpr::Cdf { var: "t6".into(), lo: 19.9, hi: 20.1 },
            ReachExpr::PathProb(0),
        ])))
    );
    let e = parse_reach_expr("sum(cdf(v, -inf, 16), complement(cdf(v, 0, inf)))").unwrap();
    match e {
        ReachExpr::Sum(parts) => assert_eq!(parts.len(), 2),
        other => panic!("{other:?}"),
    }
    assert!(parse_reach_expr("bogus(1)").is_err());
    assert!(parse_reach_expr("cdf(v, 1, 2) trailing").is_err());
}

#[test]
fn recovers_fig2_threshold_from_synthetic_data() {
    // Data generated at theta = 0.5; optimize the NLL of y.
    let src = "x = gm([1.], [0.], [1.]);\nif (x < _theta) { y = -1.; } else { y = 1.; }";
    let (truth_ast, truth_store) = validate(
        parse(src).unwrap(),
        parse_param_file("theta 0.5 -inf inf").unwrap(),
    )
    .unwrap();
    let truth_cfg = build_cfg(&truth_ast);
    let mc = mc_sample(&truth_ast, &truth_store, 200_000, 31, 1).unwrap();
    let _ = truth_cfg;
    // Build a dataset of y draws by thresholding fresh simulations: use the
    // mc sampler's mean as a sanity anchor and synthesize the dataset from
    // the acceptance fraction it implies.
    let p_neg = (1.0 - mc.mean[1]) / 2.0; // P(y = -1) = Phi(theta)
    let n = 400;
    let k = (p_neg * n as f64).round() as usize;
    let mut rows = vec![vec![-1.0]; k];
    rows.extend(vec![vec![1.0]; n - k]);
    let ds = Dataset { var_names: vec!["y".into()], rows };

    let (cfg, mut store) = compile(src, "theta 0.0 -inf inf");
    let ocfg = OptimizerConfig::new(0.02, 400, 1e-3);
    let trace = run_optimization(
        &cfg,
        &mut store,
        &LossSpec::Nll(ds),
        &ocfg,
        &SmoothConfig::degas(1e-3),
    )
    .unwrap();
    let theta = store.value("theta").unwrap();
    assert!((theta - 0.5).abs() < 0.1, "recovered {theta}");
    assert!(trace.steps.last().unwrap().loss < trace.steps[0].loss);
}

#[test]
fn optimization_trace_is_deterministic() {
    let src = "x = gm([1.], [_mu], [1.]);\nobserve(x <= 1.);";
    let ds = Dataset { var_names: vec!["x".into()], rows: vec![vec![0.2], vec![0.5]] };
    let run = || {
        let (cfg, mut store) = compile(src, "mu 0.0 -inf inf");
        let ocfg = OptimizerConfig::new(0.05, 40, 1e-3);
        run_optimization(
            &cfg,
            &mut store,
            &LossSpec::Nll(ds.clone()),
            &ocfg,
            &SmoothConfig::degas(1e-3),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.converged, b.converged);
    assert_eq!(a.steps.len(), b.steps.len());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        assert_eq!(x.params, y.params);
    }
}

#[test]
fn early_stopping_fires_on_flat_loss() {
    // A loss independent of the parameter cannot improve.
    let src = "x = gm([1.], [0.], [1.]);\ny = _mu;";
    let ds = Dataset { var_names: vec!["x".into()], rows: vec![vec![0.0]] };
    let (cfg, mut store) = compile(src, "mu 0.0 -inf inf");
    let ocfg = OptimizerConfig::new(0.05, 500, 1e-3);
    let trace = run_optimization(
        &cfg,
        &mut store,
        &LossSpec::Nll(ds),
        &ocfg,
        &SmoothConfig::degas(1e-3),
    )
    .unwrap();
    assert!(trace.converged);
    // First step improves nothing, so patience expires quickly.
    assert!(trace.steps.len() <= 31, "{} steps", trace.steps.len());
}
