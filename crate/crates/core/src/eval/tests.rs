use super::*;
use crate::data::ConditionalTask;
use crate::models::{Activation, AffineScore, Mlp, MlpSpec, QuadraticEnergy, Variant};

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn tanh_energy(d: usize, seed: u64) -> ScoreSource {
    let spec = MlpSpec::new(vec![d, 16, 16, 16, 1], Activation::Tanh, Variant::Energy);
    ScoreSource::analytic(Mlp::init(spec, 0, d, seed).unwrap()).unwrap()
}

#[test]
fn grid_layout() {
    let g = Grid::default();
    let axis = g.axis();
    assert_eq!(axis.len(), 41);
    assert_eq!((axis[0], axis[40]), (-4.0, 4.0));
    assert!((axis[21] - 0.2).abs() < 1e-15);
    let p = g.points();
    assert_eq!(p.shape(), &[1681, 2]);
    assert_eq!(p.row(1), &[-4.0, -3.8]);
}

#[test]
fn zero_score_baseline_on_standard_gaussian() {
    // axis points are 0.2 k for k = -20..=20, so the grid mean of |y|^2 is
    // 2 * 0.04 * (2 * sum k^2) / 41 = 2 * 0.04 * 140 = 11.2
    let sum_k2: f64 = (1..=20).map(|k| (k * k) as f64).sum();
    let want = 2.0 * 0.04 * 2.0 * sum_k2 / 41.0;
    assert!((want - 11.2).abs() < 1e-12);

    let dist = SyntheticDistribution::gaussian(vec![0.0, 0.0], 1.0).unwrap();
    let g = Grid::default();
    let zero = ScoreSource::predictive(AffineScore::zero(2)).unwrap();
    assert!((score_field_mse(&zero, &dist, &g).unwrap() - want).abs() < 1e-12);
    assert!((zero_score_baseline(&dist, &g).unwrap() - want).abs() < 1e-12);

    let oracle = ScoreSource::analytic(QuadraticEnergy::standard(2)).unwrap();
    assert_eq!(score_field_mse(&oracle, &dist, &g).unwrap(), 0.0);
}

#[test]
fn grad_check_examples() {
    let y = m(&[&[0.7, -1.3], &[2.0, 0.1]]);
    let quad = ScoreSource::analytic(QuadraticEnergy::diagonal(vec![1.0, 3.0]).centered(vec![0.5, 0.5])).unwrap();
    assert!(score_grad_check(&quad, None, &y, 1e-5).unwrap() <= 1e-10);

    let net = tanh_energy(2, 3);
    assert!(score_grad_check(&net, None, &y, 1e-5).unwrap() <= 1e-5);

    // corrupt one coordinate of the analytic gradient
    let f = |p: &[f64]| -> Result<f64> { Ok(-net.energies(None, &m(&[p]))?[0]) };
    let mut s = net.score(None, &m(&[&[0.7, -1.3]])).unwrap().data().to_vec();
    s[1] *= 2.0;
    let c = grad_check(f, &s, &[0.7, -1.3], 1e-5).unwrap();
    assert!(c.max_rel_error > 0.4 && !c.passes(1e-4), "{c:?}");
    assert_eq!(c.worst, 1);

    assert!(grad_check(f, &s, &[0.7, -1.3], 1e-2).is_err());
    assert!(grad_check(f, &s, &[0.7, -1.3], 1e-8).is_err());
    let nan = [f64::NAN, 0.0];
    assert!(matches!(grad_check(f, &nan, &[0.7, -1.3], 1e-5), Err(Error::NonFinite { .. })));
}

#[test]
fn loss_gradients_pass_grad_check_across_seeds() {
    let (k, d, n) = (2, 2, 4);
    let task = ConditionalTask::default();
    for seed in 0..10u64 {
        let data = task.sample(n, 100 + seed).unwrap();
        let x = data.x.clone().unwrap();
        let yn = task.base_predict(&x).unwrap();
        let v = draw_projections(n, d, 1, Projection::Gaussian, &mut rng::seeded(seed)).remove(0);
        for variant in [Variant::Energy, Variant::Score] {
            let out = if variant == Variant::Energy { 1 } else { d };
            let spec = MlpSpec::new(vec![k + d, 8, 8, out], Activation::Tanh, variant);
            let src = ScoreSource::from_mlp(Mlp::init(spec, k, d, seed).unwrap()).unwrap();
            let base = LossBatch::new(data.y.clone()).with_x(x.clone());
            let mut cases = vec![
                (LossKind::Sm, base.clone()),
                (LossKind::Ssm, base.clone().with_projections(vec![v.clone()])),
                (LossKind::Delta, base.clone().with_neg(yn.clone())),
            ];
            if variant == Variant::Energy {
                cases.push((LossKind::Nce, base.clone().with_neg(yn.clone())));
            }
            for (kind, batch) in cases {
                let c = loss_grad_check(kind, &src, &batch, &LossOptions::default(), 1e-5, Some((20, seed))).unwrap();
                assert!(c.passes(1e-4), "{kind:?} {variant:?} seed {seed}: {}", c.max_rel_error);
            }
        }
    }
}

#[test]
fn hutchinson_on_gaussian_score() {
    let d = 3;
    let src = ScoreSource::analytic(QuadraticEnergy::standard(d)).unwrap();
    let y = m(&[&[0.1, 0.2, 0.3]]);
    let draws = 20_000;
    let h = hutchinson_check(&src, None, &y, draws, 5).unwrap();
    assert_eq!(h.exact, -(d as f64));
    assert!(h.passes(), "{h:?}");
    // term = -|v|^2, Var(|v|^2) = 2d
    let want_se = (2.0 * d as f64 / draws as f64).sqrt();
    assert!((h.stderr - want_se).abs() / want_se < 0.05, "{} vs {want_se}", h.stderr);
}

#[test]
fn hutchinson_on_linear_score() {
    let b = m(&[&[0.5, 1.0, -2.0], &[0.3, -1.5, 0.0], &[2.0, 0.1, 0.7]]);
    let src = ScoreSource::predictive(AffineScore::linear(b).unwrap()).unwrap();
    let h = hutchinson_check(&src, None, &m(&[&[1.0, 2.0, 3.0]]), 10_000, 1).unwrap();
    assert!((h.exact - (0.5 - 1.5 + 0.7)).abs() < 1e-12);
    assert!(h.passes(), "{h:?}");
}

#[test]
fn single_draw_estimates_are_unbiased_over_seeds() {
    let b = m(&[&[1.0, 0.5], &[-0.5, 2.0]]);
    let src = ScoreSource::predictive(AffineScore::linear(b).unwrap()).unwrap();
    let y = m(&[&[0.0, 0.0]]);
    let reps = 4000;
    let vals: Vec<f64> = (0..reps)
        .map(|s| {
            let h = hutchinson_check(&src, None, &y, 1, s).unwrap();
            assert!(h.stderr.is_infinite());
            h.mean
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    // vᵀBv with symmetric part diag(1, 2): variance 2 (1 + 4) = 10
    let se = (10.0 / reps as f64).sqrt();
    assert!((mean - 3.0).abs() <= 3.0 * se, "{mean}");
}

#[test]
fn energy_distance_properties() {
    let a = SyntheticDistribution::gaussian(vec![0.0], 1.0).unwrap().sample(1000, 1).unwrap();
    let b = SyntheticDistribution::gaussian(vec![10.0], 1.0).unwrap().sample(1000, 2).unwrap();
    assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
    let ab = energy_distance(&a, &b).unwrap();
    let ba = energy_distance(&b, &a).unwrap();
    assert!(ab > 5.0, "{ab}");
    assert!((ab - ba).abs() <= 1e-12);
    for seed in 0..10 {
        let g = SyntheticDistribution::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let p = g.sample(50, seed).unwrap();
        let q = g.sample(70, seed + 100).unwrap();
        assert!(energy_distance(&p, &q).unwrap() >= 0.0);
    }
    assert!(energy_distance(&a, &Tensor::zeros(vec![3, 2])).is_err());
}

#[test]
fn mmd_properties() {
    let a = SyntheticDistribution::gaussian(vec![0.0, 0.0], 1.0).unwrap().sample(200, 1).unwrap();
    let b = SyntheticDistribution::gaussian(vec![3.0, 0.0], 1.0).unwrap().sample(200, 2).unwrap();
    let c = SyntheticDistribution::gaussian(vec![0.0, 0.0], 1.0).unwrap().sample(200, 3).unwrap();
    assert!(mmd_rbf(&a, &a).unwrap().abs() < 1e-15);
    let far = mmd_rbf(&a, &b).unwrap();
    let near = mmd_rbf(&a, &c).unwrap();
    assert!(far > 10.0 * near, "{far} vs {near}");
}

#[test]
fn step_sweep_examples() {
    let task = ConditionalTask::default();
    let held = task.sample(4000, 9).unwrap();
    let x = held.x.clone().unwrap();
    let init = task.base_predict(&x).unwrap();
    // perfect delta score for this task: S(x, Y) = A x - Y with A = I
    let perfect = ScoreSource::predictive(AffineScore::displacement(2)).unwrap();
    let sweep = step_sweep(&perfect, &held, &init, &[0, 1, 10], 1.0).unwrap();

    let base_err = init.zip_map(&held.y, |a, b| a - b).unwrap().sq_norm() / 4000.0;
    assert_eq!(sweep.mse_at(0), Some(base_err));
    let noise = task.mean(&x).unwrap().zip_map(&held.y, |a, b| a - b).unwrap().sq_norm() / 4000.0;
    assert!((sweep.mse_at(1).unwrap() - noise).abs() < 1e-12);
    // which is the observation-noise floor sigma^2 d
    assert!((noise - 0.09 * 2.0).abs() < 0.01, "{noise}");

    let r = sweep.report(&[9]);
    assert_eq!(r.metrics["one_step_beats_initialisation"].value, 1.0);
    assert!(r.metrics.contains_key("mse_step_010"));
    assert!(step_sweep(&perfect, &held, &init, &[], 1.0).is_err());
}

#[test]
fn step_sweep_marks_divergence() {
    let task = ConditionalTask::default();
    let held = task.sample(10, 1).unwrap();
    let init = task.base_predict(held.x.as_ref().unwrap()).unwrap();
    let blowup = ScoreSource::predictive(AffineScore::linear(m(&[&[3.0, 0.0], &[0.0, 3.0]])).unwrap()).unwrap();
    let s = step_sweep(&blowup, &held, &init, &[0, 1, 100], 1.0).unwrap();
    assert!(s.mse_at(1).unwrap().is_finite());
    assert!(s.mse_at(100).unwrap().is_infinite());
}

#[test]
fn report_serialisation() {
    let dist = SyntheticDistribution::gaussian(vec![0.0, 0.0], 1.0).unwrap();
    let zero = ScoreSource::predictive(AffineScore::zero(2)).unwrap();
    let g = Grid {
        lo: -1.0,
        hi: 1.0,
        resolution: 3,
    };
    let r = score_field_report(&zero, &dist, &g, 0.2).unwrap();
    assert!(!r.passed());
    assert_eq!(r.failures(), vec!["score_mse_ratio"]);
    let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("grid.csv");
    r.write_grid_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "y0\\y1,-1,0,1");
    assert_eq!(lines[1], "-1,2,1,2");
    assert_eq!(lines[2], "0,1,0,1");
}
