use super::*;
use crate::models::{
    Activation, AffineScore, LinearEnergy, Mlp, MlpSpec, QuadraticEnergy, Variant,
};
use crate::rng;

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn mlp(variant: Variant, dim_x: usize, dim_y: usize, hidden: usize, act: Activation, seed: u64) -> Mlp {
    let out = match variant {
        Variant::Energy => 1,
        Variant::Score => dim_y,
    };
    let spec = MlpSpec::new(vec![dim_x + dim_y, hidden, hidden, out], act, variant);
    Mlp::init(spec, dim_x, dim_y, seed).unwrap()
}

fn random(n: usize, d: usize, seed: u64) -> Tensor {
    draw_projections(n, d, 1, Projection::Gaussian, &mut rng::seeded(seed)).remove(0)
}

#[test]
fn nce_examples() {
    // E(Y) = Y for scalar Y, so the energies are the sample values.
    let e = ScoreSource::analytic(LinearEnergy { c: vec![1.0] }).unwrap();
    let at = |p: f64, q: f64| nce_loss(&e, &LossBatch::new(m(&[&[p]])).with_neg(m(&[&[q]]))).unwrap();
    assert!((at(0.0, 0.0) - 2.0 * std::f64::consts::LN_2).abs() <= 1e-12);
    assert!(at(-100.0, 100.0) <= 1e-40);
    // log(1 + e) + log(1 + e^-2), 40-digit reference
    assert!((at(1.0, 2.0) - 1.440_189_698_561_195_3).abs() <= 1e-12);
}

#[test]
fn nce_requirements() {
    let e = ScoreSource::analytic(LinearEnergy { c: vec![1.0] }).unwrap();
    let err = nce_loss(&e, &LossBatch::new(m(&[&[1.0]]))).unwrap_err();
    assert!(err.to_string().contains("y_neg"), "{err}");
    let s = ScoreSource::predictive(AffineScore::zero(1)).unwrap();
    let b = LossBatch::new(m(&[&[1.0]])).with_neg(m(&[&[0.0]]));
    assert!(matches!(nce_loss(&s, &b), Err(Error::Config(_))));
}

#[test]
fn sm_examples() {
    let gauss = ScoreSource::analytic(QuadraticEnergy::standard(2)).unwrap();
    assert!((sm_loss(&gauss, &LossBatch::new(m(&[&[1.0, 1.0]])), 16).unwrap() + 1.0).abs() < 1e-14);

    let zero = ScoreSource::predictive(AffineScore::zero(2)).unwrap();
    assert_eq!(sm_loss(&zero, &LossBatch::new(m(&[&[0.3, -7.0]])), 16).unwrap(), 0.0);

    let diag = ScoreSource::analytic(QuadraticEnergy::diagonal(vec![1.0, 3.0])).unwrap();
    assert!((sm_loss(&diag, &LossBatch::new(m(&[&[1.0, 0.0]])), 16).unwrap() + 3.5).abs() < 1e-14);
}

#[test]
fn sm_refuses_large_dimensions() {
    let src = ScoreSource::analytic(QuadraticEnergy::standard(17)).unwrap();
    let err = sm_loss(&src, &LossBatch::new(Tensor::zeros(vec![1, 17])), 16).unwrap_err();
    assert!(matches!(err, Error::TraceLimit { dim: 17, limit: 16 }));
    assert!(err.to_string().contains("ssm"));
}

#[test]
fn ssm_examples() {
    let gauss = ScoreSource::analytic(QuadraticEnergy::standard(2)).unwrap();
    let y = m(&[&[1.0, 1.0]]);
    let opts = LossOptions::default();
    let with = |v: &[f64]| LossBatch::new(y.clone()).with_projections(vec![m(&[v])]);
    assert!(ssm_loss(&gauss, &with(&[1.0, 0.0]), None, &opts).unwrap().abs() < 1e-14);
    assert!((ssm_loss(&gauss, &with(&[1.0, 1.0]), None, &opts).unwrap() + 1.0).abs() < 1e-14);
    assert!(matches!(
        ssm_loss(&gauss, &LossBatch::new(y.clone()), None, &opts),
        Err(Error::MissingInput { loss: "ssm", .. })
    ));
    // a seeded generator stands in for explicit projections
    let a = ssm_loss(&gauss, &LossBatch::new(y.clone()), Some(&mut rng::seeded(1)), &opts).unwrap();
    let b = ssm_loss(&gauss, &LossBatch::new(y), Some(&mut rng::seeded(1)), &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hutchinson_mean_matches_exact_trace() {
    let src = ScoreSource::analytic(mlp(Variant::Energy, 0, 3, 16, Activation::Tanh, 4)).unwrap();
    let y0 = [0.3, -0.8, 0.5];
    let exact = exact_trace(&src, None, &m(&[&y0])).unwrap()[0];
    let draws = 100_000;
    let y = Tensor::from_rows(&vec![y0.to_vec(); draws]).unwrap();
    let v = random(draws, 3, 77);
    let terms = projection_terms(&src, None, &y, &v).unwrap();
    let mean = terms.iter().sum::<f64>() / draws as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn ssm_with_many_projections_approaches_sm() {
    let src = ScoreSource::analytic(mlp(Variant::Energy, 0, 2, 8, Activation::Softplus, 2)).unwrap();
    let y = m(&[&[0.4, -0.2]]);
    let sm = sm_loss(&src, &LossBatch::new(y.clone()), 16).unwrap();
    let k = 4000;
    let opts = LossOptions {
        projections: k,
        ..LossOptions::default()
    };
    let ssm = ssm_loss(&src, &LossBatch::new(y.clone()), Some(&mut rng::seeded(3)), &opts).unwrap();
    // spread of the single-projection term at this point
    let v = random(k, 2, 9);
    let yy = Tensor::from_rows(&vec![y.row(0).to_vec(); k]).unwrap();
    let t = projection_terms(&src, None, &yy, &v).unwrap();
    let mu = t.iter().sum::<f64>() / k as f64;
    let sd = (t.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
    assert!((ssm - sm).abs() <= 3.0 * sd / (k as f64).sqrt(), "{ssm} vs {sm}");
}

#[test]
fn delta_examples() {
    // perfect score: the reference rides in as the condition
    let perfect = ScoreSource::predictive(AffineScore::displacement(2)).unwrap();
    let yp = m(&[&[1.0, 2.0], &[-0.5, 3.0]]);
    let yn = m(&[&[0.2, 0.1], &[0.0, 0.0]]);
    let b = LossBatch::new(yp.clone()).with_neg(yn).with_x(yp);
    assert_eq!(delta_loss(&perfect, &b).unwrap(), 0.0);

    let zero = ScoreSource::predictive(AffineScore::zero(2)).unwrap();
    let b = LossBatch::new(m(&[&[1.0, 2.0]])).with_neg(m(&[&[0.0, 0.0]]));
    assert_eq!(delta_loss(&zero, &b).unwrap(), 2.5);
    assert!(matches!(
        delta_loss(&zero, &LossBatch::new(m(&[&[1.0, 2.0]]))),
        Err(Error::MissingInput { loss: "delta", .. })
    ));
}

#[test]
fn delta_gradient_wrt_score_output_is_the_residual() {
    // S ≡ c, so d loss / d c = S - (Y⁺ - Y⁻) for a single row
    let yp = [1.0, 2.0];
    let yn = [0.5, -1.0];
    let c = [0.3, 0.7];
    let loss = |c: &[f64]| {
        let s = ScoreSource::predictive(AffineScore::constant(c.to_vec())).unwrap();
        delta_loss(&s, &LossBatch::new(m(&[&yp])).with_neg(m(&[&yn]))).unwrap()
    };
    let h = 1e-5;
    for j in 0..2 {
        let (mut p, mut q) = (c, c);
        p[j] += h;
        q[j] -= h;
        let fd = (loss(&p) - loss(&q)) / (2.0 * h);
        let want = c[j] - (yp[j] - yn[j]);
        assert!((fd - want).abs() <= 1e-9 * want.abs().max(1.0), "{fd} vs {want}");
    }
}

#[test]
fn fm_at_time_zero_is_the_delta_loss() {
    let (k, d, h) = (2, 2, 8);
    let s = mlp(Variant::Score, k, d, h, Activation::Tanh, 5);
    // velocity network: same weights, plus a random row for the time input
    let mut flat = s.flat_parameters();
    let t_row: Vec<f64> = random(1, h, 6).data().to_vec();
    flat.splice(k * h..k * h, t_row);
    let vspec = MlpSpec::new(vec![k + 1 + d, h, h, d], Activation::Tanh, Variant::Score);
    let v = Mlp::from_flat(vspec, k + 1, d, 0, &flat).unwrap();

    let x = random(5, k, 10);
    let yp = random(5, d, 11);
    let yn = random(5, d, 12);
    let delta = delta_loss(
        &ScoreSource::predictive(s).unwrap(),
        &LossBatch::new(yp.clone()).with_neg(yn.clone()).with_x(x.clone()),
    )
    .unwrap();
    let fm = fm_loss(
        &ScoreSource::predictive(v).unwrap(),
        &LossBatch::new(yp).with_anchor(yn, vec![0.0; 5]).with_x(x),
    )
    .unwrap();
    assert!((fm - delta).abs() <= 1e-12, "{fm} vs {delta}");
}

#[test]
fn fm_endpoints_and_perfect_velocity() {
    let yp = m(&[&[1.0, 2.0], &[3.0, -1.0]]);
    let y0 = m(&[&[0.0, 0.5], &[-2.0, 2.0]]);
    assert_eq!(interpolate(&yp, &y0, &[1.0, 1.0]).unwrap(), yp);
    assert_eq!(interpolate(&yp, &y0, &[0.0, 0.0]).unwrap(), y0);

    // V(x, Y_t, t) = x - Y_t with x = Y⁺: at t = 0 this is Y⁺ - Y⁰ exactly
    let by = m(&[&[-1.0, 0.0], &[0.0, -1.0]]);
    let bx = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
    let perfect = AffineScore::new(by, Some(bx), vec![0.0, 0.0]).unwrap();
    let b = LossBatch::new(yp.clone()).with_anchor(y0.clone(), vec![0.0, 0.0]).with_x(yp.clone());
    assert_eq!(fm_loss(&ScoreSource::predictive(perfect).unwrap(), &b).unwrap(), 0.0);

    // constant velocity equal to the displacement works at every t
    let vel = AffineScore::new(
        Tensor::zeros(vec![2, 2]),
        Some(Tensor::zeros(vec![1, 2])),
        vec![1.0, 1.5],
    )
    .unwrap();
    let one = LossBatch::new(m(&[&[1.0, 2.0]])).with_anchor(m(&[&[0.0, 0.5]]), vec![0.37]);
    assert_eq!(fm_loss(&ScoreSource::predictive(vel.clone()).unwrap(), &one).unwrap(), 0.0);

    let bad = LossBatch::new(m(&[&[1.0, 2.0]])).with_anchor(m(&[&[0.0, 0.5]]), vec![1.5]);
    assert!(fm_loss(&ScoreSource::predictive(vel).unwrap(), &bad).is_err());
}

/// Sets one flat coordinate of a network's parameters.
fn nudge(src: &mut ScoreSource, tensor: usize, index: usize, delta: f64) {
    src.network_mut().parameters_mut()[tensor].data_mut()[index] += delta;
}

fn check_parameter_gradients(kind: LossKind, src: &ScoreSource, batch: &LossBatch, seed: u64) {
    let opts = LossOptions::default();
    let eval = evaluate(kind, src, batch, &opts, None, true).unwrap();
    let grads = eval.grads.unwrap();
    let mut r = rng::seeded(seed);
    let h = 1e-5;
    for _ in 0..20 {
        let t = r.random_range(0..grads.len());
        let i = r.random_range(0..grads[t].numel());
        let mut plus = src.clone();
        nudge(&mut plus, t, i, h);
        let mut minus = src.clone();
        nudge(&mut minus, t, i, -h);
        let f = |s: &ScoreSource| evaluate(kind, s, batch, &opts, None, false).unwrap().value;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an = grads[t].data()[i];
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
        assert!(rel <= 1e-4 || (fd - an).abs() <= 1e-9, "{kind:?} param {t}/{i}: {an} vs {fd}");
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let (k, d, n) = (2, 2, 4);
    let x = random(n, k, 20);
    let yp = random(n, d, 21);
    let yn = random(n, d, 22);
    let v = random(n, d, 23);
    for variant in [Variant::Energy, Variant::Score] {
        let src = ScoreSource::from_mlp(mlp(variant, k, d, 6, Activation::Tanh, 30)).unwrap();
        let base = LossBatch::new(yp.clone()).with_x(x.clone());
        if variant == Variant::Energy {
            check_parameter_gradients(LossKind::Nce, &src, &base.clone().with_neg(yn.clone()), 1);
        }
        check_parameter_gradients(LossKind::Sm, &src, &base, 2);
        check_parameter_gradients(LossKind::Ssm, &src, &base.clone().with_projections(vec![v.clone()]), 3);
        check_parameter_gradients(LossKind::Delta, &src, &base.clone().with_neg(yn.clone()), 4);

        let vel = ScoreSource::from_mlp(mlp(variant, k + 1, d, 6, Activation::Softplus, 31)).unwrap();
        let fm = LossBatch::new(yp.clone())
            .with_x(x.clone())
            .with_anchor(yn.clone(), vec![0.1, 0.5, 0.9, 0.0]);
        check_parameter_gradients(LossKind::Fm, &vel, &fm, 5);
    }
}

#[test]
fn batch_loss_is_mean_of_item_losses() {
    let (k, d, n) = (2, 2, 5);
    let src = ScoreSource::from_mlp(mlp(Variant::Energy, k, d, 8, Activation::Tanh, 40)).unwrap();
    let batch = LossBatch::new(random(n, d, 41))
        .with_x(random(n, k, 42))
        .with_neg(random(n, d, 43))
        .with_projections(vec![random(n, d, 44), random(n, d, 45)]);
    let opts = LossOptions::default();
    for kind in [LossKind::Nce, LossKind::Sm, LossKind::Ssm, LossKind::Delta] {
        let whole = evaluate(kind, &src, &batch, &opts, None, false).unwrap().value;
        let parts: f64 = (0..n)
            .map(|i| evaluate(kind, &src, &batch.item(i), &opts, None, false).unwrap().value)
            .sum::<f64>()
            / n as f64;
        assert!((whole - parts).abs() <= 1e-12, "{kind:?}: {whole} vs {parts}");
    }
}

#[test]
fn loss_signs() {
    let (k, d, n) = (2, 2, 16);
    let src = ScoreSource::from_mlp(mlp(Variant::Energy, k, d, 8, Activation::Tanh, 50)).unwrap();
    for seed in 0..10 {
        let b = LossBatch::new(random(n, d, seed))
            .with_x(random(n, k, seed + 100))
            .with_neg(random(n, d, seed + 200));
        assert!(nce_loss(&src, &b).unwrap() > 0.0);
        assert!(delta_loss(&src, &b).unwrap() >= 0.0);
    }
}

#[test]
fn batch_validation() {
    let b = LossBatch::new(Tensor::zeros(vec![3, 2])).with_neg(Tensor::zeros(vec![2, 2]));
    assert!(matches!(b.validate(), Err(Error::ShapeMismatch { .. })));
    let b = LossBatch::new(Tensor::zeros(vec![2, 2])).with_anchor(Tensor::zeros(vec![2, 2]), vec![0.0, -0.1]);
    assert!(b.validate().is_err());
    assert_eq!("ssm".parse::<LossKind>().unwrap(), LossKind::Ssm);
    assert!("dsm".parse::<LossKind>().is_err());
    let s = ScoreSource::analytic(QuadraticEnergy::standard(2)).unwrap();
    assert_eq!(s.network().parameters().len(), 0);
}
