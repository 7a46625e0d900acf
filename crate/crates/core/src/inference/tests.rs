use super::*;
use crate::data::SyntheticDistribution;
use crate::models::{Activation, AffineScore, Mlp, MlpSpec, QuadraticEnergy, Variant};

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn constant(c: &[f64]) -> ScoreSource {
    ScoreSource::predictive(AffineScore::constant(c.to_vec())).unwrap()
}

fn mlp_energy(seed: u64) -> ScoreSource {
    let spec = MlpSpec::new(vec![2, 16, 16, 1], Activation::Tanh, Variant::Energy);
    ScoreSource::analytic(Mlp::init(spec, 0, 2, seed).unwrap()).unwrap()
}

fn plain(alpha: f64, beta: f64, sigma: f64) -> Schedule {
    Schedule::Constant(StepParams { alpha, beta, sigma })
}

#[test]
fn langevin_examples() {
    let t = langevin_run(&constant(&[2.0, -1.0]), None, &m(&[&[0.0, 0.0]]), &SamplerConfig::langevin(0.5, 1)).unwrap();
    assert_eq!(t.final_y, m(&[&[1.0, -0.5]]));

    let y0 = m(&[&[0.3, 4.0]]);
    let t = langevin_run(&constant(&[2.0, -1.0]), None, &y0, &SamplerConfig::langevin(0.5, 0)).unwrap();
    assert_eq!(t.iterates, vec![(0, y0.clone())]);
    assert_eq!(t.final_y, y0);
}

#[test]
fn langevin_contracts_gaussian_geometrically() {
    let src = ScoreSource::analytic(QuadraticEnergy::standard(2)).unwrap();
    let y0 = m(&[&[3.0, -4.0]]);
    let t = langevin_run(&src, None, &y0, &SamplerConfig::langevin(0.1, 40)).unwrap();
    for (n, y) in &t.iterates {
        let want = 0.9f64.powi(*n as i32) * 5.0;
        assert!((y.sq_norm().sqrt() - want).abs() <= 1e-12 * want.max(1.0), "step {n}");
    }
}

#[test]
fn quadratic_energy_convergence_regimes() {
    let mu = vec![1.0, -2.0];
    let src = ScoreSource::analytic(QuadraticEnergy::standard(2).centered(mu.clone())).unwrap();
    let y0 = m(&[&[4.0, 3.0]]);
    let dist = |y: &Tensor| ((y.at(0, 0) - mu[0]).powi(2) + (y.at(0, 1) - mu[1]).powi(2)).sqrt();
    let t = langevin_run(&src, None, &y0, &SamplerConfig::langevin(0.3, 30)).unwrap();
    for w in t.iterates.windows(2) {
        assert!(dist(&w[1].1) < dist(&w[0].1));
    }
    let t = langevin_run(&src, None, &y0, &SamplerConfig::langevin(1.0, 1)).unwrap();
    assert_eq!(t.final_y, m(&[&mu]));
}

#[test]
fn denoise_examples() {
    let c = SamplerConfig::denoise(plain(1.0, 1.0, 0.0), 1, 0);
    let t = denoise_run(&constant(&[1.0, 1.0]), None, &m(&[&[0.0, 0.0]]), &c).unwrap();
    assert_eq!(t.final_y, m(&[&[1.0, 1.0]]));

    let c = SamplerConfig::denoise(plain(4.0, 0.0, 0.0), 1, 0);
    let t = denoise_run(&constant(&[7.0, 7.0]), None, &m(&[&[2.0, 2.0]]), &c).unwrap();
    assert_eq!(t.final_y, m(&[&[1.0, 1.0]]));
}

#[test]
fn denoise_reduces_to_langevin_bit_for_bit() {
    let src = mlp_energy(3);
    let y0 = SyntheticDistribution::gaussian(vec![0.0, 0.0], 2.0).unwrap().sample(64, 1).unwrap();
    let rho = 0.05;
    let lang = langevin_run(&src, None, &y0, &SamplerConfig::langevin(rho, 50)).unwrap();
    let den = denoise_run(&src, None, &y0, &SamplerConfig::denoise(plain(1.0, rho, 0.0), 50, 9)).unwrap();
    assert_eq!(lang, den);
    for ((_, a), (_, b)) in lang.iterates.iter().zip(&den.iterates) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn one_step_examples() {
    let y = m(&[&[0.0, 0.0]]);
    assert_eq!(one_step(&constant(&[3.0, 4.0]), None, &y).unwrap(), m(&[&[3.0, 4.0]]));
    let yn = m(&[&[0.5, -1.0], &[2.0, 2.0]]);
    assert_eq!(one_step(&constant(&[0.0, 0.0]), None, &yn).unwrap(), yn);

    let yp = m(&[&[1.0, 2.0], &[-3.0, 0.25]]);
    let perfect = ScoreSource::predictive(AffineScore::displacement(2)).unwrap();
    assert_eq!(one_step(&perfect, Some(&yp), &yn).unwrap(), yp);
}

#[test]
fn one_step_is_a_unit_langevin_step() {
    let src = mlp_energy(8);
    let y = SyntheticDistribution::gaussian(vec![0.5, 0.0], 1.0).unwrap().sample(20, 2).unwrap();
    let a = one_step(&src, None, &y).unwrap();
    let b = langevin_run(&src, None, &y, &SamplerConfig::langevin(1.0, 1)).unwrap().final_y;
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-15);
    }
}

#[test]
fn denoise_is_seeded_per_chain() {
    let src = mlp_energy(1);
    let y0 = Tensor::zeros(vec![3, 2]);
    let cfg = SamplerConfig::denoise(plain(1.1, 0.05, 0.3), 20, 42);
    let a = denoise_run(&src, None, &y0, &cfg).unwrap();
    assert_eq!(a, denoise_run(&src, None, &y0, &cfg).unwrap());
    let other = denoise_run(&src, None, &y0, &SamplerConfig { seed: 43, ..cfg.clone() }).unwrap();
    assert_ne!(a, other);
    // chain 1 of seed 42 equals chain 0 of seed 43
    let one = denoise_run(&src, None, &Tensor::zeros(vec![1, 2]), &SamplerConfig { seed: 43, ..cfg }).unwrap();
    assert_eq!(a.final_y.row(1), one.final_y.row(0));
}

#[test]
fn trajectory_recording() {
    let src = constant(&[1.0, 0.0]);
    let y0 = m(&[&[0.0, 0.0]]);
    let cfg = SamplerConfig {
        record_every: 3,
        ..SamplerConfig::langevin(0.1, 10)
    };
    let t = langevin_run(&src, None, &y0, &cfg).unwrap();
    assert_eq!(t.iterates.len(), 10 / 3 + 1);
    assert_eq!(t.iterates[0].1, y0);
    assert_eq!(t.score_norms, vec![1.0; 10]);
    let cfg = SamplerConfig {
        record_every: 5,
        ..cfg
    };
    let t = langevin_run(&src, None, &y0, &cfg).unwrap();
    assert_eq!(t.iterates.iter().map(|i| i.0).collect::<Vec<_>>(), vec![0, 5, 10]);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    t.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,dim_0,dim_1,score_norm"));
    assert_eq!(lines.next(), Some("0,0,0,1"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn divergence_is_reported_with_step() {
    // an anti-restoring field: Y grows by a factor 1 + rho each step
    let src = ScoreSource::predictive(AffineScore::linear(m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap()).unwrap();
    let err = langevin_run(&src, None, &m(&[&[1.0, 1.0]]), &SamplerConfig::langevin(1.0, 100)).unwrap_err();
    assert!(err.is_numerical());
    match err {
        Error::Diverged { step, .. } => assert_eq!(step, 20),
        e => panic!("{e}"),
    }
}

#[test]
fn config_validation() {
    let short = SamplerConfig::denoise(Schedule::PerStep(vec![StepParams { alpha: 1.0, beta: 0.1, sigma: 0.0 }]), 2, 0);
    assert!(matches!(short.validate(), Err(Error::Config(_))));
    assert!(SamplerConfig::denoise(plain(0.0, 0.1, 0.0), 1, 0).validate().is_err());
    assert!(SamplerConfig::denoise(plain(1.0, 0.1, -1.0), 1, 0).validate().is_err());
    assert_eq!("one-step".parse::<Method>().unwrap(), Method::OneStep);
    let json = serde_json::to_string(&SamplerConfig::denoise(plain(1.0, 0.2, 0.1), 3, 1)).unwrap();
    let back: SamplerConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back.schedule, Some(plain(1.0, 0.2, 0.1)));
}
