use exittails::estimators::{ks_two_sample, TailEstimate, KS_CRIT_1};
use exittails::linear_exact::{self, exact_marginal, sample_marginal};
use exittails::rng::derive_seed;
use exittails::sde_sim::{self, simulate_exit_y, LinearizedSetting, SimOptions, SimTarget, Threshold};
use exittails::theory::{main_tail_prediction, psi0, Branch};
use exittails::{build_default_map, DriftSpec, Job, LinearModel, Model, Noise, SigmaSpec, YBackend};

#[test]
fn y_backends_agree_in_law() {
    let poly = DriftSpec::CustomPolynomial { coefficients: vec![0.0, 1.0, 0.5] };
    let models = [
        Model::cubic(-0.5, 0.5).unwrap(),
        Model::sine(-1.0, 1.0).unwrap(),
        Model::from_spec(&poly, &SigmaSpec::Affine { c0: 1.0, c1: 0.4 }, -0.5, 0.5).unwrap(),
    ];
    let noise = Noise::new(0.05).unwrap();
    let opts = SimOptions::new(1e-3, vec![], 50.0);
    let n = 10_000u64;
    for model in models {
        let map = build_default_map(&model).unwrap();
        let setting = LinearizedSetting::new(model.clone(), map);
        let taus = |backend: YBackend, master: u64| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    simulate_exit_y(&setting, &noise, 0.0, 0.75, backend, derive_seed(master, i), i, &opts).unwrap().tau
                })
                .collect()
        };
        let a = taus(YBackend::ViaX, 1);
        let b = taus(YBackend::Direct, 2);
        let ks = ks_two_sample(&a, &b).unwrap();
        let critical = KS_CRIT_1 * (2.0 / n as f64).sqrt();
        assert!(ks.statistic < critical, "{}: D = {} vs {critical}", model.name(), ks.statistic);
    }
}

fn linear_tail(m: &LinearModel, n: u64, dt: f64, seed: u64) -> TailEstimate {
    let te = m.t_eps().unwrap();
    let job = Job {
        target: SimTarget::Linear { model: *m },
        thresholds: vec![Threshold { label: "t_eps".into(), time: te }],
        dt,
        max_time: te + dt,
        n_paths: n,
        master_seed: seed,
        brownian_substeps: 1,
        track_martingale: false,
    };
    let out = sde_sim::run_batch(&job, 1).unwrap();
    TailEstimate::from_counts(n, out.summary.thresholds[0].survivors, "t_eps").unwrap()
}

#[test]
fn linear_tail_matches_asymptotics_at_small_eps() {
    // At eps = 0.05 the absorbing boundary sits only eps^(1-beta) ~ 0.47
    // standard deviations of the noise away, which depletes the tail by
    // ~15%; at eps = 1e-3 that factor is ~0.18. c(eps) = 1/log(1/eps)^2.
    let eps: f64 = 1e-3;
    let c_eps = 1.0 / eps.ln().powi(2);
    for alpha in [1.3, 1.5] {
        for z in [0.0, 0.5, 1.0] {
            let m = LinearModel::new(1.0, 1.0, eps, z, 0.75, alpha, 0.0).unwrap().with_c_eps(c_eps);
            let est = linear_tail(&m, 40_000, 1e-3, 17);
            let ratio = est.p_hat / linear_exact::tail_theory(&m);
            assert!((0.85..=1.15).contains(&ratio), "alpha={alpha} z={z}: ratio {ratio}");
        }
    }
}

#[test]
fn exact_sampler_marginal_law() {
    let m = LinearModel::new(1.0, 1.0, 0.05, 1.0, 0.75, 1.5, 0.0).unwrap();
    let t = 2.0;
    let n = 100_000u64;
    let xs: Vec<f64> = (0..n).map(|i| sample_marginal(&m, t, derive_seed(23, i), 1e-2).unwrap()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let g = exact_marginal(&m, t);
    let se_mean = (g.variance / n as f64).sqrt();
    let se_var = g.variance * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((mean - g.mean).abs() < 4.0 * se_mean, "mean {mean} vs {}", g.mean);
    assert!((var - g.variance).abs() < 4.0 * se_var, "var {var} vs {}", g.variance);
}

#[test]
fn gaussian_density_at_origin() {
    let eps: f64 = 1e-3;
    for (alpha, c, z) in [(1.5, 0.0, 0.0), (1.3, 0.5, 1.0), (2.0, -0.3, -0.7)] {
        let level = |m: &LinearModel| {
            eps.powf(m.alpha - m.beta - 1.0) * (m.lambda * m.c).exp() * psi0(m.z, m.lambda, m.sigma0)
        };
        // c(eps) = 1/log(1/eps)^3 keeps e^{-lambda c(eps)} within 0.5% of 1
        let m = LinearModel::new(1.0, 1.0, eps, z, 0.75, alpha, c).unwrap().with_c_eps(1.0 / (-eps.ln()).powi(3));
        let ratio = exact_marginal(&m, m.t_eps().unwrap()).density(0.0) / level(&m);
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
        // with the default c(eps) the only finite-eps factor left is e^{-lambda c(eps)}
        let m = LinearModel::new(1.0, 1.0, eps, z, 0.75, alpha, c).unwrap();
        let ratio = exact_marginal(&m, m.t_eps().unwrap()).density(0.0) / level(&m);
        assert!((ratio * m.c_eps.exp() - 1.0).abs() < 1e-3, "{ratio}");
    }
}

#[test]
fn halving_dt_moves_tail_less_than_one_standard_error() {
    let model = Model::cubic(-0.5, 0.5).unwrap();
    let noise = Noise::new(0.05).unwrap();
    let th = 1.5 * noise.log_inv();
    let n = 100_000;
    let job = |dt: f64, substeps: u32| Job {
        target: SimTarget::X { model: model.clone(), noise, x0: 0.0 },
        thresholds: vec![Threshold { label: "threshold".into(), time: th }],
        dt,
        max_time: th + dt,
        n_paths: n,
        master_seed: 29,
        brownian_substeps: substeps,
        track_martingale: false,
    };
    let coarse = sde_sim::run_batch(&job(2e-3, 2), 1).unwrap();
    let fine = sde_sim::run_batch(&job(1e-3, 1), 1).unwrap();
    let p = |s: &exittails::BatchSummary| TailEstimate::from_counts(n, s.thresholds[0].survivors, "t").unwrap();
    let (pc, pf) = (p(&coarse.summary), p(&fine.summary));
    assert!((pc.p_hat - pf.p_hat).abs() < pf.std_error(), "{} vs {}", pc.p_hat, pf.p_hat);
}

#[test]
fn single_precision_pipeline() {
    let model = exittails::model::VectorFieldModel::<f32>::cubic(-0.5, 0.5).unwrap();
    let map = exittails::build_map(&model, 257, 1e-5).unwrap();
    let noise = exittails::model::NoiseLevel::<f32>::new(0.05).unwrap();
    let p32 = main_tail_prediction(&map, &model, &noise, 0.0, 1.5, 0.0, Branch::Total).unwrap().value;
    assert!((p32 as f64 - 0.145673).abs() < 1e-4, "{p32}");
    let opts = SimOptions::<f32>::new(1e-3, vec![1.0], 30.0);
    let rec = sde_sim::simulate_exit_x(&model, &noise, 0.0, 3, 0, &opts).unwrap();
    assert!(rec.tau > 0.0 && (rec.x_exit.abs() - 0.5).abs() < 1e-6);
    let lm = exittails::linear_exact::LinearModel::<f32>::new(1.0, 1.0, 0.05, 0.0, 0.75, 1.5, 0.0).unwrap();
    let r = exittails::linear_exact::sample_exit(&lm, 5, 1e-3).unwrap();
    assert!(r.tau > 0.0);
}
