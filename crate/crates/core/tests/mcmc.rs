use ssmup::dataset::Obs;
use ssmup::mcmc::{run_mcmc, run_pmmh, McmcConfig};
use ssmup::models::{make_lgssm, Lgssm, LgssmConfig, LgssmParams};
use ssmup::oracle::{kalman_smoother, linspace, GridPrior, LgssmOracle};
use ssmup::smc::{FilterConfig, FilterKind};
use ssmup::ssm::{simulate_dataset, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use ssmup::{Block, DistSpec, ParamDef, ParamSpec, ParamVector, Prior, Result, RngStream};

/// The linear Gaussian model with both parameters held fixed.
struct FixedLgssm {
    inner: Lgssm,
    theta: ParamVector,
    spec: ParamSpec,
}

impl StateSpaceModel for FixedLgssm {
    type Prepared = LgssmParams;
    fn model_id(&self) -> &str {
        "lgssm-fixed"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }
    fn prepare(&self, _theta: &ParamVector) -> Result<LgssmParams> {
        self.inner.prepare(&self.theta)
    }
    fn init_sample(&self, p: &LgssmParams, rng: &mut RngStream, out: &mut [f64]) {
        self.inner.init_sample(p, rng, out)
    }
    fn init_logpdf(&self, p: &LgssmParams, x: &[f64]) -> f64 {
        self.inner.init_logpdf(p, x)
    }
    fn trans_sample(&self, p: &LgssmParams, prev: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]) {
        self.inner.trans_sample(p, prev, t, rng, out)
    }
    fn trans_logpdf(&self, p: &LgssmParams, x: &[f64], prev: &[f64], t: usize) -> f64 {
        self.inner.trans_logpdf(p, x, prev, t)
    }
    fn obs_sample(&self, p: &LgssmParams, x: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]) {
        self.inner.obs_sample(p, x, t, rng, out)
    }
    fn obs_logpdf(&self, p: &LgssmParams, y: &[Obs], x: &[f64], t: usize) -> f64 {
        self.inner.obs_logpdf(p, y, x, t)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of a chain mean from 50 batch means.
fn batch_se(v: &[f64]) -> f64 {
    let b = 50;
    let size = v.len() / b;
    let means: Vec<f64> = v.chunks(size).take(b).map(mean).collect();
    let m = mean(&means);
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64 / b as f64).sqrt()
}

#[test]
fn bookkeeping_rows() {
    let model = make_lgssm(&LgssmConfig::default());
    let (_, data) = simulate_dataset(&model, &LgssmConfig::default().truth(), 6, 1).unwrap();
    let cfg = McmcConfig {
        iterations: 5,
        burn_in: 0,
        thin: 1,
        chains: 2,
        ..Default::default()
    };
    let chains = run_mcmc(&model, &data, &cfg).unwrap();
    assert_eq!(chains.len(), 2);
    for c in &chains {
        assert_eq!(c.draws.len(), 5);
        assert_eq!(c.latent_draws.len(), 5);
        assert!(c.latent_draws.iter().all(|r| r.len() == 6));
        for rate in [c.acceptance.main, c.acceptance.latent].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&rate));
        }
    }
    let cfg = McmcConfig {
        iterations: 23,
        burn_in: 3,
        thin: 3,
        chains: 1,
        ..Default::default()
    };
    assert_eq!(run_mcmc(&model, &data, &cfg).unwrap()[0].draws.len(), 6);
    assert_eq!(run_pmmh(&model, &data, &cfg, &FilterConfig::new(FilterKind::Bootstrap, 10)).unwrap()[0].draws.len(), 6);
}

#[test]
fn chains_are_deterministic() {
    let model = make_lgssm(&LgssmConfig::default());
    let (_, data) = simulate_dataset(&model, &LgssmConfig::default().truth(), 8, 2).unwrap();
    let cfg = McmcConfig {
        iterations: 200,
        burn_in: 50,
        chains: 2,
        seed: 44,
        ..Default::default()
    };
    let strip = |mut v: Vec<ssmup::mcmc::Chain>| {
        v.iter_mut().for_each(|c| c.wall_time = 0.0);
        v
    };
    assert_eq!(strip(run_mcmc(&model, &data, &cfg).unwrap()), strip(run_mcmc(&model, &data, &cfg).unwrap()));
    let f = FilterConfig::new(FilterKind::Auxiliary, 20);
    assert_eq!(
        strip(run_pmmh(&model, &data, &cfg, &f).unwrap()),
        strip(run_pmmh(&model, &data, &cfg, &f).unwrap())
    );
}

#[test]
fn latent_only_sampler_matches_smoother() {
    let cfg = LgssmConfig::default();
    let model = FixedLgssm {
        inner: make_lgssm(&cfg),
        theta: cfg.truth(),
        spec: ParamSpec::new(vec![]).unwrap(),
    };
    let (_, data) = simulate_dataset(&model, &cfg.truth(), 10, 3).unwrap();
    let mc = McmcConfig {
        iterations: 40_000,
        burn_in: 1000,
        chains: 1,
        ..Default::default()
    };
    let chain = &run_mcmc(&model, &data, &mc).unwrap()[0];
    assert!(chain.acceptance.main.is_none());
    let sm = kalman_smoother(0.5, 1.0, &data).unwrap();
    for t in 0..10 {
        let xs: Vec<f64> = chain.latent_draws.iter().map(|r| r[t]).collect();
        let (m, se) = (mean(&xs), batch_se(&xs));
        assert!((m - sm.means[t]).abs() < 3.0 * se, "t={t}: {m} vs {} (se {se})", sm.means[t]);
    }
}

fn combined(chains: &[ssmup::mcmc::Chain], name: &str) -> (f64, f64) {
    let per_chain: Vec<(f64, f64)> = chains
        .iter()
        .map(|c| {
            let v = c.column(name).unwrap();
            (mean(&v), batch_se(&v))
        })
        .collect();
    let m = mean(&per_chain.iter().map(|p| p.0).collect::<Vec<_>>());
    let se = per_chain.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / per_chain.len() as f64;
    (m, se)
}

/// The sign of `c` is identified only weakly, so the unconstrained
/// posterior has two modes. The sampler proposes wide moves in `c` to
/// cross between them.
#[test]
fn pmmh_posterior_means_match_grid() {
    let cfg = LgssmConfig::default();
    let model = make_lgssm(&cfg);
    let (_, data) = simulate_dataset(&model, &cfg.truth(), 20, 21).unwrap();
    let prior = DistSpec::Normal { mean: 0.0, sd: 10.0 };
    let grid = LgssmOracle::default()
        .grid_posterior(
            &data,
            &linspace(-2.0, 2.0, 200),
            &linspace(-4.0, 4.0, 200),
            GridPrior::Densities(prior.clone(), prior),
        )
        .unwrap();
    let mc = McmcConfig {
        iterations: 30_000,
        burn_in: 2_000,
        chains: 3,
        delta_main: 1.0,
        cov_main: Some(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0625, 2.25]))),
        seed: 7,
        ..Default::default()
    };
    let chains = run_pmmh(&model, &data, &mc, &FilterConfig::new(FilterKind::Auxiliary, 100)).unwrap();
    for (name, truth) in [("a", grid.mean_a()), ("c", grid.mean_c())] {
        let (m, se) = combined(&chains, name);
        assert!((m - truth).abs() < 3.0 * se, "{name}: {m} vs grid {truth} (se {se})");
    }
}

/// Single-site latent updates cannot cross between the sign modes, so this
/// comparison uses a positive prior on `c`.
#[test]
fn data_augmentation_means_match_grid() {
    let cfg = LgssmConfig::default();
    let prior_a = DistSpec::Normal { mean: 0.0, sd: 10.0 };
    let prior_c = DistSpec::TruncatedNormal {
        mean: 0.0,
        sd: 10.0,
        lower: 0.0,
        upper: f64::INFINITY,
    };
    let spec = ParamSpec::new(vec![
        ParamDef::new("a", Prior::Fixed(prior_a.clone()), Block::Main),
        ParamDef::new("c", Prior::Fixed(prior_c.clone()), Block::Main),
    ])
    .unwrap();
    let model = make_lgssm(&cfg).with_param_spec(spec);
    let (_, data) = simulate_dataset(&model, &cfg.truth(), 20, 21).unwrap();
    let grid = LgssmOracle::default()
        .grid_posterior(
            &data,
            &linspace(-1.5, 2.0, 200),
            &linspace(0.0, 4.0, 200),
            GridPrior::Densities(prior_a, prior_c),
        )
        .unwrap();
    let mc = McmcConfig {
        iterations: 30_000,
        burn_in: 5_000,
        chains: 3,
        delta_main: 0.3,
        seed: 7,
        ..Default::default()
    };
    let chains = run_mcmc(&model, &data, &mc).unwrap();
    for (name, truth) in [("a", grid.mean_a()), ("c", grid.mean_c())] {
        let (m, se) = combined(&chains, name);
        assert!((m - truth).abs() < 3.0 * se, "{name}: {m} vs grid {truth} (se {se})");
    }
}
