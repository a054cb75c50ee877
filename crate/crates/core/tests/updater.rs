use ssmup::mcmc::{run_mcmc, McmcConfig, TwoStageProposal};
use ssmup::models::{make_lgssm, make_occupancy, simulate_covariates, LgssmConfig, OccupancyConfig};
use ssmup::params::ThetaSplit;
use ssmup::smc::{ess, FilterKind};
use ssmup::ssm::{joint_log_density, latent_log_prior, simulate_dataset, StateSpaceModel};
use ssmup::updater::{propose_two_stage, replicate_history, update_row, update_run, PosteriorArchive, UpdateConfig};
use ssmup::{Dataset, LatentTrajectory, ParamVector, RngStream};

/// Archive of `n` draws scattered around the truth, with prior-simulated paths.
fn lgssm_archive(n: usize, t: usize, c: f64, seed: u64) -> (ssmup::models::Lgssm, PosteriorArchive, Dataset) {
    let cfg = LgssmConfig {
        a: 0.5,
        c,
        ..Default::default()
    };
    let model = make_lgssm(&cfg);
    let (_, data) = simulate_dataset(&model, &cfg.truth(), t + 5, seed).unwrap();
    let reduced = data.truncated(t);
    let mut rng = RngStream::new(seed + 1);
    let mut theta = Vec::new();
    let mut latents = Vec::new();
    for j in 0..n {
        let th = vec![0.5 + 0.05 * rng.normal(), c];
        let (x, _) = simulate_dataset(&model, &ParamVector::from_pairs(&[("a", th[0]), ("c", th[1])]), t, 1000 + j as u64).unwrap();
        theta.push(th);
        latents.push(x.values().to_vec());
    }
    let archive = PosteriorArchive::new("lgssm", vec!["a".into(), "c".into()], theta, 1, latents, reduced, Some(seed)).unwrap();
    (model, archive, data)
}

#[test]
fn replicated_history_properties() {
    let (model, archive, _) = lgssm_archive(4, 8, 1.0, 1);
    let theta = ParamVector::from_pairs(&[("a", archive.theta[2][0]), ("c", archive.theta[2][1])]);
    let one = replicate_history(&model, &archive, 2, &theta, 1).unwrap();
    let path: Vec<f64> = one.ensembles.iter().map(|e| e.states[0]).collect();
    assert_eq!(path, archive.latents[2]);
    let many = replicate_history(&model, &archive, 2, &theta, 37).unwrap();
    for e in &many.ensembles {
        assert_eq!(ess(&e.log_weights).unwrap(), 37.0);
        assert!(e.states.iter().all(|v| *v == e.states[0]));
    }
    let traj = LatentTrajectory::new(1, archive.latents[2].clone()).unwrap();
    let p = model.prepare(&theta).unwrap();
    let expected = joint_log_density(&model, &traj, &archive.data, &theta).unwrap() - latent_log_prior(&model, &p, &traj);
    let last = many.ensembles.last().unwrap().log_weights[0];
    assert!((last - expected).abs() < 1e-10, "{last} vs {expected}");
    assert!(replicate_history(&model, &archive, 4, &theta, 3).is_err());
}

#[test]
fn two_stage_proposal_moments() {
    let model = make_lgssm(&LgssmConfig::default());
    let spec = model.param_spec();
    let theta_r = ParamVector::from_pairs(&[("a", 0.3), ("c", -1.2)]);
    let tiny = TwoStageProposal::new(&spec.split(), 1e-12, 1e-12, None, None).unwrap();
    let mut rng = RngStream::new(1);
    let (star, h) = propose_two_stage(spec, &theta_r, &tiny, &mut rng).unwrap();
    assert_eq!(h, 0.0);
    for (a, b) in star.values().iter().zip(theta_r.values()) {
        assert!((a - b).abs() < 1e-10);
    }
    let prop = TwoStageProposal::new(&spec.split(), 0.1, 0.1, None, None).unwrap();
    let n = 100_000;
    let mut diffs = vec![Vec::with_capacity(n); 2];
    for _ in 0..n {
        let (star, _) = propose_two_stage(spec, &theta_r, &prop, &mut rng).unwrap();
        for k in 0..2 {
            diffs[k].push(star.values()[k] - theta_r.values()[k]);
        }
    }
    for d in &diffs {
        let sd = (d.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        // standard error of a sample sd is about sd / sqrt(2n)
        let se = 0.1 / (2.0 * n as f64).sqrt();
        assert!((sd - 0.1).abs() < 3.0 * se, "{sd}");
    }
    assert_eq!(ThetaSplit::single_block(2), spec.split());
}

#[test]
fn empty_new_data_is_a_prior_ratio_step() {
    let (model, archive, _) = lgssm_archive(50, 10, 1.0, 2);
    let empty = Dataset::empty(1);
    let cfg = UpdateConfig {
        particles: 10,
        delta_main: 0.4,
        ..Default::default()
    };
    let up = update_run(&archive, &empty, &model, &cfg).unwrap();
    let spec = model.param_spec();
    assert_eq!(up.t, up.t_new);
    for j in 0..up.len() {
        assert!(up.latent_new[j].is_empty());
        let lp = |v: &[f64]| spec.log_prior_values(v);
        let expected = (lp(&up.theta_star[j]) - lp(&archive.theta[j])).exp().min(1.0);
        assert!((up.accept_prob[j] - expected).abs() < 1e-12);
    }
    let frozen = UpdateConfig {
        particles: 10,
        delta_main: 1e-12,
        ..Default::default()
    };
    let up = update_run(&archive, &empty, &model, &frozen).unwrap();
    for (u, r) in up.theta_upd.iter().zip(&archive.theta) {
        for (a, b) in u.iter().zip(r) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn rows_are_reconstructible_and_deterministic() {
    let (model, archive, data) = lgssm_archive(40, 10, 1.0, 3);
    let new = data.slice(10, 15);
    for filter in [FilterKind::Bootstrap, FilterKind::Auxiliary] {
        let cfg = UpdateConfig {
            particles: 30,
            filter,
            delta_main: 0.3,
            seed: 9,
            ..Default::default()
        };
        let mut a = update_run(&archive, &new, &model, &cfg).unwrap();
        let mut b = update_run(&archive, &new, &model, &cfg).unwrap();
        a.wall_time = 0.0;
        b.wall_time = 0.0;
        assert_eq!(a, b);
        assert!(a.accepted.iter().any(|x| *x) && a.accepted.iter().any(|x| !*x));
        for j in 0..a.len() {
            let expected = if a.accepted[j] { &a.theta_star[j] } else { &archive.theta[j] };
            assert_eq!(&a.theta_upd[j], expected);
            assert_eq!(a.latent_new[j].len(), 5);
        }
    }
}

#[test]
fn permuting_rows_permutes_results() {
    let (model, archive, data) = lgssm_archive(12, 6, 1.0, 4);
    let full = data.truncated(9);
    let cfg = UpdateConfig {
        particles: 20,
        ..Default::default()
    };
    let perm = [5usize, 0, 11, 3, 7, 1, 10, 2, 9, 4, 8, 6];
    let mut permuted = archive.clone();
    permuted.theta = perm.iter().map(|&i| archive.theta[i].clone()).collect();
    permuted.latents = perm.iter().map(|&i| archive.latents[i].clone()).collect();
    for (k, &i) in perm.iter().enumerate() {
        let direct = update_row(&model, &archive, &full, i, i as u64, &cfg).unwrap();
        let moved = update_row(&model, &permuted, &full, k, i as u64, &cfg).unwrap();
        assert_eq!(direct, moved);
    }
}

#[test]
fn rejected_rows_are_forward_simulations_when_observations_are_flat() {
    // c = 0 makes every observation density flat in the state
    let (model, archive, data) = lgssm_archive(2000, 5, 0.0, 5);
    let new = data.slice(5, 6);
    let cfg = UpdateConfig {
        particles: 5,
        delta_main: 2.0,
        ..Default::default()
    };
    let up = update_run(&archive, &new, &model, &cfg).unwrap();
    let resid: Vec<f64> = (0..up.len())
        .filter(|&j| !up.accepted[j])
        .map(|j| up.latent_new[j][0] - archive.theta[j][0] * archive.latents[j][4])
        .collect();
    assert!(resid.len() > 500, "only {} rejections", resid.len());
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var {var}");
}

#[test]
fn archive_must_match_model() {
    let (_, archive, data) = lgssm_archive(3, 5, 1.0, 6);
    let cov = simulate_covariates(3, 2, 6, 1);
    let occ = make_occupancy(&OccupancyConfig::new(cov)).unwrap();
    assert!(update_run(&archive, &data.slice(5, 6), &occ, &UpdateConfig::default()).is_err());
}

#[test]
fn occupancy_update_respects_detections() {
    let (sites, visits, years, t) = (8, 3, 6, 4);
    let cov = simulate_covariates(sites, visits, years, 2);
    let model = make_occupancy(&OccupancyConfig::new(cov)).unwrap();
    let truth = OccupancyConfig::simulation_parameters(3);
    let (_, data) = simulate_dataset(&model, &truth, years, 4).unwrap();
    let reduced = data.truncated(t);
    let mc = McmcConfig {
        iterations: 400,
        burn_in: 200,
        thin: 10,
        chains: 2,
        delta_main: 0.1,
        delta_hyper: 0.1,
        seed: 5,
        ..Default::default()
    };
    let chains = run_mcmc(&model, &reduced, &mc).unwrap();
    let archive = PosteriorArchive::from_chains(&chains, model.model_id(), &reduced, Some(5)).unwrap();
    assert_eq!(archive.len(), 40);
    for filter in [FilterKind::Bootstrap, FilterKind::Auxiliary] {
        let cfg = UpdateConfig {
            particles: 10,
            filter,
            delta_main: 0.1,
            delta_hyper: 0.1,
            ..Default::default()
        };
        let up = update_run(&archive, &data.slice(t, years), &model, &cfg).unwrap();
        for path in &up.latent_new {
            assert_eq!(path.len(), (years - t) * sites);
            for (s, row) in path.chunks(sites).enumerate() {
                for (i, z) in row.iter().enumerate() {
                    assert!(*z == 0.0 || *z == 1.0);
                    if model.fixed_coordinate(data.row(t + s), t + s, i).is_some() {
                        assert_eq!(*z, 1.0);
                    }
                }
            }
        }
    }
}
