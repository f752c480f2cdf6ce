use dgfed_core::accountant::AccountantState;
use dgfed_core::compressor::{clip, ClippedUpdate};
use dgfed_core::fed_sim::pipeline::aggregate_round;
use dgfed_core::fed_sim::*;
use dgfed_core::lattice::LatticeSpec;
use dgfed_core::metrics::comm_cost;
use dgfed_core::rng::{derive_seed, stream, Purpose};
use dgfed_core::Error;
use rand::Rng;

fn logistic(clients: usize, seed: u64) -> Task {
    Task::generate(&TaskSpec::new(TaskKind::LogisticRegression, clients), seed).unwrap()
}

fn dp_config(seed: u64) -> RoundConfig {
    let mut cfg = RoundConfig::new(100, 0.1, 50);
    cfg.clip = 0.2;
    cfg.k = 64;
    cfg.seed = seed;
    cfg.local = LocalTrainerSpec {
        epochs: 1,
        batch_size: 10,
        lr: 1.0,
    };
    cfg
}

#[test]
fn subsample_frequencies() {
    let mut counts = [0u32; 100];
    for r in 0..10_000u64 {
        let s = subsample_clients(100, 0.1, derive_seed(7, Purpose::Round, r, 0)).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for id in s {
            counts[id as usize] += 1;
        }
    }
    for c in counts {
        assert!((900..=1100).contains(&c), "frequency {}", f64::from(c) / 1e4);
    }
    assert_eq!(subsample_clients(7, 1.0, 3).unwrap(), (0..7).collect::<Vec<_>>());
    assert_eq!(subsample_clients(100, 0.1, 3).unwrap(), subsample_clients(100, 0.1, 3).unwrap());
    assert!(subsample_clients(9, 0.1, 3).is_err());
    assert_eq!(subsample_clients(30, 0.1, 3).unwrap().len(), 3);
}

#[test]
fn zero_rounds_return_initial_model() {
    let task = logistic(10, 1);
    let cfg = RoundConfig::new(10, 0.5, 0);
    let out = run_training(&task, &cfg, &Serial).unwrap();
    assert_eq!(out.model.t, 0);
    assert_eq!(out.model.w, task.init_params(derive_seed(0, Purpose::Init, 0, 0)));
    assert!(out.transcripts.is_empty());
    assert_eq!(out.accountant.epsilon(1e-5).unwrap().0, 0.0);
}

#[test]
fn noiseless_fine_grid_matches_plain_averaging() {
    let task = logistic(8, 2);
    let mut cfg = RoundConfig::new(8, 1.0, 5);
    cfg.k = 1 << 16 | 1;
    let out = run_training(&task, &cfg, &Serial).unwrap();
    let spec = out.resolved.protocol.spec;
    let tol = spec.step() * (out.resolved.protocol.d_pad as f64).sqrt();
    for t in &out.transcripts {
        assert_eq!(t.selected.len(), 8);
        assert!(t.squared_error().sqrt() <= tol);
        assert!(t.nu.iter().all(|&z| z == 0));
    }
}

#[test]
fn zero_updates_leave_the_model_unchanged() {
    for k in [3u32, 4, 17] {
        let spec = LatticeSpec::new(0.5, k, 101, 5).unwrap();
        let protocol = Protocol::new(spec, 0.0, 20, AggregationPath::Masked).unwrap();
        let zeros: Vec<ClippedUpdate> = (0..5).map(|_| clip(&[0.0; 20], 1.0).unwrap()).collect();
        let (_, _, rec) = aggregate_round(&protocol, 11, &[0, 1, 2, 3, 4], &zeros).unwrap();
        if k % 2 == 1 {
            assert!(rec.mean.iter().all(|&x| x == 0.0));
        } else {
            // even k has no level at zero; the mean is still unbiased
            assert!(rec.mean.iter().all(|x| x.abs() <= spec.step() * 2.0));
        }
    }
}

#[test]
fn masked_and_plain_paths_agree_bit_for_bit() {
    let task = logistic(20, 3);
    let mut cfg = dp_config(9);
    cfg.clients = 20;
    cfg.gamma = 0.25;
    cfg.rounds = 6;
    cfg.noise = NoiseLevel::Multiplier(1.0);
    let masked = run_training(&task, &cfg, &Serial).unwrap();
    cfg.path = AggregationPath::Plain;
    let plain = run_training(&task, &cfg, &Serial).unwrap();
    assert_eq!(masked.model, plain.model);
    for (a, b) in masked.transcripts.iter().zip(&plain.transcripts) {
        assert_eq!(a.aggregate, b.aggregate);
        assert_eq!(a.nu, b.nu);
        assert_ne!(a.payloads, b.payloads);
    }
}

#[test]
fn training_is_deterministic() {
    let task = logistic(20, 4);
    let mut cfg = dp_config(5);
    cfg.clients = 20;
    cfg.gamma = 0.2;
    cfg.rounds = 4;
    cfg.noise = NoiseLevel::Multiplier(0.8);
    assert_eq!(run_training(&task, &cfg, &Serial).unwrap(), run_training(&task, &cfg, &Serial).unwrap());
    cfg.seed = 6;
    let other = run_training(&task, &cfg, &Serial).unwrap();
    assert_ne!(other.model, run_training(&task, &{ let mut c = cfg.clone(); c.seed = 5; c }, &Serial).unwrap().model);
}

#[test]
fn byte_counts_match_comm_cost() {
    let task = logistic(30, 5);
    let mut rng = stream(12, Purpose::Trial, 0, 0);
    for _ in 0..10 {
        let mut cfg = RoundConfig::new(30, rng.random_range(0.05..=1.0), 2);
        cfg.k = rng.random_range(2..200);
        cfg.noise = NoiseLevel::Multiplier(rng.random_range(0.0..3.0));
        cfg.seed = rng.random();
        let out = run_training(&task, &cfg, &Serial).unwrap();
        let spec = out.resolved.protocol.spec;
        let m = u64::from(out.resolved.participants);
        let cost = comm_cost(m, out.resolved.protocol.d_pad, spec.q() * spec.fine_scale() as u64).unwrap();
        for t in &out.transcripts {
            assert!(t.bytes_per_client.iter().all(|&b| b == cost.payload_bytes_per_client()));
        }
    }
}

#[test]
fn aggregation_is_unbiased_without_noise() {
    let (m, dim) = (4u32, 12usize);
    let spec = LatticeSpec::new(0.8, 5, 101, m).unwrap();
    let protocol = Protocol::new(spec, 0.0, dim, AggregationPath::Masked).unwrap();
    let mut rng = stream(3, Purpose::Trial, 1, 0);
    let updates: Vec<ClippedUpdate> = (0..m)
        .map(|_| clip(&(0..dim).map(|_| rng.random_range(-0.4..0.4)).collect::<Vec<_>>(), 1.0).unwrap())
        .collect();
    let ids: Vec<u32> = (0..m).collect();
    let trials = 4000;
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut target = vec![0.0; dim];
    for u in &updates {
        target.iter_mut().zip(u.values()).for_each(|(a, b)| *a += b / f64::from(m));
    }
    for t in 0..trials {
        let (_, _, rec) = aggregate_round(&protocol, derive_seed(4, Purpose::Trial, t, 0), &ids, &updates).unwrap();
        for (j, x) in rec.mean.iter().enumerate() {
            sum[j] += x;
            sum_sq[j] += x * x;
        }
    }
    let n = trials as f64;
    for j in 0..dim {
        let mean = sum[j] / n;
        let se = ((sum_sq[j] / n - mean * mean) / (n - 1.0)).sqrt();
        assert!((mean - target[j]).abs() <= 4.0 * se, "coordinate {j}: {mean} vs {}", target[j]);
    }
}

#[test]
fn label_sorted_partition_trains() {
    let mut spec = TaskSpec::new(TaskKind::LogisticRegression, 20);
    spec.partition = Partition::LabelSorted;
    let task = Task::generate(&spec, 6).unwrap();
    let mut cfg = dp_config(1);
    cfg.clients = 20;
    cfg.gamma = 0.5;
    cfg.rounds = 10;
    let out = run_training(&task, &cfg, &Serial).unwrap();
    assert_eq!(out.metrics.len(), 10);
    assert!(out.model.w.iter().all(|x| x.is_finite()));
}

#[test]
fn other_tasks_run() {
    let mlp = Task::generate(&TaskSpec::new(TaskKind::TinyMlp, 10), 1).unwrap();
    let mut cfg = RoundConfig::new(10, 0.5, 30);
    cfg.local = LocalTrainerSpec {
        epochs: 2,
        batch_size: 10,
        lr: 0.3,
    };
    let out = run_training(&mlp, &cfg, &Serial).unwrap();
    assert!(out.metrics.last().unwrap().loss < out.metrics[0].loss);

    let lin = Task::generate(&TaskSpec::new(TaskKind::LinearRegression, 10), 1).unwrap();
    let out = run_training(&lin, &cfg, &Serial).unwrap();
    assert!(out.metrics.last().unwrap().accuracy.is_none());
    assert!(out.metrics.last().unwrap().loss < 0.1);
}

#[test]
fn config_validation() {
    let task = logistic(10, 1);
    let mut cfg = RoundConfig::new(10, 0.05, 1);
    assert!(run_training(&task, &cfg, &Serial).is_err());
    cfg.gamma = 0.5;
    cfg.q = Some(8);
    assert!(cfg.resolve(20).is_err());
    cfg.q = Some(3);
    cfg.noise = NoiseLevel::Sigma(0.5);
    let err = cfg.resolve(20).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(ref s) if s.contains("overflow")), "{err}");
    cfg.allow_overflow_risk = true;
    assert!(cfg.resolve(20).is_ok());
}

#[test]
fn epsilon_decreases_and_accuracy_does_not_increase_with_noise() {
    let sigmas = [0.0, 0.5, 2.0];
    let mut eps_prev = f64::INFINITY;
    let mut acc_prev = f64::INFINITY;
    for &z in &sigmas {
        let mut acc = 0.0;
        let mut eps = 0.0;
        for seed in 0..5 {
            let task = logistic(100, seed);
            let mut cfg = dp_config(seed);
            cfg.rounds = 30;
            cfg.noise = NoiseLevel::Multiplier(z);
            let out = run_training(&task, &cfg, &Serial).unwrap();
            acc += out.metrics.last().unwrap().accuracy.unwrap() / 5.0;
            eps = out.accountant.epsilon(1e-5).unwrap().0;
        }
        assert!(eps < eps_prev || (z == 0.0 && eps.is_infinite()));
        assert!(acc <= acc_prev + 0.01, "accuracy rose from {acc_prev} to {acc} at multiplier {z}");
        eps_prev = eps;
        acc_prev = acc;
    }
    let lo = AccountantState::new(2.0, 1.0, 0.1).unwrap();
    let hi = AccountantState::new(3.0, 1.0, 0.1).unwrap();
    let at = |mut s: AccountantState| {
        s.record_rounds(50);
        s.epsilon(1e-5).unwrap().0
    };
    assert!(at(hi) < at(lo));
}

#[test]
fn convergence_report_on_quadratic() {
    let task = Task::generate(&TaskSpec::new(TaskKind::LinearRegression, 10), 2).unwrap();
    let l = task.smoothness_bound().unwrap();
    let lr = 1.0 / l;
    let run = |rounds: u64, noise: f64| {
        let mut cfg = RoundConfig::new(10, 1.0, rounds);
        cfg.clip = 1.0;
        cfg.k = 65_537;
        cfg.noise = NoiseLevel::Multiplier(noise);
        cfg.local = LocalTrainerSpec::single_step(lr);
        (run_training(&task, &cfg, &Serial).unwrap(), cfg)
    };
    let w0 = task.init_params(0);
    let f0 = task.loss(&w0, task.train());
    let inputs = SmoothnessInputs {
        smoothness: l,
        rho: 1.0,
        rho_f: f0,
    };
    let (out, cfg) = run(40, 0.0);
    let report = convergence_report(&out.transcripts, &task, &cfg.local, inputs).unwrap();
    // with full participation and no noise g equals ∇F, leaving only quantization
    assert!(report.lambda_sq < 1e-4, "{}", report.lambda_sq);
    assert!(report.mean_grad_norm_sq <= report.bound);

    let (noisy, cfg) = run(40, 0.05);
    let noisy_report = convergence_report(&noisy.transcripts, &task, &cfg.local, inputs).unwrap();
    assert!(noisy_report.mean_grad_norm_sq <= noisy_report.bound);
    assert!(noisy_report.bias > report.bias);

    let (longer, cfg) = run(80, 0.0);
    let long_report = convergence_report(&longer.transcripts, &task, &cfg.local, inputs).unwrap();
    // the T-dependent terms at a common λ shrink as T doubles
    let t_terms = |t: f64| {
        let lambda = report.lambda_sq.max(long_report.lambda_sq).sqrt();
        2.0 * inputs.rho_f * l / t + 2.0 * 2f64.sqrt() * lambda * (l * inputs.rho_f).sqrt() / t.sqrt()
    };
    assert!(t_terms(80.0) <= t_terms(40.0));
    assert!(long_report.mean_grad_norm_sq <= long_report.bound);

    struct NoOracle;
    impl GradientOracle for NoOracle {
        fn full_gradient(&self, _: &[f64]) -> Option<Vec<f64>> {
            None
        }
    }
    assert!(matches!(
        convergence_report(&out.transcripts, &NoOracle, &cfg.local, inputs),
        Err(Error::InvalidArgument(_))
    ));
    assert!(convergence_report(&out.transcripts, &task, &LocalTrainerSpec::default(), inputs).is_err());
}
