use super::*;
use crate::ratings::{DissimilarityMatrix, TimbreTarget};
use alloc::format;
use alloc::string::ToString;

fn micro_arch() -> VaeArchitecture {
    VaeArchitecture::new(8, vec![6, 5], 2).unwrap()
}

fn random_batch<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<T> {
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(rng.uniform())).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

#[test]
fn shapes_follow_the_architecture() {
    let arch = VaeArchitecture::new(40, vec![16, 16, 16], 64).unwrap();
    assert_eq!(arch.param_shapes().len(), 2 * (3 + 2 + 3 + 1));
    let mut rng = Rng::new(1);
    let model = VaeModel::<f32>::new(arch, &mut rng);
    let x = random_batch::<f32>(5, 40, &mut rng);
    let (mu, lv) = model.encode(&x).unwrap();
    assert_eq!((mu.shape(), lv.shape()), (&[5, 64][..], &[5, 64][..]));
    let xh = model.decode(&mu).unwrap();
    assert_eq!(xh.shape(), &[5, 40]);
    assert!(xh.data().iter().all(|&v| v >= 0.0));

    let again = model.encode(&x).unwrap();
    assert_eq!(again.0, mu);

    assert!(matches!(model.encode(&random_batch(2, 39, &mut rng)), Err(VaeError::InputDim { .. })));
    let mut bad = random_batch::<f32>(2, 40, &mut rng);
    bad.data_mut()[3] = f32::NAN;
    assert_eq!(model.encode(&bad), Err(VaeError::NonFiniteInput));
}

#[test]
fn zeroed_heads_output_their_biases() {
    let arch = micro_arch();
    let mut rng = Rng::new(2);
    let mut model = VaeModel::<f64>::new(arch.clone(), &mut rng);
    let mu_w = 2 * arch.hidden.len();
    for p in [mu_w, mu_w + 2] {
        model.params_mut()[p] = Tensor::zeros(model.params()[p].shape());
    }
    model.params_mut()[mu_w + 1] = Tensor::new(vec![2], vec![0.25, -1.5]).unwrap();
    model.params_mut()[mu_w + 3] = Tensor::new(vec![2], vec![0.5, 0.0]).unwrap();
    let (mu, lv) = model.encode(&random_batch(3, 8, &mut rng)).unwrap();
    for r in 0..3 {
        assert_eq!(mu.row(r), &[0.25, -1.5]);
        assert_eq!(lv.row(r), &[0.5, 0.0]);
    }

    let z0 = model.decode(&Tensor::zeros(&[2, 2])).unwrap();
    assert_eq!(z0.row(0), z0.row(1));
}

#[test]
fn closed_form_kl() {
    assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    assert!(gaussian_kl(&[0.0], &[0.3]) > 0.0);
}

#[test]
fn beta_zero_is_pure_reconstruction() {
    let mut rng = Rng::new(3);
    let model = VaeModel::<f64>::new(micro_arch(), &mut rng);
    let x = random_batch(4, 8, &mut rng);
    let (loss, recon, kl) = elbo_loss(&model, &x, 0.0, &mut Rng::new(9)).unwrap();
    assert_eq!(loss, recon);
    assert!(kl >= 0.0);
    let (loss2, recon2, kl2) = elbo_loss(&model, &x, 2.0, &mut Rng::new(9)).unwrap();
    assert_eq!(recon, recon2);
    assert!((loss2 - (recon2 + 2.0 * kl2)).abs() < 1e-12);
}

#[test]
fn kl_term_matches_closed_form_per_row() {
    let mut rng = Rng::new(4);
    let model = VaeModel::<f64>::new(micro_arch(), &mut rng);
    let x = random_batch(6, 8, &mut rng);
    let (mu, lv) = model.encode(&x).unwrap();
    let want: f64 = (0..6).map(|r| gaussian_kl(mu.row(r), lv.row(r))).sum::<f64>() / 6.0;
    let (_, _, kl) = elbo_loss(&model, &x, 1.0, &mut rng).unwrap();
    assert!((kl - want).abs() < 1e-12);
}

/// Central-difference check of the full regularized loss on a micro model.
fn check_full_loss_gradient(seed: u64) {
    let mut rng = Rng::new(seed);
    let model = VaeModel::<f64>::new(micro_arch(), &mut rng);
    let batch = 12;
    let x = random_batch::<f64>(batch, 8, &mut rng);
    let eps = normal_noise::<f64>(batch, 2, &mut rng);
    let labels: Vec<Option<usize>> = (0..batch).map(|i| Some(i % 4)).collect();
    let target: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.normal(), rng.normal()]).collect();
    let (beta, alpha) = (2.0, 0.1);

    let loss_at = |m: &VaeModel<f64>| -> f64 {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let ev = tape.constant(eps.clone());
        let reg = RegTerm {
            alpha,
            labels: &labels,
            target: &target,
            norm: TargetNormalization::Global,
        };
        let g = loss_graph(m, &mut tape, &bound, xv, ev, beta, Some(reg)).unwrap();
        tape.value(g.total).item()
    };

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let ev = tape.constant(eps.clone());
    let reg = RegTerm {
        alpha,
        labels: &labels,
        target: &target,
        norm: TargetNormalization::Global,
    };
    let g = loss_graph(&model, &mut tape, &bound, xv, ev, beta, Some(reg)).unwrap();
    assert!(g.reg.is_some());
    let grads = tape.backward(g.total).unwrap();

    let h = 1e-6;
    for (p, &var) in bound.vars().iter().enumerate() {
        let analytic = grads.get(var).unwrap();
        for i in 0..model.params()[p].len() {
            let mut up = model.clone();
            up.params_mut()[p].data_mut()[i] += h;
            let mut dn = model.clone();
            dn.params_mut()[p].data_mut()[i] -= h;
            let fd = (loss_at(&up) - loss_at(&dn)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-3);
            assert!(rel < 1e-4, "seed {seed} param {p}[{i}]: fd {fd} vs {a}");
        }
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for seed in 0..4 {
        check_full_loss_gradient(seed);
    }
}

#[test]
fn params_round_trip_and_shape_checks() {
    let mut rng = Rng::new(5);
    let model = VaeModel::<f32>::new(micro_arch(), &mut rng);
    let copy = VaeModel::from_params(micro_arch(), model.params().to_vec()).unwrap();
    assert_eq!(copy, model);
    let mut wrong = model.params().to_vec();
    wrong[0] = Tensor::zeros(&[8, 7]);
    assert!(matches!(VaeModel::from_params(micro_arch(), wrong), Err(VaeError::ParamShape { index: 0, .. })));
}

fn toy_corpus(frames: usize, classes: usize, dim: usize, seed: u64) -> (Dataset, TimbreTarget) {
    let mut rng = Rng::new(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| rng.uniform()).collect()).collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..frames {
        let c = i % classes;
        data.extend(centers[c].iter().map(|v| (v + 0.05 * rng.normal()).max(0.0) as f32));
        labels.push(Some(c));
    }
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let coords: Vec<Vec<f64>> = (0..classes).map(|c| vec![c as f64 * 0.3, (c % 2) as f64 * 0.4]).collect();
    let n = classes;
    let values = (0..n)
        .map(|i| (0..n).map(|j| crate::linalg::sq_dist(&coords[i], &coords[j]).sqrt() / 4.0).collect())
        .collect();
    let target = TimbreTarget {
        instruments: names.clone(),
        coords,
        eigenvalues: vec![],
        source_matrix: DissimilarityMatrix::new(names, values).unwrap(),
    };
    (Dataset::new(Tensor::matrix(frames, dim, data).unwrap(), labels).unwrap(), target)
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        stage1_epochs: 200,
        stage2_epochs: 20,
        warmup_epochs: 20,
        learning_rate: 1e-3,
        batch_size: 16,
        seed: 7,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn unregularized_training_reduces_loss() {
    let (data, _) = toy_corpus(50, 4, 12, 1);
    let arch = VaeArchitecture::new(12, vec![32, 32], 4).unwrap();
    let mut model = VaeModel::<f32>::new(arch, &mut Rng::with_stream(7, 0));
    let config = TrainConfig {
        alpha: 0.0,
        ..toy_config()
    };
    let mut trainer = Trainer::new(config, &model).unwrap();
    let log = trainer
        .run_until(200, &mut model, &data, None, None, &mut NoObserver)
        .unwrap();
    assert_eq!(log.len(), 200);
    assert!(log.iter().all(|m| m.reg.is_none()));
    let first = log[0].recon;
    let last = log[199].recon;
    assert!(last < 0.5 * first, "recon {first} -> {last}");
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let (data, target) = toy_corpus(40, 4, 10, 2);
    let arch = VaeArchitecture::new(10, vec![16], 3).unwrap();
    let config = TrainConfig {
        stage1_epochs: 6,
        stage2_epochs: 4,
        warmup_epochs: 3,
        eval_every: 5,
        eval_samples: 4,
        ..toy_config()
    };
    let run = || {
        let mut model = VaeModel::<f32>::new(arch.clone(), &mut Rng::with_stream(config.seed, 0));
        let mut trainer = Trainer::new(config.clone(), &model).unwrap();
        let log = trainer
            .run(&mut model, &data, Some(&data), Some(&target), &mut NoObserver)
            .unwrap();
        (log, model)
    };
    let (log_a, model_a) = run();
    let (log_b, model_b) = run();
    assert_eq!(log_a, log_b);
    assert_eq!(model_a, model_b);
    assert!(log_a[6..].iter().all(|m| m.reg.is_some() && m.stage == 2));
    assert!(log_a[4].test_ll.is_some());

    // stopping after stage 1 and resuming reproduces the uninterrupted run
    let mut model = VaeModel::<f32>::new(arch.clone(), &mut Rng::with_stream(config.seed, 0));
    let mut trainer = Trainer::new(config.clone(), &model).unwrap();
    trainer.run_until(6, &mut model, &data, Some(&data), Some(&target), &mut NoObserver).unwrap();
    let mut resumed = Trainer::resume(config.clone(), trainer.optimizer().clone(), trainer.epoch()).unwrap();
    let tail = resumed.run(&mut model, &data, Some(&data), Some(&target), &mut NoObserver).unwrap();
    assert_eq!(tail, log_a[6..].to_vec());
    assert_eq!(model, model_a);
}

#[test]
fn unknown_class_is_rejected() {
    let (_, target) = toy_corpus(8, 3, 4, 3);
    let spec = crate::spectral::TransformSpec::stft();
    let frame = crate::spectral::SpectralFrame::new(
        vec![0.1; spec.frame_len()],
        spec,
        Some("kazoo".to_string()),
        "k",
    )
    .unwrap();
    assert_eq!(
        Dataset::from_frames(&[frame], Some(&target)),
        Err(VaeError::UnknownClass("kazoo".into()))
    );
}

#[test]
fn evaluation_reports_finite_metrics() {
    let (data, target) = toy_corpus(20, 4, 6, 4);
    let model = VaeModel::<f32>::new(VaeArchitecture::new(6, vec![8], 2).unwrap(), &mut Rng::new(0));
    let e = evaluate(&model, &data.x, 16, &mut Rng::new(1)).unwrap();
    assert!(e.log_likelihood.is_finite() && e.mean_sq_err > 0.0);
    assert_eq!(e.frames, 20);
    assert_eq!(evaluate(&model, &Tensor::<f32>::zeros(&[0, 6]), 4, &mut Rng::new(1)), Err(VaeError::EmptySplit));
    let r = latent_distance_kl(&model, &data, &target.coords, TargetNormalization::Global).unwrap();
    assert!(r.unwrap().is_finite());
}
