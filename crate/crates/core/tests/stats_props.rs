use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use tbnn_core::data::{self, Dataset, IdxFile, Split};
use tbnn_core::diagnostics::{kinetic_temperature, split_rhat, ChainMatrix, Rhat};
use tbnn_core::metrics::{ece, ensemble_predict, ood_auroc, test_nll, PredictiveEnsemble};
use tbnn_core::models::{Activation, Architecture, Likelihood, ModelSpec, Targets};
use tbnn_core::posterior::{Potential, Target};
use tbnn_core::priors::{self, PriorFamily, PriorSpec, ScaleMode};
use tbnn_core::rng::rng_from_seed;
use tbnn_core::weightstats::{fit_location_scale, fit_student_t, qq_data, spatial_covariance, MarginalFamily};
use tbnn_core::{checkpoint, ParamTree, Role, Tensor};
use tbnn_oracles::{oracle_auroc, oracle_ece, oracle_inverse, oracle_split_rhat};

fn rhat(rows: &[Vec<f64>]) -> Rhat {
    split_rhat(&ChainMatrix::new(rows).unwrap()).unwrap()
}

fn ensemble(rows: &[Vec<f64>]) -> PredictiveEnsemble {
    let k = rows[0].len();
    PredictiveEnsemble { probs: Tensor::new(vec![rows.len(), k], rows.concat()).unwrap(), samples: 1 }
}

/// Rows of class probabilities with coarse values so bin edges and ties occur.
fn prob_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(0u32..20, 3), n),
            prop::collection::vec(0usize..3, n),
        )
            .prop_map(|(raw, labels)| {
                let rows = raw
                    .iter()
                    .map(|r| {
                        let r: Vec<f64> = r.iter().map(|&v| v as f64 + 1.0).collect();
                        let s: f64 = r.iter().sum();
                        r.iter().map(|v| v / s).collect()
                    })
                    .collect();
                (rows, labels)
            })
    })
}

fn chains_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..5, 4usize..30).prop_flat_map(|(c, n)| prop::collection::vec(prop::collection::vec(-1000i32..1000, n), c))
        .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
}

fn single_tensor(name: &str, role: Role, shape: Vec<usize>, data: Vec<f64>) -> ParamTree {
    let mut p = ParamTree::new();
    p.push(name, role, Tensor::new(shape, data).unwrap());
    p
}

fn toy_classifier() -> ModelSpec {
    ModelSpec {
        architecture: Architecture::Fcnn { hidden: vec![6] },
        activation: Activation::Tanh,
        input_shape: vec![4],
        outputs: 3,
        likelihood: Likelihood::Categorical,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rhat_matches_oracle(rows in chains_strategy()) {
        let ours = rhat(&rows).value();
        let oracle = oracle_split_rhat(&rows);
        match (ours, oracle) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}"),
            (None, None) => {}
            (a, b) => prop_assert!(false, "sentinel mismatch {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn rhat_is_invariant_under_monotone_maps(rows in chains_strategy()) {
        let mapped: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| 3.0 * x * x * x + x - 7.0).collect()).collect();
        prop_assert_eq!(rhat(&rows), rhat(&mapped));
        let exp: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| (x / 100.0).exp()).collect()).collect();
        prop_assert_eq!(rhat(&rows), rhat(&exp));
    }

    #[test]
    fn rhat_ignores_chain_order(rows in chains_strategy()) {
        let mut rev = rows.clone();
        rev.reverse();
        match (rhat(&rows).value(), rhat(&rev).value()) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn auroc_matches_oracle_and_is_antisymmetric(
        a in prop::collection::vec(0u32..30, 1..100),
        b in prop::collection::vec(0u32..30, 1..100),
    ) {
        let a: Vec<f64> = a.iter().map(|&v| v as f64 / 7.0).collect();
        let b: Vec<f64> = b.iter().map(|&v| v as f64 / 7.0).collect();
        let ab = ood_auroc(&a, &b).unwrap();
        prop_assert_eq!(ab, oracle_auroc(&a, &b));
        prop_assert_eq!(ab + ood_auroc(&b, &a).unwrap(), 1.0);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn ece_matches_oracle_and_ignores_order((rows, labels) in prob_rows(), bins in 1usize..20) {
        let e = ece(&ensemble(&rows), &labels, bins).unwrap();
        prop_assert_eq!(e, oracle_ece(&rows, &labels, bins));
        prop_assert!((0.0..=1.0).contains(&e));
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.reverse();
        idx.rotate_left(rows.len() / 3);
        let pr: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let pl: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert!((ece(&ensemble(&pr), &pl, bins).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn ensemble_rows_normalize_and_nll_obeys_jensen(seed in any::<u64>(), n_samples in 2usize..6) {
        let model = toy_classifier();
        let prior = PriorSpec::default();
        let samples: Vec<ParamTree> = (0..n_samples)
            .map(|s| priors::sample(&prior, &model.zeros().unwrap(), seed.wrapping_add(s as u64)).unwrap().map(|w| 3.0 * w))
            .collect();
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let inputs = Tensor::new(vec![10, 4], x).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let refs: Vec<&ParamTree> = samples.iter().collect();
        let ens = ensemble_predict(&refs, &model, &inputs).unwrap();
        for i in 0..ens.rows() {
            prop_assert!((ens.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
        let mean_single: f64 = samples
            .iter()
            .map(|s| test_nll(&ensemble_predict(&[s], &model, &inputs).unwrap(), &labels).unwrap())
            .sum::<f64>() / n_samples as f64;
        prop_assert!(test_nll(&ens, &labels).unwrap() <= mean_single + 1e-10);
    }

    #[test]
    fn kinetic_temperature_ignores_permutation(m in prop::collection::vec(-3.0f64..3.0, 2..40), shift in 0usize..40) {
        let n = m.len();
        let mass: Vec<f64> = (0..n).map(|i| 0.5 + (i % 5) as f64 * 0.25).collect();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let mp: Vec<f64> = perm.iter().map(|&i| m[i]).collect();
        let massp: Vec<f64> = perm.iter().map(|&i| mass[i]).collect();
        let t1 = kinetic_temperature(&single_tensor("m", Role::Bias, vec![n], m), &single_tensor("m", Role::Bias, vec![n], mass)).unwrap();
        let t2 = kinetic_temperature(&single_tensor("m", Role::Bias, vec![n], mp), &single_tensor("m", Role::Bias, vec![n], massp)).unwrap();
        prop_assert!((t1.mean - t2.mean).abs() < 1e-12);
    }

    #[test]
    fn prior_is_unimodal_per_coordinate(
        w in prop::collection::vec(-2.0f64..2.0, 18),
        coord in 0usize..18,
        factor in 1.01f64..4.0,
        fam in 0usize..4,
    ) {
        let family = [PriorFamily::Gaussian, PriorFamily::Laplace, PriorFamily::StudentT, PriorFamily::CorrelatedGaussian][fam];
        let spec = PriorSpec { family, scale_mode: ScaleMode::Fixed, scale_multiplier: 1.0, ..PriorSpec::default() };
        let p = single_tensor("conv", Role::ConvFilter, vec![2, 1, 3, 3], w.clone());
        // mode of the conditional along `coord`
        let mode = if family == PriorFamily::CorrelatedGaussian {
            let cov = tbnn_core::priors::kernel_matrix(tbnn_core::priors::Kernel::Exponential, 3, 3, 1.0, 1.0);
            let prec = oracle_inverse(&cov, 9).unwrap();
            let (f, j) = (coord / 9, coord % 9);
            let off: f64 = (0..9).filter(|&k| k != j).map(|k| prec[j * 9 + k] * w[f * 9 + k]).sum();
            -off / prec[j * 9 + j]
        } else {
            0.0
        };
        let d = w[coord] - mode;
        prop_assume!(d.abs() > 1e-6);
        let mut far = w.clone();
        far[coord] = mode + factor * d;
        let q = single_tensor("conv", Role::ConvFilter, vec![2, 1, 3, 3], far);
        prop_assert!(priors::log_prob(&spec, &q).unwrap() < priors::log_prob(&spec, &p).unwrap());
    }

    #[test]
    fn prior_gradients_match_finite_differences(w in prop::collection::vec(-2.0f64..2.0, 18), fam in 0usize..4) {
        let family = [PriorFamily::Gaussian, PriorFamily::Laplace, PriorFamily::StudentT, PriorFamily::CorrelatedGaussian][fam];
        let spec = PriorSpec::new(family);
        prop_assume!(family != PriorFamily::Laplace || w.iter().all(|v| v.abs() > 1e-6 + 1e-7));
        let p = single_tensor("conv", Role::ConvFilter, vec![2, 1, 3, 3], w);
        let g = priors::grad_log_prob(&spec, &p).unwrap();
        let fd = tbnn_core::autodiff::finite_diff_grad(&p, 1e-7, |q| priors::log_prob(&spec, q)).unwrap();
        for (a, b) in g.flatten().iter().zip(fd.flatten()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn spatial_covariance_ignores_sample_order_and_shifts(
        w in prop::collection::vec(-1.0f64..1.0, 6 * 9),
        shift in prop::collection::vec(-5.0f64..5.0, 9),
        rot in 1usize..6,
    ) {
        let t = Tensor::new(vec![3, 2, 3, 3], w.clone()).unwrap();
        let base = spatial_covariance(&t).unwrap();
        let mut rows: Vec<Vec<f64>> = w.chunks(9).map(|c| c.to_vec()).collect();
        rows.rotate_left(rot);
        let permuted = spatial_covariance(&Tensor::new(vec![3, 2, 3, 3], rows.concat()).unwrap()).unwrap();
        let shifted: Vec<f64> = w.iter().enumerate().map(|(i, v)| v + shift[i % 9]).collect();
        let shifted = spatial_covariance(&Tensor::new(vec![3, 2, 3, 3], shifted).unwrap()).unwrap();
        for k in 0..81 {
            prop_assert!((base.matrix[k] - permuted.matrix[k]).abs() < 1e-12);
            prop_assert!((base.matrix[k] - shifted.matrix[k]).abs() < 1e-10);
            prop_assert_eq!(base.matrix[k], base.matrix[(k % 9) * 9 + k / 9]);
        }
    }

    #[test]
    fn minibatch_potential_ignores_batch_order(seed in any::<u64>(), rot in 1usize..7) {
        let model = toy_classifier();
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..48).map(|_| rng.sample(StandardNormal)).collect();
        let ds = Dataset::new(
            Tensor::new(vec![12, 4], x).unwrap(),
            Targets::Classes((0..12).map(|i| i % 3).collect()),
            Split::Train,
        ).unwrap();
        let pot = Potential::new(model.clone(), PriorSpec::default(), Arc::new(ds)).unwrap();
        let params = model.init_params(tbnn_core::models::InitMode::He, &PriorSpec::default(), seed).unwrap();
        let mut batch: Vec<usize> = vec![0, 3, 4, 7, 9, 11, 2];
        let (u1, g1) = pot.minibatch_grad(&params, &batch).unwrap();
        batch.rotate_left(rot);
        let (u2, g2) = pot.minibatch_grad(&params, &batch).unwrap();
        prop_assert!((u1 - u2).abs() <= 1e-12 * u1.abs().max(1.0));
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn forward_is_batch_equivariant(seed in any::<u64>(), rot in 1usize..5) {
        let model = toy_classifier();
        let params = model.init_params(tbnn_core::models::InitMode::He, &PriorSpec::default(), seed).unwrap();
        let mut rng = rng_from_seed(seed ^ 1);
        let x: Vec<f64> = (0..24).map(|_| rng.sample(StandardNormal)).collect();
        let out = model.forward(&params, &Tensor::new(vec![6, 4], x.clone()).unwrap()).unwrap();
        let mut rows: Vec<Vec<f64>> = x.chunks(4).map(|c| c.to_vec()).collect();
        rows.rotate_left(rot);
        let out2 = model.forward(&params, &Tensor::new(vec![6, 4], rows.concat()).unwrap()).unwrap();
        let mut expected: Vec<Vec<f64>> = out.data().chunks(3).map(|c| c.to_vec()).collect();
        expected.rotate_left(rot);
        prop_assert_eq!(out2.data(), &expected.concat()[..]);
    }

    #[test]
    fn idx_round_trips(dims in prop::collection::vec(1u32..6, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let mut rng = rng_from_seed(seed);
        let payload: Vec<u8> = (0..n).map(|_| rng.random()).collect();
        let f = IdxFile { type_code: 0x08, dims, payload };
        let bytes = f.to_bytes();
        let g = IdxFile::parse(&bytes).unwrap();
        prop_assert_eq!(&g, &f);
        prop_assert_eq!(g.to_bytes(), bytes);
    }

    #[test]
    fn quarter_turns_permute_pixels(seed in any::<u64>(), h in 2usize..7, k in 1i32..4) {
        let w = h;
        let mut rng = rng_from_seed(seed);
        let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random()).collect();
        let t = Tensor::new(vec![2, h, w], x.clone()).unwrap();
        let r = data::rotate_images(&t, 90.0 * k as f64).unwrap();
        let mut a = x.clone();
        let mut b = r.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(r.shape(), t.shape());
        let back = data::rotate_images(&r, 90.0 * (4 - k) as f64).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn checkpoint_round_trips(values in prop::collection::vec(any::<f64>(), 1..40)) {
        let n = values.len();
        let p = single_tensor("w", Role::DenseWeight, vec![n, 1], values);
        let (m, blob) = checkpoint::encode(&p, checkpoint::Dtype::F64);
        let q = checkpoint::decode(&m, &blob).unwrap();
        let bits = |t: &ParamTree| t.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&p), bits(&q));
    }
}

#[test]
fn rhat_of_duplicated_chain_list_is_close() {
    let mut rng = rng_from_seed(11);
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|c| (0..400).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.1 * c as f64).collect())
        .collect();
    let one = rhat(&rows).value().unwrap();
    let dup = rhat(&[rows.clone(), rows].concat()).value().unwrap();
    // exact only up to the n−1 between-chain estimator and the doubled rank offset
    assert!((one - dup).abs() < 0.01, "{one} vs {dup}");
}

#[test]
fn student_t_nesting_at_upper_bound() {
    let mut rng = rng_from_seed(5);
    let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
    let t = fit_student_t(&x).unwrap();
    let g = fit_location_scale(MarginalFamily::Gaussian, &x).unwrap();
    assert!(t.log_lik >= g.log_lik - 1e-6);
}

#[test]
fn qq_on_fitted_family_passes_ks_gate() {
    let mut rng = rng_from_seed(9);
    let x: Vec<f64> = (0..5_000).map(|_| 0.3 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let fit = fit_location_scale(MarginalFamily::Gaussian, &x).unwrap();
    let q = qq_data(&x, &fit);
    assert!(q.ks_ok, "ks {}", q.ks_statistic);
    assert_eq!(q.pairs.len(), x.len());
}

#[test]
fn standardization_uses_train_statistics_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut text = String::from("a,b,y\n");
    for i in 0..50 {
        text.push_str(&format!("{},{},{}\n", i, (i * 7) % 11, (i as f64).powi(2)));
    }
    std::fs::write(&path, text).unwrap();
    let (train, test) = data::load_uci_csv(&path, -1, 3, 0.8, true).unwrap();
    let mean = |d: &Dataset| match &d.targets {
        Targets::Values(v) => v.data().iter().sum::<f64>() / v.len() as f64,
        _ => unreachable!(),
    };
    assert!(mean(&train).abs() < 1e-12);
    assert!(mean(&test).abs() > 1e-6);
    assert_eq!(train.standardization, test.standardization);
}
