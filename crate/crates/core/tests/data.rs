use msam_core::autodiff::{accuracy, Activation, Batch, Head, ModelSpec};
use msam_core::data::{
    epoch_batches, gen_gaussian_mixture, make_shards, parse_idx, read_idx, read_idx_labels, read_idx_pair, stream_rng,
    write_idx_images, write_idx_labels, Dataset, Labels, ShardPolicy,
};
use msam_core::optim::{sgd_step, OptimizerConfig, OptimizerState};
use msam_core::{Error, ParamVector};
use proptest::prelude::*;

fn train_linear_probe(ds: &Dataset, k: usize, steps: usize, lr: f64) -> (ModelSpec, ParamVector) {
    let spec = ModelSpec::new(vec![ds.num_features(), k], Activation::Relu, Head::SoftmaxCrossEntropy).unwrap();
    let mut w = ParamVector::zeros(spec.num_params());
    let mut state = OptimizerState::new(w.len());
    let config = OptimizerConfig {
        lr,
        ..OptimizerConfig::default()
    };
    for _ in 0..steps {
        w = sgd_step(&spec, &w, &Batch::full(ds), &config, &mut state).unwrap();
    }
    (spec, w)
}

#[test]
fn zero_separation_is_chance_level() {
    let k = 4;
    let ds = gen_gaussian_mixture(k, 5, 4000, 0.0, 3).unwrap();
    let (train, eval) = ds.split_holdout(0.2).unwrap();
    let (spec, w) = train_linear_probe(&train, k, 200, 0.5);
    let acc = accuracy(&spec, &w, &Batch::full(&eval)).unwrap();
    assert!((acc - 1.0 / k as f64).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn wide_separation_is_learnable() {
    let ds = gen_gaussian_mixture(2, 2, 400, 10.0, 5).unwrap();
    let (spec, w) = train_linear_probe(&ds, 2, 200, 0.5);
    let acc = accuracy(&spec, &w, &Batch::full(&ds)).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn mixture_is_bitwise_deterministic() {
    let a = gen_gaussian_mixture(10, 20, 2000, 3.0, 0).unwrap();
    let b = gen_gaussian_mixture(10, 20, 2000, 3.0, 0).unwrap();
    let c = gen_gaussian_mixture(10, 20, 2000, 3.0, 1).unwrap();
    assert!(a
        .features()
        .iter()
        .zip(b.features())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.labels(), b.labels());
    assert_ne!(a.features(), c.features());
    assert_eq!(a.meta().k, Some(10));
    assert_eq!(a.meta().seed, Some(0));
}

#[test]
fn holdout_takes_trailing_rows() {
    let ds = gen_gaussian_mixture(2, 3, 50, 1.0, 2).unwrap();
    let (train, eval) = ds.split_holdout(0.2).unwrap();
    assert_eq!((train.len(), eval.len()), (40, 10));
    assert_eq!(eval.row(0), ds.row(40));
    assert!(ds.split_holdout(1.0).is_err());
}

#[test]
fn shard_examples() {
    let batch: Vec<usize> = (10..18).collect();
    let plan = make_shards(&batch, 4, ShardPolicy::Strict, 1).unwrap();
    assert_eq!(plan.shard_sizes(), vec![2; 4]);
    plan.check_covers(&batch).unwrap();
    let one = make_shards(&batch, 1, ShardPolicy::Strict, 1).unwrap();
    assert_eq!(one.shard(0), &batch[..]);
    let odd: Vec<usize> = (0..7).collect();
    let weighted = make_shards(&odd, 2, ShardPolicy::Weighted, 0).unwrap();
    assert_eq!(weighted.weights(), vec![4.0 / 7.0, 3.0 / 7.0]);
    assert!(matches!(
        make_shards(&odd, 2, ShardPolicy::Strict, 0),
        Err(Error::Divisibility { .. })
    ));
    assert!(make_shards(&odd, 8, ShardPolicy::Weighted, 0).is_err());
}

#[test]
fn idx_header_arithmetic() {
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    bytes.extend([0, 51, 102, 153, 204, 255, 0, 255]);
    let arr = parse_idx(&bytes).unwrap();
    assert_eq!(arr.dims, vec![2, 2, 2]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("images.idx");
    std::fs::write(&path, &bytes).unwrap();
    let ds = read_idx(&path).unwrap();
    assert_eq!((ds.len(), ds.num_features()), (2, 4));
    assert_eq!(ds.row(0), &[0.0, 0.2, 0.4, 0.6]);
    assert_eq!(ds.labels(), &Labels::Unlabeled);
}

#[test]
fn idx_errors_carry_offsets() {
    let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    bytes.extend([1, 2, 3]);
    match parse_idx(&bytes) {
        Err(Error::IdxFormat { offset, message }) => {
            assert_eq!(offset, 16);
            assert!(
                message.contains("expected 8") && message.contains("found 3"),
                "{message}"
            );
        }
        other => panic!("{other:?}"),
    }
    match parse_idx(&[0, 0, 9, 9, 0, 0, 0, 0]) {
        Err(Error::IdxFormat { offset: 0, message }) => assert!(message.contains("magic")),
        other => panic!("{other:?}"),
    }
    match parse_idx(&[0, 0, 8, 3, 0, 0]) {
        Err(Error::IdxFormat { offset: 4, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn idx_round_trip() {
    let features: Vec<f64> = (0..12).map(|i| f64::from(i * 20) / 255.0).collect();
    let ds = Dataset::from_classes(features, 4, vec![2, 0, 1], 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
    write_idx_images(&ds, &ip).unwrap();
    write_idx_labels(&[2, 0, 1], &lp).unwrap();
    let back = read_idx_pair(&ip, &lp, Some(3)).unwrap();
    assert_eq!(back.features(), ds.features());
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(read_idx_labels(&lp).unwrap(), vec![2, 0, 1]);
}

#[test]
fn csv_export() {
    let ds = Dataset::from_classes(vec![0.5, -1.0, 2.0, 0.25], 2, vec![1, 0], 2).unwrap();
    assert_eq!(ds.to_csv(), "feature_0,feature_1,label\n0.5,-1,1\n2,0.25,0\n");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.write_csv(&path).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap(), ds.to_csv());
}

proptest! {
    #[test]
    fn plans_partition_their_batch(b in 1usize..64, m_raw in 1usize..64, seed in any::<u64>(), offset in 0usize..100) {
        let m = 1 + (m_raw - 1) % b;
        let batch: Vec<usize> = (offset..offset + b).collect();
        let plan = make_shards(&batch, m, ShardPolicy::Weighted, seed).unwrap();
        prop_assert_eq!(plan.num_shards(), m);
        let mut seen: Vec<usize> = plan.shards().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(&seen, &batch);
        let sizes = plan.shard_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!((plan.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if b % m == 0 {
            let strict = make_shards(&batch, m, ShardPolicy::Strict, seed).unwrap();
            prop_assert!(strict.is_equal_sized());
        }
    }

    #[test]
    fn epochs_visit_each_index_once(n in 1usize..300, bs in 1usize..64, seed in any::<u64>()) {
        let batches = epoch_batches(n, bs, &mut stream_rng(seed, 1));
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(batches.iter().rev().skip(1).all(|b| b.len() == bs));
    }
}
