use super::checkpoint::{from_bytes, to_bytes};
use super::*;
use crate::autodiff::grad_check;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::path::Path;

fn small_config(in_channels: usize) -> EncoderConfig {
    EncoderConfig {
        in_channels,
        num_blocks: 2,
        dilations: vec![1, 2],
        feature_channels: vec![3, 2],
        embed_dim: 6,
    }
}

fn random_batch(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn factored_pair_uses_two_thirds_of_full_kernel() {
    assert_eq!(conv_weight_count(1, 1, (1, 3), 1) + conv_weight_count(1, 1, (3, 1), 1), 6);
    assert_eq!(conv_weight_count(1, 1, (3, 3), 1), 9);
    for c in [1, 4, 16] {
        let factored = conv_weight_count(c, c, (1, 3), 1) + conv_weight_count(c, c, (3, 1), 1);
        let full = conv_weight_count(c, c, (3, 3), 1);
        assert_eq!(3 * factored, 2 * full);
    }
}

#[test]
fn built_blocks_realise_the_factored_pair() {
    let cfg = EncoderConfig::new(4);
    for b in 0..cfg.num_blocks {
        let block = build_block(&cfg, b).unwrap();
        let [_, temporal, cross, _] = block.layers;
        assert_eq!(temporal.kernel, (1, 3));
        assert_eq!(cross.kernel, (3, 1));
        let full = conv_weight_count(temporal.in_channels, cross.out_channels, (3, 3), 1);
        assert_eq!(3 * (temporal.weight_count() + cross.weight_count()), 2 * full);
    }
}

#[test]
fn depthwise_layer_doubles_channels() {
    let cfg = EncoderConfig { feature_channels: vec![16, 16, 16], ..EncoderConfig::new(1) };
    let block = build_block(&cfg, 1).unwrap();
    let dw = block.layers[3];
    assert_eq!(dw.kind, LayerKind::Depthwise);
    assert_eq!((dw.in_channels, dw.out_channels, dw.groups), (16, 32, 16));
    assert_eq!(block.pool_window, 2);
    // first layer of the next block consumes the doubled width
    assert_eq!(build_block(&cfg, 2).unwrap().layers[0].in_channels, 32);
}

#[test]
fn block_stack_order_and_dilation() {
    let cfg = EncoderConfig::new(1);
    for (b, d) in [1, 2, 4].into_iter().enumerate() {
        let block = build_block(&cfg, b).unwrap();
        let kinds: Vec<_> = block.layers.iter().map(|l| l.kind).collect();
        assert_eq!(kinds, [LayerKind::Pointwise, LayerKind::Temporal, LayerKind::CrossChannel, LayerKind::Depthwise]);
        assert_eq!(block.layers[1].dilation, (1, d));
        assert_eq!(block.layers[1].options().padding, (0, d));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = EncoderConfig::new(1);
    assert!(matches!(build_block(&cfg, 3), Err(Error::Config(_))));
    let bad = EncoderConfig { dilations: vec![1, 2], ..EncoderConfig::new(1) };
    assert!(matches!(build_block(&bad, 0), Err(Error::Config(_))));
    let zero = EncoderConfig { feature_channels: vec![8, 0, 8], ..EncoderConfig::new(1) };
    assert!(matches!(zero.validate(), Err(Error::Config(_))));
    assert!(SlotsModel::zeros(EncoderConfig::new(1), 1).is_err());
}

#[test]
fn encode_default_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = SlotsModel::new(EncoderConfig::new(1), 2, &mut rng).unwrap();
    let z = model.embed(&random_batch(&[2, 1, 64], 4)).unwrap();
    assert_eq!(z.shape(), &[2, 64]);
    assert!(z.all_finite());
}

#[test]
fn identical_rows_embed_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = SlotsModel::new(EncoderConfig::new(2), 3, &mut rng).unwrap();
    let row = random_batch(&[1, 2, 32], 6).into_data();
    let batch = Tensor::new(vec![2, 2, 32], [row.clone(), row].concat()).unwrap();
    let z = model.embed(&batch).unwrap();
    assert_eq!(z.row(0), z.row(1));
    assert_eq!(model.embed(&batch).unwrap(), z);
}

#[test]
fn zero_input_gives_zero_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = SlotsModel::new(EncoderConfig::new(3), 2, &mut rng).unwrap();
    let z = model.embed(&Tensor::zeros(&[2, 3, 16])).unwrap();
    assert!(z.data().iter().all(|v| *v == 0.0));
}

#[test]
fn short_series_reports_minimum_length() {
    let model = SlotsModel::zeros(EncoderConfig::new(1), 2).unwrap();
    match model.embed(&Tensor::zeros(&[1, 1, 7])) {
        Err(Error::InputLength { min, got }) => assert_eq!((min, got), (8, 7)),
        other => panic!("expected input-length error, got {other:?}"),
    }
    assert!(matches!(model.embed(&Tensor::zeros(&[1, 2, 16])), Err(Error::Dimension { .. })));
}

#[test]
fn zero_classifier_gives_zero_logits() {
    let model = SlotsModel::zeros(EncoderConfig::new(1), 4).unwrap();
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let z = tape.constant(random_batch(&[5, 64], 9));
    let logits = model.classify(&mut tape, &params, z).unwrap();
    assert_eq!(tape.shape(logits), &[5, 4]);
    assert!(tape.value(logits).data().iter().all(|v| *v == 0.0));
}

#[test]
fn classifier_argmax_matches_hand_arithmetic() {
    let cfg = EncoderConfig { embed_dim: 3, ..EncoderConfig::new(1) };
    let mut model = SlotsModel::zeros(cfg, 2).unwrap();
    let n = model.parameters().len();
    // W columns: class 0 = (1, 0, 0), class 1 = (2, -1, 0); b = (0.5, 0)
    model.parameters_mut()[n - 2].value.data_mut().copy_from_slice(&[1.0, 2.0, 0.0, -1.0, 0.0, 0.0]);
    model.parameters_mut()[n - 1].value.data_mut().copy_from_slice(&[0.5, 0.0]);
    // z = (1, 0, 0): logits (1.5, 2.0) -> class 1; z = (1, 1, 0): (1.5, 1.0) -> class 0
    let expected = [[1.5, 2.0], [1.5, 1.0]];
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let z = tape.constant(Tensor::matrix(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]]));
    let logits = model.classify(&mut tape, &params, z).unwrap();
    assert_eq!(tape.value(logits).row(0), &expected[0]);
    assert_eq!(tape.value(logits).row(1), &expected[1]);
}

#[test]
fn classify_batch_of_one_hundred() {
    let model = SlotsModel::zeros(EncoderConfig::new(1), 3).unwrap();
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let z = tape.constant(Tensor::zeros(&[100, 64]));
    let logits = model.classify(&mut tape, &params, z).unwrap();
    assert_eq!(tape.shape(logits), &[100, 3]);
    let bad = tape.constant(Tensor::zeros(&[100, 63]));
    assert!(matches!(model.classify(&mut tape, &params, bad), Err(Error::Dimension { .. })));
}

#[test]
fn parameters_are_enumerated_once() {
    let model = SlotsModel::zeros(EncoderConfig::new(1), 2).unwrap();
    let names: HashSet<_> = model.parameters().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names.len(), model.parameters().len());
    assert_eq!(model.parameters().len(), 3 * 4 * 2 + 4);
    let cls = model.param("classifier.weight").unwrap();
    assert_eq!(cls.value.shape(), &[64, 2]);
    let n = model.parameters().len();
    assert!(model.is_classifier_param(n - 1) && model.is_classifier_param(n - 2));
    assert!(!model.is_classifier_param(n - 3));
}

#[test]
fn every_parameter_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = EncoderConfig { embed_dim: 8, ..EncoderConfig::new(3) };
    let model = SlotsModel::new(cfg, 3, &mut rng).unwrap();
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let x = tape.constant(random_batch(&[6, 3, 32], 12));
    let z = model.encode(&mut tape, &params, x).unwrap();
    let logits = model.classify(&mut tape, &params, z).unwrap();
    let w = tape.constant(random_batch(&[6, 3], 13));
    let weighted = tape.mul(logits, w).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();
    for (p, v) in model.parameters().iter().zip(params.vars()) {
        let g = tape.grad(*v).unwrap();
        assert!(g.data().iter().any(|x| *x != 0.0), "dead parameter {}", p.name);
    }
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = SlotsModel::new(small_config(2), 2, &mut rng).unwrap();
    // nonzero biases keep pre-activations off the relu kink where a receptive field is all zeros
    for (i, p) in model.parameters_mut().iter_mut().enumerate() {
        if p.name.ends_with(".bias") {
            let n = p.value.numel();
            p.value = random_batch(&[n], 500 + i as u64);
        }
    }
    let x = random_batch(&[3, 2, 12], 22);
    let weights = random_batch(&[3, 2], 23);
    let inputs: Vec<Tensor> = model.parameters().iter().map(|p| p.value.clone()).collect();
    let err = grad_check(
        |tape, vars| {
            let params = BoundParams { vars: vars.to_vec() };
            let xv = tape.constant(x.clone());
            let z = model.encode(tape, &params, xv)?;
            let logits = model.classify(tape, &params, z)?;
            let w = tape.constant(weights.clone());
            let p = tape.mul(logits, w)?;
            Ok(tape.sum(p))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "encoder relative error {err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = SlotsModel::new(small_config(3), 4, &mut rng).unwrap();
    let bytes = to_bytes(&model);
    let back = from_bytes(&bytes).unwrap();
    assert_eq!(back.config(), model.config());
    for (a, b) in model.parameters().iter().zip(back.parameters()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(to_bytes(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    write_checkpoint(&model, &path).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), model);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = SlotsModel::zeros(small_config(1), 2).unwrap();
    let bytes = to_bytes(&model);
    assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(from_bytes(&extra), Err(Error::Checkpoint(_))));
    assert!(matches!(from_bytes(b"hello\n\n"), Err(Error::Checkpoint(_))));
    assert!(matches!(read_checkpoint(Path::new("/nonexistent/model.ckpt")), Err(Error::Io { .. })));
}
