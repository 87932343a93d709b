//! Tensor ops and losses against direct formulas, and a finite-difference
//! check of a one-layer encoder.

use miniens::encoder::{Encoder, EncoderConfig, EncoderKind, SingleClassifier};
use miniens::nn::{Mode, Module};
use miniens::tensor::{bce_with_logits, check_gradients, cross_entropy, Tensor};
use miniens::tokenizer::train_bpe;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 12, 3.0);
    let b = random(&mut rng, 8, 3.0);
    let got = Tensor::from_vec(&[3, 4], a.clone())
        .unwrap()
        .matmul(&Tensor::from_vec(&[4, 2], b.clone()).unwrap())
        .unwrap();
    assert_eq!(got.shape(), &[3, 2]);
    let got = got.to_vec();
    for i in 0..3 {
        for j in 0..2 {
            let mut want = 0.0;
            for k in 0..4 {
                want += a[i * 4 + k] * b[k * 2 + j];
            }
            assert!((got[i * 2 + j] - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn softmax_of_one_two_three() {
    let got = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap().softmax(1).unwrap().to_vec();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
    for (g, x) in got.iter().zip([1.0f64, 2.0, 3.0]) {
        assert!((g - x.exp() / z).abs() <= 1e-12);
    }
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn cross_entropy_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = random(&mut rng, 5 * 3, 4.0);
    let targets = [0, 2, 1, 1, 0];
    let got = cross_entropy(&Tensor::from_vec(&[5, 3], logits.clone()).unwrap(), &targets)
        .unwrap()
        .item();
    let want = logits
        .chunks(3)
        .zip(targets)
        .map(|(row, t)| logsumexp(row) - row[t])
        .sum::<f64>()
        / 5.0;
    assert!((got - want).abs() <= 1e-10);
}

#[test]
fn bce_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = random(&mut rng, 4 * 3, 6.0);
    let targets: Vec<f64> = (0..12).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
    let got = bce_with_logits(
        &Tensor::from_vec(&[4, 3], logits.clone()).unwrap(),
        &Tensor::from_vec(&[4, 3], targets.clone()).unwrap(),
    )
    .unwrap()
    .item();
    let want = logits
        .iter()
        .zip(&targets)
        .map(|(&z, &t)| {
            let s = 1.0 / (1.0 + (-z).exp());
            -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
        })
        .sum::<f64>()
        / 12.0;
    assert!((got - want).abs() <= 1e-10);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 1..6),
    ) {
        let b = rows.len();
        let p = Tensor::from_vec(&[b, 4], rows.concat()).unwrap().softmax(1).unwrap().to_vec();
        for row in p.chunks(4) {
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_a_constant_shift(
        row in proptest::collection::vec(-50f64..50.0, 5),
        c in -100f64..100.0,
    ) {
        let a = Tensor::from_vec(&[1, 5], row.clone()).unwrap().softmax(1).unwrap().to_vec();
        let shifted: Vec<f64> = row.iter().map(|x| x + c).collect();
        let b = Tensor::from_vec(&[1, 5], shifted).unwrap().softmax(1).unwrap().to_vec();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn losses_are_non_negative(
        logits in proptest::collection::vec(-30f64..30.0, 6),
        t0 in 0usize..3,
        t1 in 0usize..3,
    ) {
        let z = Tensor::from_vec(&[2, 3], logits).unwrap();
        prop_assert!(cross_entropy(&z, &[t0, t1]).unwrap().item() >= 0.0);
        let mut onehot = vec![0.0; 6];
        onehot[t0] = 1.0;
        onehot[3 + t1] = 1.0;
        let t = Tensor::from_vec(&[2, 3], onehot).unwrap();
        prop_assert!(bce_with_logits(&z, &t).unwrap().item() >= 0.0);
    }
}

#[test]
fn one_layer_encoder_gradients_on_a_padded_batch() {
    let vocab = train_bpe(&["good day", "bad day", "a good film"], 40).unwrap();
    let mut cfg = EncoderConfig::desk(EncoderKind::MiniRoberta, vocab.len());
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 16;
    cfg.max_positions = 16;
    cfg.dropout = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = SingleClassifier::new(Encoder::new(cfg, vocab, &mut rng).unwrap(), &mut rng);
    // Scale weights up so that gradients are well above the relative-error floor.
    for (_, p) in model.named_parameters() {
        p.update_data(|d| d.iter_mut().for_each(|x| *x *= 20.0));
    }
    let batch = model.encoder.tokenize(&["good day a good film", "bad"], 12).unwrap();
    assert!(batch.inputs[1].attention_mask.contains(&0));
    let loss = cross_entropy(&model.logits(&batch, &mut Mode::Eval).unwrap(), &[0, 1]).unwrap();
    let report = check_gradients(&loss, &model.named_parameters(), 1e-5, 1e-4, 1e-6).unwrap();
    assert!(report.passed(), "{report:?}");
}
