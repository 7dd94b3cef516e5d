use ndarray::{array, Array2};

use ragcap::model::{
    cross_attention, load_checkpoint, save_checkpoint, CrossAttention, EncoderStates, ModelConfig, ModelParams,
    Seeds,
};

#[test]
fn cross_attention_two_by_two_by_hand() {
    let eye: Array2<f64> = Array2::eye(2);
    let w = CrossAttention {
        wq: vec![eye.clone()],
        wk: vec![eye.clone()],
        wv: vec![eye.clone()],
        wo: eye,
    };
    let enc = EncoderStates(array![[1.0, 0.0], [0.0, 1.0]]);
    let out = cross_attention(&array![[1.0, 0.0], [0.0, 2.0]], &enc, &w).unwrap();

    // row 0: scores [1, 0] / sqrt(2)
    let e = (1.0 / 2f64.sqrt()).exp();
    let (w0, w1) = (e / (e + 1.0), 1.0 / (e + 1.0));
    // row 1: scores [0, 2] / sqrt(2)
    let f = (2.0 / 2f64.sqrt()).exp();
    let (v0, v1) = (1.0 / (1.0 + f), f / (1.0 + f));
    let expected = array![[w0, w1], [v0, v1]];
    for (a, b) in out.output.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
    assert_eq!(out.weights[0], out.output);
}

#[test]
fn encoder_stub_is_linear() {
    let params = ModelParams::init(ModelConfig::toy(1, 2, 16, 4, 20), Seeds { backbone: 5, theta: 6 }).unwrap();
    let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let y: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos()).collect();
    let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let (ex, ey, ec) = (
        params.encode_image(&x).unwrap().0,
        params.encode_image(&y).unwrap().0,
        params.encode_image(&combo).unwrap().0,
    );
    let lin = &ex * 2.0 - &ey * 0.5;
    assert!(ec.iter().zip(lin.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    assert_eq!(ec.shape(), &[8, 16]);
}

#[test]
fn wrong_image_width_is_rejected() {
    let params = ModelParams::init(ModelConfig::toy(1, 2, 16, 4, 20), Seeds { backbone: 5, theta: 6 }).unwrap();
    assert!(params.encode_image(&[1.0; 31]).is_err());
}

#[test]
fn checkpoint_file_roundtrip_keeps_logits() {
    let params = ModelParams::init(ModelConfig::toy(2, 2, 16, 4, 20), Seeds { backbone: 1, theta: 2 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &params, None).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(loaded.tokenizer.is_none());
    let enc = params.encode_image(&[0.25; 32]).unwrap();
    let tokens = [1, 5, 9, 4];
    assert_eq!(
        params.decoder_forward(&tokens, &enc).unwrap(),
        loaded.params.decoder_forward(&tokens, &enc).unwrap()
    );
    assert_eq!(params.frozen_digest(), loaded.params.frozen_digest());
}
