use shmssl::models::{Classifier, Decoder, Discriminator, Encoder, ModelBundle, Method, INPUT_LEN, LATENT_DIM};
use shmssl::nn::{Module, Tensor};

#[test]
fn encoder_and_decoder_shapes() {
    for b in 1..=4 {
        let x = Tensor::filled(&[b, 1, INPUT_LEN], 0.5);
        let h = Encoder::new(1).infer(&x).unwrap();
        assert_eq!(h.shape(), &[b, LATENT_DIM]);
        let z = Tensor::filled(&[b, LATENT_DIM, 1], 0.1);
        assert_eq!(Decoder::new(1).infer(&z).unwrap().shape(), &[b, 1, INPUT_LEN]);
        assert_eq!(Discriminator::new(1).infer(&x).unwrap().shape(), &[b, 1]);
    }
}

#[test]
fn classifier_emits_k_logits() {
    for k in [5, 6] {
        let c = Classifier::new(k, 2).unwrap();
        assert_eq!(c.num_classes(), k);
        let out = c.infer(&Tensor::filled(&[3, 1, INPUT_LEN], 0.9)).unwrap();
        assert_eq!(out.shape(), &[3, k]);
    }
}

#[test]
fn wrong_input_length_is_a_dimension_error() {
    let e = Encoder::new(1).infer(&Tensor::filled(&[2, 1, 500], 0.0)).unwrap_err();
    assert!(e.to_string().contains("500"), "{e}");
}

#[test]
fn bundles_hold_the_method_components() {
    let b = ModelBundle::build(Method::Ae, 6, 3).unwrap();
    assert!(b.encoder.is_some() && b.decoder.is_some());
    for m in [Method::Simclr, Method::Mixup] {
        let b = ModelBundle::build(m, 6, 3).unwrap();
        assert!(b.encoder.is_some() && b.projector.is_some());
    }
    let b = ModelBundle::build(Method::Gan, 6, 3).unwrap();
    assert!(b.generator.is_some() && b.discriminator.is_some());
    for m in [Method::Ae, Method::Simclr, Method::Mixup, Method::Gan] {
        assert!(ModelBundle::build(m, 6, 3).unwrap().pretrained_encoder().is_some());
    }
}
