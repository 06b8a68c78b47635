use super::*;
use crate::autodiff::gradcheck::{check_gradients, randn};
use crate::autodiff::BoundParams;
use crate::volume_io::Dims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_config() -> LiverFormerConfig {
    LiverFormerConfig {
        input_dims: [8, 8, 8],
        hidden_dim: 16,
        transformer_layers: 2,
        ..Default::default()
    }
}

fn spec(arch: Architecture, cfg: LiverFormerConfig) -> ModelSpec {
    ModelSpec {
        architecture: arch,
        config: cfg,
    }
}

fn random_image(dims: [usize; 3], seed: u64) -> ImageVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Dims::from_array(dims);
    ImageVolume::new(d, [1.0; 3], (0..d.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn config_validation() {
    assert!(LiverFormerConfig::default().validate().is_ok());
    let c = LiverFormerConfig::default();
    assert_eq!((c.feature_dims(), c.tokens(), c.token_width()), ([4, 16, 16], 128, 256));
    let bad = LiverFormerConfig {
        hidden_dim: 10,
        heads: 4,
        ..Default::default()
    };
    assert!(matches!(bad.validate(), Err(Error::IndivisibleHeads { .. })));
    let bad = LiverFormerConfig {
        input_dims: [12, 64, 64],
        ..Default::default()
    };
    assert!(matches!(bad.validate(), Err(Error::NotDivisibleByPatch { extent: 3, patch: 2 })));
}

#[test]
fn logits_have_input_grid_and_ten_classes() {
    for arch in [Architecture::LiverFormer, Architecture::Unet] {
        let cfg = LiverFormerConfig {
            input_dims: [16, 16, 16],
            ..Default::default()
        };
        let m = Model::new(spec(arch, cfg), 1).unwrap();
        let logits = m.logits(&random_image([16, 16, 16], 2)).unwrap();
        assert_eq!(logits.shape(), &[10, 16, 16, 16]);
        assert!(logits.is_finite());
        let pred = m.predict(&random_image([16, 16, 16], 2)).unwrap();
        assert!(pred.data().iter().all(|&c| c <= 9));
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let m = Model::new(spec(Architecture::LiverFormer, toy_config()), 0).unwrap();
    assert!(matches!(m.logits(&random_image([8, 8, 16], 0)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn registries_are_disjoint() {
    let a = Model::new(spec(Architecture::LiverFormer, toy_config()), 0).unwrap();
    let b = Model::new(spec(Architecture::Unet, toy_config()), 0).unwrap();
    let names: std::collections::HashSet<&str> = a.params.names().into_iter().collect();
    assert!(b.params.names().iter().all(|n| !names.contains(n)));
    assert!(a.params.get("liverformer.pos").is_some());
    assert_eq!(a.params.get("liverformer.pos").unwrap().shape(), &[1, 16]);
}

fn bound_tape(m: &Model) -> (Tape<f64>, crate::autodiff::BoundParams) {
    let mut tape = Tape::new();
    let bound = m.params.cast::<f64>().bind(&mut tape);
    (tape, bound)
}

#[test]
fn encoder_stride_arithmetic_and_zero_input() {
    let cfg = LiverFormerConfig {
        input_dims: [8, 16, 8],
        ..toy_config()
    };
    let mut m = Model::new(spec(Architecture::LiverFormer, cfg.clone()), 3).unwrap();
    let (mut tape, bound) = bound_tape(&m);
    let p = Params {
        bound: &bound,
        prefix: "liverformer",
    };
    let x = tape.constant(randn(&[1, 8, 16, 8], &mut ChaCha8Rng::seed_from_u64(0)));
    let enc = encoder_forward(&mut tape, &cfg, &p, x).unwrap();
    assert_eq!(tape.shape(enc.features), &[32, 2, 4, 2]);
    assert_eq!(enc.skips.len(), 3);
    assert_eq!(tape.shape(enc.skips[2]), &[16, 4, 8, 4]);

    // zero final-block weights and zero input give a zero feature map
    for n in ["liverformer.enc2.conv1.w", "liverformer.enc2.conv2.w", "liverformer.enc2.proj.w"] {
        m.params.get_mut(n).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let (mut tape, bound) = bound_tape(&m);
    let p = Params {
        bound: &bound,
        prefix: "liverformer",
    };
    let x = tape.constant(Tensor::zeros(&[1, 8, 16, 8]));
    let enc = encoder_forward(&mut tape, &cfg, &p, x).unwrap();
    assert!(tape.data(enc.features).iter().all(|&v| v == 0.0));
}

#[test]
fn first_layer_receives_gradient() {
    let m = Model::new(spec(Architecture::LiverFormer, toy_config()), 4).unwrap();
    let (mut tape, bound) = bound_tape(&m);
    let x = tape.constant(randn(&[1, 8, 8, 8], &mut ChaCha8Rng::seed_from_u64(1)));
    let y = forward(&mut tape, &m.spec, &bound, x).unwrap();
    let w = randn(&[10, 8, 8, 8], &mut ChaCha8Rng::seed_from_u64(2));
    let l = tape.weighted_sum(y, &w).unwrap();
    tape.backward(l).unwrap();
    let g = tape.grad(bound.var("liverformer.enc0.conv1.w").unwrap()).unwrap();
    assert!(g.iter().any(|&v| v.abs() > 1e-8));
}

#[test]
fn embedding_of_zero_features_is_positional_table() {
    let cfg = LiverFormerConfig {
        input_dims: [16, 16, 16],
        ..toy_config()
    };
    let mut m = Model::new(spec(Architecture::LiverFormer, cfg.clone()), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pos = m.params.get_mut("liverformer.pos").unwrap();
    pos.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let (mut tape, bound) = bound_tape(&m);
    let p = Params {
        bound: &bound,
        prefix: "liverformer",
    };
    let f = tape.constant(Tensor::zeros(&[32, 4, 4, 4]));
    let z = patchify_embed(&mut tape, &cfg, &p, f).unwrap();
    assert_eq!(tape.shape(z), &[8, 16]);
    assert_eq!(tape.data(z), tape.data(bound.var("liverformer.pos").unwrap()));
}

#[test]
fn embedding_follows_patch_permutation() {
    // swapping two patches of the feature map swaps the two pre-position tokens
    let cfg = LiverFormerConfig {
        input_dims: [16, 16, 16],
        ..toy_config()
    };
    let m = Model::new(spec(Architecture::LiverFormer, cfg.clone()), 7).unwrap();
    let feat = randn(&[32, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(8));
    let mut swapped = feat.clone();
    for c in 0..32 {
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let a = ((c * 4 + dz) * 4 + dy) * 4 + dx; // patch (0,0,0)
                    let b = ((c * 4 + 2 + dz) * 4 + 2 + dy) * 4 + 2 + dx; // patch (1,1,1)
                    swapped.data_mut().swap(a, b);
                }
            }
        }
    }
    let tokens = |f: &Tensor<f64>| {
        let (mut tape, bound) = bound_tape(&m);
        let p = Params {
            bound: &bound,
            prefix: "liverformer",
        };
        let fv = tape.constant(f.clone());
        let z = patchify_embed(&mut tape, &cfg, &p, fv).unwrap();
        tape.data(z).to_vec()
    };
    let (a, b) = (tokens(&feat), tokens(&swapped));
    assert_eq!(&a[0..16], &b[7 * 16..8 * 16]);
    assert_eq!(&a[7 * 16..], &b[0..16]);
    assert_eq!(&a[16..7 * 16], &b[16..7 * 16]);
}

fn zero_branches(m: &mut Model) {
    let names: Vec<String> = m
        .params
        .names()
        .into_iter()
        .filter(|n| n.contains(".attn.") || n.contains(".mlp."))
        .map(String::from)
        .collect();
    for n in names {
        m.params.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn zero_branches_make_layers_identity() {
    let cfg = LiverFormerConfig {
        input_dims: [16, 16, 16],
        ..toy_config()
    };
    let mut m = Model::new(spec(Architecture::LiverFormer, cfg.clone()), 9).unwrap();
    zero_branches(&mut m);
    let (mut tape, bound) = bound_tape(&m);
    let p = Params {
        bound: &bound,
        prefix: "liverformer",
    };
    let z0 = tape.constant(randn(&[8, 16], &mut ChaCha8Rng::seed_from_u64(10)));
    let mut z = z0;
    for l in 0..cfg.transformer_layers {
        let next = transformer_layer(&mut tape, &cfg, &p, l, z).unwrap();
        assert_eq!(tape.shape(next), &[8, 16]);
        assert_eq!(tape.data(next), tape.data(z));
        z = next;
    }
    assert_eq!(tape.data(z), tape.data(z0));
}

#[test]
fn skips_are_live() {
    let cfg = LiverFormerConfig {
        input_dims: [8, 8, 8],
        ..toy_config()
    };
    let m = Model::new(spec(Architecture::LiverFormer, cfg.clone()), 11).unwrap();
    let run = |zero_skip: Option<usize>| {
        let (mut tape, bound) = bound_tape(&m);
        let p = Params {
            bound: &bound,
            prefix: "liverformer",
        };
        let x = tape.constant(randn(&[1, 8, 8, 8], &mut ChaCha8Rng::seed_from_u64(12)));
        let enc = encoder_forward(&mut tape, &cfg, &p, x).unwrap();
        let mut skips = enc.skips.clone();
        if let Some(s) = zero_skip {
            let shape = tape.shape(skips[s]).to_vec();
            skips[s] = tape.constant(Tensor::zeros(&shape));
        }
        let y = decoder_forward(&mut tape, &cfg, &p, enc.features, &skips).unwrap();
        tape.data(y).to_vec()
    };
    let base = run(None);
    for s in 0..3 {
        assert_ne!(run(Some(s)), base, "skip {s}");
    }
}

#[test]
fn perfect_logits_give_near_zero_loss() {
    let d = Dims::new(3, 3, 3);
    let labels = LabelVolume::new(d, [1.0; 3], (0..27).map(|i| (i % 10) as u8).collect()).unwrap();
    let g = one_hot::<f64>(&labels, 10).unwrap();
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::new(g.shape().to_vec(), g.data().iter().map(|v| v * 50.0).collect()).unwrap());
    let l = dice_loss(&mut tape, z, &g).unwrap();
    assert!(tape.data(l)[0] <= 1e-3);
}

#[test]
fn class_probabilities_sum_to_one() {
    let cfg = LiverFormerConfig {
        input_dims: [8, 8, 8],
        ..toy_config()
    };
    let m = Model::new(spec(Architecture::LiverFormer, cfg), 16).unwrap();
    let p = class_probabilities(&m.logits(&random_image([8, 8, 8], 17)).unwrap());
    let v = 512;
    for i in 0..v {
        let s: f32 = (0..10).map(|c| p.data()[c * v + i]).sum();
        assert!((s - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn argmax_tie_goes_to_lower_class() {
    let t = Tensor::new(vec![3, 2], vec![0.0f32, 1.0, 2.0, 1.0, 2.0, 0.5]).unwrap();
    assert_eq!(argmax_classes(&t).unwrap(), vec![1, 0]);
}

#[test]
fn dice_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let labels: Vec<u8> = (0..27).map(|_| rng.gen_range(0..10)).collect();
    let lv = LabelVolume::new(Dims::new(3, 3, 3), [1.0; 3], labels).unwrap();
    let g = one_hot::<f64>(&lv, 10).unwrap();
    let z = randn(&[10, 3, 3, 3], &mut rng);
    let r = check_gradients::<_, ChaCha8Rng>(&[z], |t, v| dice_loss(t, v[0], &g), None).unwrap();
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
}

#[test]
fn tiny_transformer_layer_gradients() {
    let cfg = LiverFormerConfig {
        hidden_dim: 8,
        heads: 2,
        ..toy_config()
    };
    let m = Model::new(spec(Architecture::LiverFormer, cfg.clone()), 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let z = randn(&[4, 8], &mut rng);
    let w = randn(&[4, 8], &mut rng);
    let names: Vec<String> = m
        .params
        .names()
        .into_iter()
        .filter(|n| n.contains("layer0."))
        .map(String::from)
        .collect();
    let mut inputs = vec![z];
    inputs.extend(names.iter().map(|n| m.params.get(n).unwrap().cast::<f64>()));
    let r = check_gradients::<_, ChaCha8Rng>(
        &inputs,
        |t, v| {
            let bound = BoundParams::from_parts(names.clone(), v[1..].to_vec());
            let p = Params {
                bound: &bound,
                prefix: "liverformer",
            };
            let y = transformer_layer(t, &cfg, &p, 0, v[0])?;
            t.weighted_sum(y, &w)
        },
        None,
    )
    .unwrap();
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
}
