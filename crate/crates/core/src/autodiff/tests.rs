use super::gradcheck::{check_gradients, one_hot, op_suite, randn};
use super::*;
use crate::error::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
    }
}

#[test]
fn elementwise_examples() {
    let mut tp = Tape::new();
    let x = tp.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
    let z = tp.constant(Tensor::zeros(&[3]));
    let s = tp.add(x, z).unwrap();
    assert_eq!(tp.data(s), tp.data(x));
    let r = tp.relu(x);
    assert_eq!(tp.data(r), &[0.0, 0.0, 2.0]);
    let bad = tp.constant(Tensor::zeros(&[2]));
    assert!(matches!(tp.add(x, bad), Err(Error::ShapeMismatch(_))));
    let g = tp.gelu(x);
    // 0.5·2·(1 + tanh(0.79788·(2 + 0.35772)))
    assert!((tp.data(g)[2] - 1.954_597_694_087_775).abs() < 1e-12);
}

#[test]
fn linear_hand_example() {
    let mut tp = Tape::new();
    let x = tp.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = tp.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tp.leaf(t(&[2], &[1.0, 1.0]));
    let y = tp.linear(x, w, Some(b)).unwrap();
    assert_eq!(tp.data(y), &[2.0, 3.0, 4.0, 5.0]);
    let w3 = tp.leaf(Tensor::zeros(&[3, 2]));
    assert!(tp.linear(x, w3, None).is_err());
}

fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let [ci, d, h, w] = x.shape().try_into().unwrap();
    let co = k.shape()[0];
    let ks = k.shape()[2];
    let out = |n: usize| (n + 2 * pad - ks) / stride + 1;
    let (od, oh, ow) = (out(d), out(h), out(w));
    let mut y = vec![0.0; co * od * oh * ow];
    for o in 0..co {
        for z in 0..od {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut s = b[o];
                    for c in 0..ci {
                        for a in 0..ks {
                            for bb in 0..ks {
                                for cc in 0..ks {
                                    let iz = (z * stride + a) as isize - pad as isize;
                                    let iy = (yy * stride + bb) as isize - pad as isize;
                                    let ix = (xx * stride + cc) as isize - pad as isize;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((c * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                    let ki = (((o * ci + c) * ks + a) * ks + bb) * ks + cc;
                                    s += x.data()[xi] * k.data()[ki];
                                }
                            }
                        }
                    }
                    y[((o * od + z) * oh + yy) * ow + xx] = s;
                }
            }
        }
    }
    y
}

#[test]
fn conv3d_examples_and_oracle() {
    let mut tp = Tape::new();
    let x = tp.leaf(randn(&[2, 3, 4, 5], &mut ChaCha8Rng::seed_from_u64(0)));
    let mut id = Tensor::zeros(&[2, 2, 1, 1, 1]);
    id.data_mut()[0] = 1.0;
    id.data_mut()[3] = 1.0;
    let k = tp.leaf(id);
    let y = tp.conv3d(x, k, None, 1, 0).unwrap();
    assert_eq!(tp.data(y), tp.data(x));

    let ones = tp.leaf(Tensor::full(&[1, 3, 3, 3], 1.0));
    let k1 = tp.leaf(Tensor::full(&[1, 1, 3, 3, 3], 1.0));
    let y = tp.conv3d(ones, k1, None, 1, 0).unwrap();
    assert_eq!(tp.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tp.data(y), &[27.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (dims, stride, pad) in [([5, 5, 5], 1, 1), ([5, 5, 5], 1, 0), ([6, 4, 6], 2, 1), ([4, 6, 4], 2, 0)] {
        let x = randn(&[2, dims[0], dims[1], dims[2]], &mut rng);
        let k = randn(&[3, 2, 3, 3, 3], &mut rng);
        let b = randn(&[3], &mut rng);
        let want = conv_oracle(&x, &k, b.data(), stride, pad);
        let mut tp = Tape::new();
        let (xv, kv, bv) = (tp.leaf(x), tp.leaf(k), tp.leaf(b));
        let y = tp.conv3d(xv, kv, Some(bv), stride, pad).unwrap();
        close(tp.data(y), &want, 1e-6);
    }
}

#[test]
fn conv3d_rejects_bad_geometry() {
    let mut tp = Tape::new();
    let x = tp.leaf(Tensor::<f64>::zeros(&[1, 5, 4, 4]));
    let k = tp.leaf(Tensor::zeros(&[1, 1, 3, 3, 3]));
    assert!(matches!(tp.conv3d(x, k, None, 2, 1), Err(Error::NonIntegralOutput(_))));
    let small = tp.leaf(Tensor::<f64>::zeros(&[1, 2, 2, 2]));
    assert!(matches!(tp.conv3d(small, k, None, 1, 0), Err(Error::NonIntegralOutput(_))));
    let even = tp.leaf(Tensor::zeros(&[1, 1, 2, 2, 2]));
    assert!(matches!(tp.conv3d(x, even, None, 1, 0), Err(Error::ShapeMismatch(_))));
}

#[test]
fn layer_norm_properties() {
    let mut tp = Tape::new();
    let x = tp.leaf(t(&[2, 4], &[3.0, 3.0, 3.0, 3.0, 1.0, 2.0, 4.0, 9.0]));
    let g = tp.leaf(Tensor::full(&[4], 1.0));
    let b = tp.leaf(Tensor::zeros(&[4]));
    let y = tp.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(&tp.data(y)[..4], &[0.0; 4]);
    let row = &tp.data(y)[4..];
    let mean = row.iter().sum::<f64>() / 4.0;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() <= 1e-9);
    assert!((var - 1.0).abs() <= 1e-5);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut tp = Tape::new();
    let u = tp.leaf(Tensor::<f64>::full(&[2, 4], 3.0));
    let s = tp.softmax(u);
    assert!(tp.data(s).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let x = tp.leaf(randn(&[5, 7], &mut ChaCha8Rng::seed_from_u64(2)).cast::<f64>());
    let big = tp.scale(x, 300.0);
    let s = tp.softmax(big);
    for row in tp.data(s).chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn attention_single_token_and_hand_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tp = Tape::new();
    let z = tp.leaf(randn(&[1, 4], &mut rng));
    let w: Vec<Var> = (0..4).map(|_| tp.leaf(randn(&[4, 4], &mut rng))).collect();
    let y = multi_head_attention(&mut tp, z, 2, w[0], w[1], w[2], w[3]).unwrap();
    let v = tp.matmul(z, w[2]).unwrap();
    let want = tp.matmul(v, w[3]).unwrap();
    close(tp.data(y), tp.data(want), 1e-12);
    assert!(matches!(
        multi_head_attention(&mut tp, z, 3, w[0], w[1], w[2], w[3]),
        Err(Error::IndivisibleHeads { dim: 4, heads: 3 })
    ));

    // computed independently with numpy
    let mut tp = Tape::new();
    let z = tp.leaf(t(&[2, 2], &[1.0, 0.0, 0.5, 2.0]));
    let wq = tp.leaf(t(&[2, 2], &[1.0, 0.5, 0.0, 1.0]));
    let wk = tp.leaf(t(&[2, 2], &[0.5, 0.0, 1.0, 1.0]));
    let wv = tp.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let wo = tp.leaf(t(&[2, 2], &[1.0, -1.0, 0.5, 2.0]));
    let y = multi_head_attention(&mut tp, z, 1, wq, wk, wv, wo).unwrap();
    close(
        tp.data(y),
        &[9.873654161333398, 10.436228930148209, 10.803203149752754, 11.314136308099823],
        1e-12,
    );
}

#[test]
fn attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = randn(&[5, 8], &mut rng);
    let ws: Vec<Tensor<f64>> = (0..4).map(|_| randn(&[8, 8], &mut rng)).collect();
    let perm = [3, 0, 4, 1, 2];
    let mut zp = Tensor::zeros(&[5, 8]);
    for (i, &p) in perm.iter().enumerate() {
        zp.data_mut()[i * 8..(i + 1) * 8].copy_from_slice(&z.data()[p * 8..(p + 1) * 8]);
    }
    let run = |z: &Tensor<f64>| {
        let mut tp = Tape::new();
        let zv = tp.leaf(z.clone());
        let w: Vec<Var> = ws.iter().map(|w| tp.leaf(w.clone())).collect();
        let y = multi_head_attention(&mut tp, zv, 4, w[0], w[1], w[2], w[3]).unwrap();
        tp.data(y).to_vec()
    };
    let (a, b) = (run(&z), run(&zp));
    for (i, &p) in perm.iter().enumerate() {
        close(&b[i * 8..(i + 1) * 8], &a[p * 8..(p + 1) * 8], 1e-12);
    }
}

#[test]
fn upsample_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tp = Tape::new();
    let x = tp.leaf(randn(&[2, 2, 3, 2], &mut rng));
    let y = tp.upsample_trilinear(x, 1).unwrap();
    assert_eq!(tp.data(y), tp.data(x));
    let c = tp.leaf(Tensor::full(&[1, 2, 3, 2], 0.7));
    let y = tp.upsample_trilinear(c, 3).unwrap();
    assert!(tp.data(y).iter().all(|&v| (v - 0.7).abs() < 1e-15));

    // frozen from torch.nn.functional.interpolate(mode="trilinear", align_corners=False)
    let x = tp.leaf(t(&[1, 1, 2, 2], &[0.0, 1.0, 2.0, 3.0]));
    let y = tp.upsample_trilinear(x, 2).unwrap();
    let plane = [0.0, 0.25, 0.75, 1.0, 0.5, 0.75, 1.25, 1.5, 1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75, 3.0];
    assert_eq!(&tp.data(y)[..16], &plane);
    assert_eq!(&tp.data(y)[16..], &plane);

    // pointwise oracle
    let src = randn(&[2, 3, 2, 4], &mut rng);
    let f = 3;
    let xv = tp.leaf(src.clone());
    let y = tp.upsample_trilinear(xv, f).unwrap();
    let dims = [3usize, 2, 4];
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        (i0, (i0 + 1).min(n - 1), s - i0 as f64)
    };
    let od = dims.map(|d| d * f);
    for c in 0..2 {
        for z in 0..od[0] {
            for yy in 0..od[1] {
                for x in 0..od[2] {
                    let (z0, z1, wz) = coord(z, dims[0]);
                    let (y0, y1, wy) = coord(yy, dims[1]);
                    let (x0, x1, wx) = coord(x, dims[2]);
                    let g = |a: usize, b: usize, e: usize| src.data()[((c * dims[0] + a) * dims[1] + b) * dims[2] + e];
                    let mut want = 0.0;
                    for (za, wa) in [(z0, 1.0 - wz), (z1, wz)] {
                        for (yb, wb) in [(y0, 1.0 - wy), (y1, wy)] {
                            for (xc, wc) in [(x0, 1.0 - wx), (x1, wx)] {
                                want += wa * wb * wc * g(za, yb, xc);
                            }
                        }
                    }
                    let got = tp.data(y)[((c * od[0] + z) * od[1] + yy) * od[2] + x];
                    assert!((got - want).abs() <= 1e-6);
                }
            }
        }
    }
}

#[test]
fn patch_round_trip_and_counting() {
    let mut tp = Tape::new();
    let x = tp.leaf(randn(&[3, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(6)));
    let p = tp.patchify(x, 2).unwrap();
    assert_eq!(tp.shape(p), &[8, 24]);
    let back = tp.unpatchify(p, 2, 3, [4, 4, 4]).unwrap();
    assert_eq!(tp.data(back), tp.data(x));
    let odd = tp.leaf(Tensor::<f64>::zeros(&[1, 4, 3, 4]));
    assert!(matches!(tp.patchify(odd, 2), Err(Error::NotDivisibleByPatch { extent: 3, patch: 2 })));
}

#[test]
fn concat_splits_gradient_at_seam() {
    let mut tp = Tape::new();
    let a = tp.leaf(t(&[2, 1], &[1.0, 2.0]));
    let b = tp.leaf(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
    let c = tp.concat(&[a, b], 1).unwrap();
    assert_eq!(tp.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let l = tp
        .weighted_sum(c, &t(&[2, 3], &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0]))
        .unwrap();
    tp.backward(l).unwrap();
    assert_eq!(tp.grad(a).unwrap(), &[10.0, 40.0]);
    assert_eq!(tp.grad(b).unwrap(), &[20.0, 30.0, 50.0, 60.0]);
}

#[test]
fn backward_semantics() {
    let mut tp = Tape::new();
    let x = tp.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
    let s = tp.sum(x);
    let before = tp.data(x).to_vec();
    tp.backward(s).unwrap();
    assert_eq!(tp.grad(x).unwrap(), &[1.0; 4]);
    assert_eq!(tp.data(x), &before[..]);
    tp.backward(s).unwrap();
    assert_eq!(tp.grad(x).unwrap(), &[2.0; 4]);
    tp.zero_grads();

    let s2 = tp.sum(x);
    let twice = tp.add(s, s2).unwrap();
    tp.backward(twice).unwrap();
    assert_eq!(tp.grad(x).unwrap(), &[2.0; 4]);

    assert!(matches!(tp.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn dice_loss_bounds() {
    let labels: Vec<u8> = (0..27).map(|i| (i % 10) as u8).collect();
    let target = one_hot(&labels, 10, &[3, 3, 3]);
    let mut tp = Tape::new();
    let saturated = tp.leaf(Tensor::new(vec![10, 3, 3, 3], target.data().iter().map(|&g| g * 60.0).collect()).unwrap());
    let l = tp.dice_loss(saturated, &target, 1e-5).unwrap();
    assert!(tp.data(l)[0] <= 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let z = tp.leaf(randn(&[10, 3, 3, 3], &mut rng));
        let z = tp.scale(z, 5.0);
        let l = tp.dice_loss(z, &target, 1e-5).unwrap();
        assert!((0.0..=1.0).contains(&tp.data(l)[0]));
    }
}

#[test]
fn every_op_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..3 {
        for (name, r) in op_suite(&mut rng).unwrap() {
            assert!(r.max_rel_err <= 1e-6, "seed {seed} {name}: {r:?}");
        }
    }
}

#[test]
fn sampled_gradcheck_reports_checked_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&[50], &mut rng);
    let r = check_gradients(&[x], |t, v| Ok(t.sum(v[0])), Some((7, &mut rng))).unwrap();
    assert_eq!(r.checked, 7);
    assert!(r.max_rel_err < 1e-9);
}

#[test]
fn checkpoint_round_trip_and_rejects_garbage() {
    let mut store = ParamStore::<f32>::new();
    store.insert("enc.0.w", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-30, 7.0]).unwrap()).unwrap();
    store.insert("pos", Tensor::scalar(0.25)).unwrap();
    assert!(store.insert("pos", Tensor::scalar(0.0)).is_err());
    let (bytes, entries) = encode_checkpoint(&store);
    assert_eq!(entries[1].offset, bytes.len() - 4);
    assert_eq!(decode_checkpoint(&bytes).unwrap(), store);
    for cut in 0..bytes.len() {
        assert!(decode_checkpoint(&bytes[..cut]).is_err());
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic)));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("params.bin");
    save_checkpoint(&p, &store, serde_json::json!({"model": "toy"})).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap(), store);
    assert_eq!(load_manifest(&p).unwrap().tensors, entries);
}

proptest! {
    #[test]
    fn checkpoint_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_checkpoint(&bytes);
    }

    #[test]
    fn softmax_slices_sum_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let mut tp = Tape::new();
        let n = v.len();
        let x = tp.leaf(Tensor::new(vec![1, n], v).unwrap());
        let s = tp.softmax(x);
        prop_assert!((tp.data(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn kinks_are_excluded_from_the_check() {
    // the first element sits within one step of the ReLU corner
    let x = Tensor::new(vec![3], vec![5e-5, 1.0, -2.0]).unwrap();
    let r = check_gradients::<_, ChaCha8Rng>(&[x], |t, v| {
        let y = t.relu(v[0]);
        Ok(t.sum(y))
    }, None)
    .unwrap();
    assert_eq!((r.checked, r.kinks), (2, 1));
    assert!(r.max_rel_err < 1e-9);
}
