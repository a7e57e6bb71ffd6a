use proptest::prelude::*;
use vanlka::lka::{
    attention_map, lka_forward, lka_variant_forward, measure_receptive_span, receptive_span,
    support_extent, LkaConfig, LkaVariant, LkaWeights,
};
use vanlka::nn::{conv2d, ConvWeights};
use vanlka::{elementwise_mul, NormalSampler, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::random_normal(shape, 0.0, 1.0, seed).unwrap()
}

fn random_weights(cfg: &LkaConfig, seed: u64) -> LkaWeights<f64> {
    LkaWeights::random(cfg, &mut NormalSampler::new(seed)).unwrap()
}

/// Plain `same`-padded convolution of one `h x w` plane by a `k x k` kernel
/// with dilation `d`, written independently of the library.
fn plane_conv(x: &[f64], h: usize, w: usize, kern: &[f64], k: usize, d: usize) -> Vec<f64> {
    let pad = (d * (k - 1) / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for ky in 0..k {
                for kx in 0..k {
                    let iy = y as isize + (ky * d) as isize - pad;
                    let ix = xx as isize + (kx * d) as isize - pad;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += kern[ky * k + kx] * x[iy as usize * w + ix as usize];
                    }
                }
            }
            out[y * w + xx] = acc;
        }
    }
    out
}

/// The attention chain composed from per-plane oracles: depthwise,
/// dilated depthwise, then a channel-mixing 1x1.
fn attention_oracle(f: &Tensor<f64>, wts: &LkaWeights<f64>, cfg: &LkaConfig) -> Vec<f64> {
    let s = f.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let (k1, k2, d) = (cfg.dw_kernel(), cfg.dwd_kernel(), cfg.dilation);
    let mut out = vec![0.0; f.len()];
    for b in 0..n {
        let mut mid = Vec::with_capacity(c);
        for ch in 0..c {
            let x = &f.data()[(b * c + ch) * plane..][..plane];
            let mut a = plane_conv(
                x,
                h,
                w,
                &wts.dw.weight.data()[ch * k1 * k1..][..k1 * k1],
                k1,
                1,
            );
            if let Some(bias) = &wts.dw.bias {
                a.iter_mut().for_each(|v| *v += bias.data()[ch]);
            }
            let mut bb = plane_conv(
                &a,
                h,
                w,
                &wts.dwd.weight.data()[ch * k2 * k2..][..k2 * k2],
                k2,
                d,
            );
            if let Some(bias) = &wts.dwd.bias {
                bb.iter_mut().for_each(|v| *v += bias.data()[ch]);
            }
            mid.push(bb);
        }
        for o in 0..c {
            for p in 0..plane {
                let mut acc = 0.0;
                for (i, m) in mid.iter().enumerate() {
                    acc += wts.pw.weight.data()[o * c + i] * m[p];
                }
                if let Some(bias) = &wts.pw.bias {
                    acc += bias.data()[o];
                }
                out[(b * c + o) * plane + p] = acc;
            }
        }
    }
    out
}

#[test]
fn attention_matches_composed_oracle() {
    for (k, d, bias) in [(21, 3, false), (7, 2, true), (14, 3, true), (5, 1, false)] {
        let cfg = LkaConfig::new(2, k, d).unwrap().with_bias(bias);
        let f = random(&[1, 2, 12, 12], 1);
        let wts = random_weights(&cfg, 2);
        let got = attention_map(&f, &wts, &cfg).unwrap();
        let want = attention_oracle(&f, &wts, &cfg);
        let err = got
            .data()
            .iter()
            .zip(&want)
            .fold(0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-12, "K={k} d={d}: {err}");
    }
}

#[test]
fn delta_weights_give_identity_attention() {
    let cfg = LkaConfig::new(3, 21, 3).unwrap();
    let f = random(&[2, 3, 9, 9], 3);
    let id = LkaWeights::identity(&cfg).unwrap();
    assert_eq!(attention_map(&f, &id, &cfg).unwrap(), f);
    let squared = f.map(|v| v * v);
    assert_eq!(lka_forward(&f, &id, &cfg).unwrap(), squared);

    let mut zero_pw = random_weights(&cfg, 4);
    zero_pw.pw = ConvWeights::zeros(&cfg.pw_spec()).unwrap();
    assert!(attention_map(&f, &zero_pw, &cfg)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(lka_forward(&f, &zero_pw, &cfg)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn output_is_attention_times_input() {
    let cfg = LkaConfig::new(4, 21, 3).unwrap();
    let f = random(&[1, 4, 10, 10], 5);
    let wts = random_weights(&cfg, 6);
    let a = attention_map(&f, &wts, &cfg).unwrap();
    let out = lka_forward(&f, &wts, &cfg).unwrap();
    assert_eq!(out, elementwise_mul(&a, &f).unwrap());
    assert_eq!(out, lka_variant_forward(&f, &wts, &cfg).unwrap());
}

#[test]
fn variant_identities() {
    let base = LkaConfig::new(2, 21, 3).unwrap();
    let f = random(&[1, 2, 8, 8], 7);

    let add = base.with_variant(LkaVariant::AddAttention);
    let zeros = LkaWeights::zeros(&add).unwrap();
    assert_eq!(lka_variant_forward(&f, &zeros, &add).unwrap(), f);

    let sig = base.with_variant(LkaVariant::SigmoidAttention);
    let wts = random_weights(&sig, 8);
    let out = lka_variant_forward(&f, &wts, &sig).unwrap();
    for (&o, &x) in out.data().iter().zip(f.data()) {
        assert!(o.abs() <= x.abs());
        if x != 0.0 {
            let gate = o / x;
            assert!(gate > 0.0 && gate < 1.0, "gate {gate}");
        }
    }

    assert!(lka_forward(&f, &wts, &sig).is_err());
}

#[test]
fn no_dwd_impulse_stays_in_local_window() {
    let cfg = LkaConfig::new(1, 21, 3)
        .unwrap()
        .with_variant(LkaVariant::NoDwd);
    let mut f = Tensor::<f64>::zeros(&[1, 1, 15, 15]).unwrap();
    f.data_mut()[7 * 15 + 7] = 1.0;
    let a = attention_map(&f, &LkaWeights::constant(&cfg, 1.0).unwrap(), &cfg).unwrap();
    assert_eq!(support_extent(a.data(), 15, 15), (5, 5));
}

#[test]
fn measured_span_matches_formula() {
    for (k, d, span) in [(7, 2, 9), (14, 3, 17), (21, 3, 23), (28, 4, 31)] {
        let cfg = LkaConfig::new(1, k, d).unwrap();
        assert_eq!(receptive_span(&cfg), span);
        assert_eq!(
            measure_receptive_span(&cfg).unwrap(),
            (span, span),
            "K={k} d={d}"
        );
    }
    for k in [1, 3, 5, 9, 13] {
        let cfg = LkaConfig::new(1, k, 1).unwrap();
        assert_eq!(receptive_span(&cfg), k);
        assert_eq!(measure_receptive_span(&cfg).unwrap(), (k, k));
    }
}

#[test]
fn pointwise_identity_keeps_channels_apart() {
    let cfg = LkaConfig::new(3, 21, 3).unwrap();
    let mut wts = random_weights(&cfg, 9);
    wts.pw = LkaWeights::identity(&cfg).unwrap().pw;
    let f = random(&[1, 3, 11, 11], 10);
    let base = attention_map(&f, &wts, &cfg).unwrap();
    for c in 0..3 {
        let mut g = f.clone();
        g.data_mut()[c * 121 + 60] += 1.0;
        let moved = attention_map(&g, &wts, &cfg).unwrap();
        for o in 0..3 {
            let same = base.data()[o * 121..][..121] == moved.data()[o * 121..][..121];
            assert_eq!(same, o != c, "perturbed {c}, observed {o}");
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(LkaConfig::new(4, 21, 0).is_err());
    assert!(LkaConfig::new(4, 2, 3).is_err());
    assert!(LkaConfig::new(0, 21, 3).is_err());
    assert!("squeeze".parse::<LkaVariant>().is_err());
    for v in LkaVariant::ALL {
        assert_eq!(v.name().parse::<LkaVariant>().unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_variant_preserves_shape(
        c in 1usize..4,
        h in 1usize..10,
        w in 1usize..10,
        vi in 0usize..LkaVariant::ALL.len(),
        seed in 0u64..100,
    ) {
        let v = LkaVariant::ALL[vi];
        let cfg = LkaConfig::new(c, 21, 3).unwrap().with_variant(v);
        let f = random(&[1, c, h, w], seed);
        let out = lka_variant_forward(&f, &random_weights(&cfg, seed + 1), &cfg).unwrap();
        prop_assert_eq!(out.shape(), f.shape());
        prop_assert!(out.is_finite());
    }

    #[test]
    fn depthwise_stages_match_library_conv(seed in 0u64..50) {
        let cfg = LkaConfig::new(2, 21, 3).unwrap();
        let f = random(&[1, 2, 7, 7], seed);
        let wts = random_weights(&cfg, seed + 100);
        let a = conv2d(&f, &wts.dw, &cfg.dw_spec().unwrap()).unwrap();
        let b = conv2d(&a, &wts.dwd, &cfg.dwd_spec().unwrap()).unwrap();
        let c = conv2d(&b, &wts.pw, &cfg.pw_spec()).unwrap();
        prop_assert_eq!(attention_map(&f, &wts, &cfg).unwrap(), c);
    }
}
