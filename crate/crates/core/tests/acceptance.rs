//! End-to-end acceptance run. Each criterion is timed against its budget and
//! reported on one line; the test fails if any line reports FAIL.

use std::time::{Duration, Instant};

use vanlka::checks::{run_check, CHECK_NAMES};
use vanlka::cli::{run, EXIT_OK};
use vanlka::cost::{model_cost, optimal_dilation};
use vanlka::io::{decode_checkpoint, encode_checkpoint};
use vanlka::lka::{
    lka_forward, lka_variant_forward, measure_receptive_span, receptive_span, LkaConfig,
    LkaVariant, LkaWeights,
};
use vanlka::van::{build_van, model_forward, skeleton_van, train_demo, Preset, DEMO_LR};
use vanlka::{NormalSampler, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn table() -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(["vanlka", "table", "--kernel", "21"], &mut out, &mut err);
    ensure(code == EXIT_OK, String::from_utf8_lossy(&err).into_owned())?;
    let text = String::from_utf8(out).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<u64>> = text
        .lines()
        .skip(2)
        .map(|l| {
            l.split_whitespace()
                .take(4)
                .map(|v| v.parse().unwrap())
                .collect()
        })
        .collect();
    let want: [[u64; 4]; 5] = [
        [32, 451_584, 15_136, 3_392],
        [64, 1_806_336, 32_320, 8_832],
        [128, 7_225_344, 72_832, 25_856],
        [256, 28_901_376, 178_432, 84_480],
        [512, 115_605_504, 487_936, 300_032],
    ];
    ensure(rows.len() == 5, format!("{} rows", rows.len()))?;
    for (got, want) in rows.iter().zip(&want) {
        ensure(
            got[..] == want[..],
            format!("row {got:?}, expected {want:?}"),
        )?;
    }
    Ok("15/15 values exact".into())
}

fn dilations() -> Outcome {
    let got: Vec<u64> = [7, 14, 21, 28]
        .iter()
        .map(|&k| optimal_dilation(k, k))
        .collect();
    ensure(got == [2, 3, 3, 4], format!("{got:?}"))?;
    Ok(format!("K=7,14,21,28 -> {got:?}"))
}

fn budgets() -> Outcome {
    let params = [4.1, 13.9, 26.6, 44.8, 60.3, 90.0, 200.0];
    let macs = [0.9, 2.5, 5.0, 9.0, 12.2];
    let mut worst: (f64, f64) = (0.0, 0.0);
    for (i, p) in Preset::ALL
        .iter()
        .filter(|p| **p != Preset::Micro)
        .enumerate()
    {
        let r = model_cost(&p.variant(), 224, 224, true).map_err(|e| e.to_string())?;
        let dp = (r.total_params as f64 / 1e6 / params[i] - 1.0).abs();
        ensure(dp <= 0.05, format!("{p}: {} params", r.total_params))?;
        worst.0 = worst.0.max(dp);
        if let Some(&g) = macs.get(i) {
            let dm = (r.total_macs as f64 / 1e9 / g - 1.0).abs();
            ensure(dm <= 0.15, format!("{p}: {} macs", r.total_macs))?;
            worst.1 = worst.1.max(dm);
        }
    }
    Ok(format!(
        "worst deviation params {:.1}% macs {:.1}%",
        100.0 * worst.0,
        100.0 * worst.1
    ))
}

fn pyramid() -> Outcome {
    let model = build_van::<f32>(&Preset::B0.variant(), 0).map_err(|e| e.to_string())?;
    let x = Tensor::random_normal(&[1, 3, 224, 224], 0.0, 1.0, 0).map_err(|e| e.to_string())?;
    let out = model_forward(&x, &model).map_err(|e| e.to_string())?;
    let got: Vec<[usize; 3]> = out
        .features
        .iter()
        .map(|f| [f.shape()[1], f.shape()[2], f.shape()[3]])
        .collect();
    let want = [[32, 56, 56], [64, 28, 28], [160, 14, 14], [256, 7, 7]];
    ensure(got == want, format!("{got:?}"))?;
    ensure(out.logits.is_finite(), "non-finite logits")?;
    Ok("56/28/14/7 with 32/64/160/256 channels".into())
}

fn spans() -> Outcome {
    for (k, d, span) in [(7, 2, 9), (14, 3, 17), (21, 3, 23), (28, 4, 31)] {
        let cfg = LkaConfig::new(1, k, d).map_err(|e| e.to_string())?;
        let measured = measure_receptive_span(&cfg).map_err(|e| e.to_string())?;
        ensure(
            receptive_span(&cfg) == span && measured == (span, span),
            format!("K={k} d={d}: measured {measured:?}, expected {span}"),
        )?;
    }
    Ok("9, 17, 23, 31".into())
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for name in CHECK_NAMES {
        for seed in 0..3 {
            let o = run_check(name, seed, false).map_err(|e| format!("{name}: {e}"))?;
            ensure(
                o.report.passed,
                format!("{name} seed {seed}: {:.3e}", o.report.max_rel_error),
            )?;
            worst = worst.max(o.report.max_rel_error / o.tolerance);
            count += 1;
        }
    }
    let detected = run_check("lka_full", 0, true).map_err(|e| e.to_string())?;
    ensure(!detected.report.passed, "injected fault went unnoticed")?;
    Ok(format!(
        "{count} checks, worst error at {:.1e} of tolerance",
        worst
    ))
}

fn identities() -> Outcome {
    let err = |e: vanlka::Error| e.to_string();
    let cfg = LkaConfig::new(3, 21, 3).map_err(err)?;
    let f = Tensor::<f64>::random_normal(&[2, 3, 9, 9], 0.0, 1.0, 1).map_err(err)?;
    let id = LkaWeights::identity(&cfg).map_err(err)?;
    ensure(
        lka_forward(&f, &id, &cfg).map_err(err)? == f.map(|v| v * v),
        "identity weights do not give F*F",
    )?;

    let add = cfg.with_variant(LkaVariant::AddAttention);
    let zeros = LkaWeights::zeros(&add).map_err(err)?;
    ensure(
        lka_variant_forward(&f, &zeros, &add).map_err(err)? == f,
        "zero add_attention is not F",
    )?;

    let sig = cfg.with_variant(LkaVariant::SigmoidAttention);
    let wts = LkaWeights::random(&sig, &mut NormalSampler::new(2)).map_err(err)?;
    let out = lka_variant_forward(&f, &wts, &sig).map_err(err)?;
    for (&o, &x) in out.data().iter().zip(f.data()) {
        if x != 0.0 {
            let gate = o / x;
            ensure(gate > 0.0 && gate < 1.0, format!("gate {gate}"))?;
        }
    }
    Ok("F*F, F, gates in (0,1)".into())
}

fn structure() -> Outcome {
    for p in Preset::ALL {
        let v = p.variant();
        let count = skeleton_van::<f32>(&v)
            .map_err(|e| e.to_string())?
            .parameter_count();
        let cost = model_cost(&v, 224, 224, true)
            .map_err(|e| e.to_string())?
            .total_params;
        ensure(count == cost, format!("{p}: built {count}, counted {cost}"))?;
    }
    Ok(format!("{} presets", Preset::ALL.len()))
}

fn training() -> Outcome {
    let demo = train_demo(50, 0, DEMO_LR).map_err(|e| e.to_string())?;
    let (first, last) = (demo.losses[0], *demo.losses.last().unwrap());
    ensure(
        (first - 2f64.ln()).abs() <= 0.3,
        format!("initial loss {first:.4}"),
    )?;
    ensure(last < 0.1 * first, format!("loss {first:.4} -> {last:.4}"))?;
    Ok(format!("loss {first:.4} -> {last:.4}"))
}

fn serialization() -> Outcome {
    let err = |e: vanlka::Error| e.to_string();
    for p in [Preset::Micro, Preset::B0] {
        let v = p.variant();
        let model = build_van::<f32>(&v, 7).map_err(err)?;
        let bytes = encode_checkpoint(&model);
        let back = decode_checkpoint::<f32>(&bytes, &v).map_err(err)?;
        ensure(back == model, format!("{p}: weights differ"))?;
        ensure(
            encode_checkpoint(&back) == bytes,
            format!("{p}: bytes differ"),
        )?;
        let x = Tensor::random_normal(&[2, 3, 32, 32], 0.0, 1.0, 8).map_err(err)?;
        let a = model_forward(&x, &model).map_err(err)?.logits;
        let b = model_forward(&x, &back).map_err(err)?.logits;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), format!("{p}: logits differ"))?;
    }
    Ok("micro and B0 bitwise".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("1 decomposition table", table, Duration::from_secs(1)),
        ("2 optimal dilation", dilations, Duration::from_secs(1)),
        ("3 model budgets", budgets, Duration::from_secs(5)),
        ("4 resolution pyramid", pyramid, Duration::from_secs(60)),
        ("5 receptive span", spans, Duration::from_secs(10)),
        ("6 gradient suite", gradients, Duration::from_secs(300)),
        ("7 lka identities", identities, Duration::from_secs(60)),
        ("8 structural counts", structure, Duration::from_secs(120)),
        ("9 training demo", training, Duration::from_secs(180)),
        ("10 serialization", serialization, Duration::from_secs(60)),
    ];
    let mut failed = Vec::new();
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let verdict = match &outcome {
            Ok(_) if took > budget => Err(format!("took {took:.2?}, budget {budget:?}")),
            other => other.clone(),
        };
        match verdict {
            Ok(detail) => println!("PASS  {name:<24} {took:>10.2?}  {detail}"),
            Err(why) => {
                println!("FAIL  {name:<24} {took:>10.2?}  {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
