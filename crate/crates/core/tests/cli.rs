use std::path::Path;
use std::process::Command;

use vanlka::cli::{run, EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE};
use vanlka::cost::model_cost;
use vanlka::io::{load_checkpoint, read_image, write_raw_tensor};
use vanlka::van::{model_forward, Preset};
use vanlka::Tensor;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn vanlka(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("vanlka").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn golden_outputs() {
    let cases: [(&[&str], &str); 5] = [
        (
            &["table", "--kernel", "21", "--channels", "32,64,128,256,512"],
            "table_k21.txt",
        ),
        (&["decompose", "--kernel", "21"], "decompose_k21.txt"),
        (&["shapes", "b0", "--input", "224", "224"], "shapes_b0.txt"),
        (&["summarize", "micro"], "summarize_micro.txt"),
        (
            &["costs", "micro", "--input", "32", "32", "--bias"],
            "costs_micro_32.txt",
        ),
    ];
    for (args, file) in cases {
        let o = vanlka(args);
        assert_eq!(o.code, EXIT_OK, "{args:?}: {}", o.stderr);
        assert_eq!(o.stdout, golden(file), "{args:?}");
        assert_eq!(vanlka(args).stdout, o.stdout, "{args:?} is not stable");
    }
}

#[test]
fn table_ours_column() {
    let o = vanlka(&["table", "--kernel", "21", "--channels", "32,64,128,256,512"]);
    let ours: Vec<u64> = o
        .stdout
        .lines()
        .skip(2)
        .map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ours, [3392, 8832, 25856, 84480, 300032]);
}

#[test]
fn decompose_report() {
    let o = vanlka(&["decompose", "--kernel", "21"]);
    let field = |key: &str| {
        o.stdout
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .map(|v| v.trim().to_string())
            .unwrap()
    };
    assert_eq!(field("dilation"), "3");
    assert_eq!(field("dw"), "5x5");
    assert_eq!(field("dwd"), "7x7 dilation 3");
    assert_eq!(field("span"), "23");
    let capped = vanlka(&["decompose", "--kernel", "21", "--dmax", "2"]);
    assert!(capped.stdout.contains("dilation     2\n"));
}

#[test]
fn costs_totals_match_library() {
    for (preset, bias) in [("b0", true), ("b1", false), ("micro", true)] {
        let mut args = vec!["costs", preset, "--input", "224", "224"];
        if bias {
            args.push("--bias");
        }
        let o = vanlka(&args);
        let report =
            model_cost(&preset.parse::<Preset>().unwrap().variant(), 224, 224, bias).unwrap();
        assert!(o
            .stdout
            .contains(&format!("params       {}\n", report.total_params)));
        assert!(o
            .stdout
            .contains(&format!("macs         {}\n", report.total_macs)));
        assert!(o
            .stdout
            .contains(&format!("flops (2x)   {}\n", 2 * report.total_macs)));
    }
}

#[test]
fn usage_errors() {
    for args in [
        &["frobnicate"][..],
        &["table", "--kernel"],
        &["table", "--colour", "red"],
        &["shapes", "b0", "--input", "224"],
        &["gradcheck", "--op", "mul", "--all"],
    ] {
        let o = vanlka(args);
        assert_eq!(o.code, EXIT_USAGE, "{args:?}");
        assert!(o.stdout.is_empty());
        assert!(!o.stderr.is_empty());
    }
    let o = vanlka(&["shapes", "b0", "--input", "225", "224"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("geometry"));
    let o = vanlka(&["summarize", "b42"]);
    assert_eq!(o.code, EXIT_USAGE);
    let o = vanlka(&["gradcheck", "--op", "nope"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stdout.is_empty());
    assert_eq!(vanlka(&["--help"]).code, EXIT_OK);
}

#[test]
fn gradcheck_exit_codes() {
    let ok = vanlka(&["gradcheck", "--op", "lka_full", "--seeds", "2"]);
    assert_eq!(ok.code, EXIT_OK, "{}", ok.stdout);
    assert_eq!(ok.stdout.lines().filter(|l| l.ends_with("pass")).count(), 2);
    let bad = vanlka(&["gradcheck", "--op", "lka_full", "--inject-fault"]);
    assert_eq!(bad.code, EXIT_CHECK_FAILED);
    assert!(bad.stdout.contains("FAIL"));
}

#[test]
fn init_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("micro.vanw");
    let w = weights.to_str().unwrap();
    let o = vanlka(&["init", "micro", "--seed", "5", "--out", w]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);

    let image = dir.path().join("zeros.bin");
    write_raw_tensor(&image, &Tensor::zeros(&[1, 3, 64, 64]).unwrap()).unwrap();
    let img = image.to_str().unwrap();
    let a = vanlka(&["infer", "micro", "--weights", w, "--image", img]);
    assert_eq!(a.code, EXIT_OK, "{}", a.stderr);
    assert_eq!(
        vanlka(&["infer", "micro", "--weights", w, "--image", img]).stdout,
        a.stdout
    );

    // The printed logits agree with the library path to the printed precision.
    let model = load_checkpoint::<f32>(&weights, &Preset::Micro.variant()).unwrap();
    let logits = model_forward(&read_image(&image).unwrap(), &model)
        .unwrap()
        .logits;
    let printed: Vec<f32> = a
        .stdout
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(printed.len(), 2);
    for (p, l) in printed.iter().zip(logits.data()) {
        assert_eq!(format!("{p:.6}"), format!("{l:.6}"));
    }
    let best = if logits.data()[1] > logits.data()[0] {
        1
    } else {
        0
    };
    assert_eq!(
        a.stdout.lines().next().unwrap(),
        format!("image 0 class {best}")
    );

    let odd = dir.path().join("odd.bin");
    write_raw_tensor(&odd, &Tensor::zeros(&[1, 3, 33, 33]).unwrap()).unwrap();
    let odd = odd.to_str().unwrap();
    let e = vanlka(&["infer", "micro", "--weights", w, "--image", odd]);
    assert_eq!(e.code, EXIT_USAGE);
    assert!(e.stderr.contains("geometry error"), "{}", e.stderr);
    let cropped = vanlka(&[
        "infer",
        "micro",
        "--weights",
        w,
        "--image",
        odd,
        "--center-crop",
    ]);
    assert_eq!(cropped.code, EXIT_OK);

    let missing = vanlka(&["infer", "micro", "--weights", w, "--image", "/no/such/file"]);
    assert_eq!(missing.code, EXIT_USAGE);
    let wrong = vanlka(&["infer", "b0", "--weights", w, "--image", img]);
    assert_eq!(wrong.code, EXIT_USAGE);
    assert!(wrong.stderr.contains("integrity"));
}

#[test]
fn train_demo_output() {
    let o = vanlka(&["train-demo", "--steps", "3", "--seed", "1"]);
    assert_eq!(o.code, EXIT_OK);
    let losses: Vec<f64> = o
        .stdout
        .lines()
        .skip(2)
        .take(4)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 4);
    assert!(losses[3] < losses[0]);
    assert_eq!(
        vanlka(&["train-demo", "--steps", "3", "--seed", "1"]).stdout,
        o.stdout
    );
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_vanlka");
    let status = |args: &[&str]| Command::new(exe).args(args).output().unwrap();
    let ok = status(&["decompose", "--kernel", "7"]);
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("span         9"));
    assert_eq!(status(&["nope"]).status.code(), Some(EXIT_USAGE));
    let fault = status(&["gradcheck", "--op", "gelu", "--inject-fault"]);
    assert_eq!(fault.status.code(), Some(EXIT_CHECK_FAILED));
}
