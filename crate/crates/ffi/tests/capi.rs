use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use vanlka::van::{build_van, model_forward, Preset};
use vanlka::Tensor;
use vanlka_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { vanlka_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0, "no error recorded");
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

fn new_model(variant: &str, seed: u64) -> *mut VanlkaModel {
    let name = CString::new(variant).unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { vanlka_model_new(name.as_ptr(), seed, &mut m) };
    assert_eq!(status, VanlkaStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn decomposition_counts() {
    assert_eq!(vanlka_standard_conv_params(21, 32), 451_584);
    assert_eq!(vanlka_mobilenet_decomp_params(21, 32), 15_136);
    assert_eq!(vanlka_lka_decomp_params(21, 3, 32), 3_392);
    assert_eq!(vanlka_lka_decomp_macs(21, 3, 32, 14, 14), 664_832);
    assert_eq!(vanlka_optimal_dilation(21, 21), 3);
    assert_eq!(vanlka_optimal_dilation(0, 5), 0);
    assert_eq!(vanlka_lka_decomp_params(21, 0, 32), 0);
}

#[test]
fn model_cost_matches_library() {
    let name = CString::new("b0").unwrap();
    let (mut params, mut macs) = (0u64, 0u64);
    let status =
        unsafe { vanlka_model_cost(name.as_ptr(), 224, 224, true, &mut params, &mut macs) };
    assert_eq!(status, VanlkaStatus::Ok);
    let report = vanlka::cost::model_cost(&Preset::B0.variant(), 224, 224, true).unwrap();
    assert_eq!((params, macs), (report.total_params, report.total_macs));

    let status =
        unsafe { vanlka_model_cost(name.as_ptr(), 225, 224, true, &mut params, &mut macs) };
    assert_eq!(status, VanlkaStatus::Geometry);
}

#[test]
fn forward_matches_library() {
    let m = new_model("micro", 7);
    assert_eq!(unsafe { vanlka_model_num_classes(m) }, 2);
    let lib_model = build_van::<f32>(&Preset::Micro.variant(), 7).unwrap();
    assert_eq!(
        unsafe { vanlka_model_parameter_count(m) },
        lib_model.parameter_count()
    );

    let images: Vec<f32> = (0..2 * 3 * 32 * 32)
        .map(|i| ((i % 17) as f32 - 8.0) / 8.0)
        .collect();
    let mut logits = [0f32; 4];
    let status =
        unsafe { vanlka_model_forward(m, images.as_ptr(), 2, 32, 32, logits.as_mut_ptr(), 4) };
    assert_eq!(status, VanlkaStatus::Ok);

    let x = Tensor::from_vec(&[2, 3, 32, 32], images.clone()).unwrap();
    let expected = model_forward(&x, &lib_model).unwrap().logits;
    assert_eq!(&logits[..], expected.data());

    let status =
        unsafe { vanlka_model_forward(m, images.as_ptr(), 2, 32, 32, logits.as_mut_ptr(), 3) };
    assert_eq!(status, VanlkaStatus::BufferTooSmall);
    let status =
        unsafe { vanlka_model_forward(m, images.as_ptr(), 1, 33, 33, logits.as_mut_ptr(), 4) };
    assert_eq!(status, VanlkaStatus::Geometry);
    assert!(last_error().contains("33x33"));
    unsafe { vanlka_model_free(m) };
}

#[test]
fn checkpoint_round_trip_and_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.vanw").to_str().unwrap()).unwrap();
    let m = new_model("micro", 3);
    assert_eq!(
        unsafe { vanlka_model_save(m, path.as_ptr()) },
        VanlkaStatus::Ok
    );

    let micro = CString::new("micro").unwrap();
    let mut loaded = ptr::null_mut();
    let status = unsafe { vanlka_model_load(micro.as_ptr(), path.as_ptr(), &mut loaded) };
    assert_eq!(status, VanlkaStatus::Ok);
    let images = vec![0.25f32; 3 * 32 * 32];
    let (mut a, mut b) = ([0f32; 2], [0f32; 2]);
    unsafe {
        assert_eq!(
            vanlka_model_forward(m, images.as_ptr(), 1, 32, 32, a.as_mut_ptr(), 2),
            VanlkaStatus::Ok
        );
        assert_eq!(
            vanlka_model_forward(loaded, images.as_ptr(), 1, 32, 32, b.as_mut_ptr(), 2),
            VanlkaStatus::Ok
        );
    }
    assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits));

    let b0 = CString::new("b0").unwrap();
    let mut wrong = ptr::null_mut();
    let status = unsafe { vanlka_model_load(b0.as_ptr(), path.as_ptr(), &mut wrong) };
    assert_eq!(status, VanlkaStatus::Integrity);
    assert!(wrong.is_null());

    let missing = CString::new(dir.path().join("none.vanw").to_str().unwrap()).unwrap();
    let status = unsafe { vanlka_model_load(micro.as_ptr(), missing.as_ptr(), &mut wrong) };
    assert_eq!(status, VanlkaStatus::Io);
    unsafe {
        vanlka_model_free(m);
        vanlka_model_free(loaded);
    }
}

#[test]
fn argument_errors() {
    let mut m = ptr::null_mut();
    let status = unsafe { vanlka_model_new(ptr::null(), 0, &mut m) };
    assert_eq!(status, VanlkaStatus::NullArgument);
    assert_eq!(last_error(), "variant is null");

    let bad = CString::new("b9").unwrap();
    let status = unsafe { vanlka_model_new(bad.as_ptr(), 0, &mut m) };
    assert_eq!(status, VanlkaStatus::Config);

    let invalid = [0xffu8 as c_char, 0];
    let status = unsafe { vanlka_model_new(invalid.as_ptr(), 0, &mut m) };
    assert_eq!(status, VanlkaStatus::InvalidUtf8);

    assert_eq!(unsafe { vanlka_model_num_classes(ptr::null()) }, 0);
    unsafe { vanlka_model_free(ptr::null_mut()) };

    let mut small = [0 as c_char; 4];
    let full = unsafe { vanlka_last_error(small.as_mut_ptr(), small.len()) };
    assert!(full > 3);
    assert_eq!(
        unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(),
        3
    );
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(vanlka_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vanlka.h")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    for name in [
        "vanlka_model_new",
        "vanlka_model_load",
        "vanlka_model_save",
        "vanlka_model_free",
        "vanlka_model_num_classes",
        "vanlka_model_parameter_count",
        "vanlka_model_forward",
        "vanlka_model_cost",
        "vanlka_standard_conv_params",
        "vanlka_mobilenet_decomp_params",
        "vanlka_lka_decomp_params",
        "vanlka_lka_decomp_macs",
        "vanlka_optimal_dilation",
        "vanlka_last_error",
        "vanlka_version",
        "typedef struct VanlkaModel VanlkaModel;",
        "VANLKA_STATUS_INTEGRITY = 9",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "vanlka.h"

int main(void) {
    if (vanlka_lka_decomp_params(21, 3, 512) != 300032) return 10;
    if (vanlka_optimal_dilation(28, 28) != 4) return 11;
    VanlkaModel *m = NULL;
    if (vanlka_model_new("micro", 1, &m) != VANLKA_STATUS_OK) return 12;
    float img[3 * 32 * 32] = {0};
    float logits[2];
    if (vanlka_model_forward(m, img, 1, 32, 32, logits, 2) != VANLKA_STATUS_OK) return 13;
    if (vanlka_model_forward(m, img, 1, 32, 32, logits, 1) != VANLKA_STATUS_BUFFER_TOO_SMALL) return 14;
    char msg[128];
    if (vanlka_last_error(msg, sizeof msg) == 0) return 15;
    printf("%s\n", msg);
    vanlka_model_free(m);
    return 0;
}
"#;

/// Compiles and runs a C program against the header and static library when
/// a C compiler is available.
#[test]
fn c_program_links_against_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = target_dir.join("libvanlka_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header_path().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("logits buffer holds 1 values"));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
