use std::ffi::{CStr, CString};
use std::ptr;

use ipgan_ffi::*;

fn last_error() -> String {
    let p = ipgan_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn parses_filenames_and_reports_errors() {
    let (mut id, mut cam) = (0i64, 0u32);
    let name = CString::new("0002_c1s1_000451_03.jpg").unwrap();
    assert_eq!(unsafe { ipgan_parse_reid_filename(name.as_ptr(), &mut id, &mut cam) }, IpganStatus::Ok);
    assert_eq!((id, cam), (2, 1));
    let junk = CString::new("-1_c3s2_000001_00.jpg").unwrap();
    assert_eq!(unsafe { ipgan_parse_reid_filename(junk.as_ptr(), &mut id, &mut cam) }, IpganStatus::Ok);
    assert_eq!((id, cam), (-1, 3));
    let bad = CString::new("banana.jpg").unwrap();
    assert_eq!(unsafe { ipgan_parse_reid_filename(bad.as_ptr(), &mut id, &mut cam) }, IpganStatus::Format);
    assert!(last_error().contains("cannot parse identity/camera"));
    assert_eq!(unsafe { ipgan_parse_reid_filename(ptr::null(), &mut id, &mut cam) }, IpganStatus::NullPointer);
}

#[test]
fn learning_rate_schedule() {
    let mut lr = 0.0;
    assert_eq!(unsafe { ipgan_lr_at_epoch(200, 1e-4, 150, &mut lr) }, IpganStatus::Ok);
    assert!((lr - 5e-5).abs() < 1e-15);
    assert_eq!(unsafe { ipgan_lr_at_epoch(200, 1e-4, 200, &mut lr) }, IpganStatus::InvalidArgument);
    assert_eq!(unsafe { ipgan_lr_at_epoch(201, 1e-4, 0, &mut lr) }, IpganStatus::InvalidArgument);
}

#[test]
fn evaluation_through_handles() {
    let at = |t: f64| [t.cos(), t.sin()];
    let q: Vec<f64> = at(0.0).to_vec();
    let g: Vec<f64> = [at(0.1), at(0.2), at(0.3)].concat();
    let mut result = ptr::null_mut();
    let status = unsafe {
        ipgan_evaluate(q.as_ptr(), [5i64].as_ptr(), [1u32].as_ptr(), 1, g.as_ptr(), [5i64, 3, 5].as_ptr(), [2u32, 1, 3].as_ptr(), 3, 2, 3, &mut result)
    };
    assert_eq!(status, IpganStatus::Ok);
    let (mut map, mut skipped, mut r1) = (0.0, 9usize, 0.0);
    unsafe {
        assert_eq!(ipgan_eval_result_summary(result, &mut map, &mut skipped), IpganStatus::Ok);
        assert_eq!(ipgan_eval_result_cmc(result, 1, &mut r1), IpganStatus::Ok);
        assert_eq!(ipgan_eval_result_cmc(result, 4, &mut r1), IpganStatus::OutOfRange);
        ipgan_eval_result_free(result);
    }
    assert!((map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
    assert_eq!(skipped, 0);
    assert_eq!(r1, 1.0);
}

#[test]
fn manifest_handle_round_trip() {
    use ipgan::datasets::{generate_synthetic_dataset, materialize_images, save_manifest, SyntheticSpec};
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::new(2, 2, 1, 32, 16).unwrap();
    let corpus = generate_synthetic_dataset(&spec, 3).unwrap();
    let m = materialize_images(&corpus.source_train, dir.path(), "images").unwrap();
    let path = dir.path().join("manifest.txt");
    save_manifest(&m, &path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ipgan_manifest_load(c_path.as_ptr(), &mut handle) }, IpganStatus::Ok);
    let (mut n, mut l, mut ids) = (0, 0, 0);
    let (mut id, mut cam) = (0, 0);
    unsafe {
        assert_eq!(ipgan_manifest_info(handle, &mut n, &mut l, &mut ids), IpganStatus::Ok);
        assert_eq!(ipgan_manifest_record(handle, 0, &mut id, &mut cam), IpganStatus::Ok);
        assert_eq!(ipgan_manifest_record(handle, n, &mut id, &mut cam), IpganStatus::OutOfRange);
        ipgan_manifest_free(handle);
    }
    assert_eq!((n, l, ids), (4, 2, 2));
    assert_eq!((id, cam), (m.records[0].identity, m.records[0].camera));

    let missing = CString::new(dir.path().join("nope.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ipgan_manifest_load(missing.as_ptr(), &mut handle) }, IpganStatus::Io);
}

#[test]
fn generator_translation_through_handle() {
    use ipgan::gan::GeneratorConfig;
    use ipgan::nn::{Architecture, ModelParams};
    let dir = tempfile::tempdir().unwrap();
    let cfg = GeneratorConfig { base_width: 4, residual_blocks: 1, edge_kernel: 3, ..GeneratorConfig::new(32, 16, 3, 3) };
    let g = ModelParams::initialize(Architecture::Generator(cfg), 1, candle_core_dtype()).unwrap();
    let path = dir.path().join("g.safetensors");
    g.save(&path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ipgan_model_load(c_path.as_ptr(), &mut handle) }, IpganStatus::Ok);
    let input = vec![0.25f32; 32 * 16 * 3];
    let mut output = vec![9.0f32; 32 * 16 * 3];
    let mut count = 0;
    unsafe {
        assert_eq!(ipgan_model_num_parameters(handle, &mut count), IpganStatus::Ok);
        assert_eq!(ipgan_generator_translate(handle, input.as_ptr(), 32, 16, 3, 2, output.as_mut_ptr()), IpganStatus::Ok);
        assert_eq!(ipgan_generator_translate(handle, input.as_ptr(), 32, 16, 3, 3, output.as_mut_ptr()), IpganStatus::OutOfRange);
        ipgan_model_free(handle);
    }
    assert_eq!(count, g.num_parameters());
    assert!(output.iter().all(|v| v.abs() <= 1.0));
}

fn candle_core_dtype() -> ipgan::nn::DType {
    ipgan::nn::DType::F32
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ipgan.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exported: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 10);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from the header");
    }
    assert!(header.contains("IPGAN_STATUS_OK"));
    assert!(header.contains("typedef struct IpganModel IpganModel;"));
}
