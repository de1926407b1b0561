use std::ffi::{CStr, CString};
use std::ptr;

use tle_ffi::*;

fn last_error() -> String {
    let n = tle_last_error_length();
    let mut buf = vec![0 as std::ffi::c_char; n.max(1)];
    unsafe { tle_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn synth(test: bool, classes: usize) -> *mut TleDataset {
    let mut ds = ptr::null_mut();
    let status = unsafe { tle_dataset_synth(classes, 6, 6, 2, 2, 4, 1.0, 3, test, false, &mut ds) };
    assert_eq!(status, TleStatus::Ok, "{}", last_error());
    ds
}

const CONFIG: &str = "encoder = sketch\nsketch_dim = 64\naggregation = product\nmax_iters = 300\nlr_step = 150\n";

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(tle_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_predict_evaluate_round_trip() {
    let (train, test) = (synth(false, 3), synth(true, 3));
    unsafe {
        assert_eq!(tle_dataset_len(train), 18);
        assert_eq!(tle_dataset_classes(train), 3);
        let cfg = CString::new(CONFIG).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(tle_model_train(train, cfg.as_ptr(), &mut model), TleStatus::Ok, "{}", last_error());
        assert_eq!(tle_model_classes(model), 3);

        let mut acc = 0.0;
        assert_eq!(tle_model_evaluate(model, test, 5, &mut acc), TleStatus::Ok);
        assert!(acc >= 0.6, "accuracy {acc}");

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.tlem").to_str().unwrap()).unwrap();
        assert_eq!(tle_model_save(model, path.as_ptr()), TleStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(tle_model_load(path.as_ptr(), &mut loaded), TleStatus::Ok);

        for video in 0..tle_dataset_len(test) {
            let (mut c1, mut c2) = (0usize, 0usize);
            let (mut s1, mut s2) = ([0.0; 3], [0.0; 3]);
            assert_eq!(tle_model_predict(model, test, video, 5, &mut c1, s1.as_mut_ptr(), 3), TleStatus::Ok);
            assert_eq!(tle_model_predict(loaded, test, video, 5, &mut c2, s2.as_mut_ptr(), 3), TleStatus::Ok);
            assert_eq!(c1, c2);
            assert_eq!(s1, s2);
        }
        tle_model_free(loaded);
        tle_model_free(model);
        tle_dataset_free(train);
        tle_dataset_free(test);
    }
}

#[test]
fn dataset_file_round_trip() {
    let ds = synth(false, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.tlef").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(tle_dataset_write(ds, path.as_ptr()), TleStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(tle_dataset_read(path.as_ptr(), &mut back), TleStatus::Ok);
        assert_eq!(tle_dataset_len(back), tle_dataset_len(ds));
        for i in 0..tle_dataset_len(ds) {
            assert_eq!(tle_dataset_label(back, i), tle_dataset_label(ds, i));
        }
        assert_eq!(tle_dataset_label(back, 99), usize::MAX);
        tle_dataset_free(back);
        tle_dataset_free(ds);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(tle_dataset_read(ptr::null(), &mut ds), TleStatus::NullPointer);
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/dir/x.tlef").unwrap();
        assert_eq!(tle_dataset_read(missing.as_ptr(), &mut ds), TleStatus::Io);
        assert!(ds.is_null());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.tlef");
        std::fs::write(&junk, b"not a dataset at all").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(tle_dataset_read(junk.as_ptr(), &mut ds), TleStatus::Format);

        let (a, b) = ([1.0, 2.0], [3.0, f64::NAN]);
        let mut out = [0.0; 2];
        assert_eq!(tle_fuse_streams(a.as_ptr(), b.as_ptr(), 2, out.as_mut_ptr()), TleStatus::NonFinite);

        let bad = CString::new("encoder = nope").unwrap();
        let train = synth(false, 2);
        let mut model = ptr::null_mut();
        assert_eq!(tle_model_train(train, bad.as_ptr(), &mut model), TleStatus::InvalidArgument);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        // Success clears the message.
        assert_eq!(tle_fuse_streams(a.as_ptr(), a.as_ptr(), 2, out.as_mut_ptr()), TleStatus::Ok);
        assert_eq!(tle_last_error_length(), 0);
        tle_dataset_free(train);
        tle_dataset_free(ptr::null_mut());
        tle_model_free(ptr::null_mut());
    }
}

#[test]
fn prediction_rejects_foreign_shapes() {
    let train = synth(false, 2);
    let other = {
        let mut ds = ptr::null_mut();
        unsafe { tle_dataset_synth(2, 2, 6, 2, 2, 5, 1.0, 3, true, false, &mut ds) };
        ds
    };
    unsafe {
        let cfg = CString::new(CONFIG).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(tle_model_train(train, cfg.as_ptr(), &mut model), TleStatus::Ok);
        let mut class = 0usize;
        let status = tle_model_predict(model, other, 0, 5, &mut class, ptr::null_mut(), 0);
        assert_eq!(status, TleStatus::DimensionMismatch);
        let mut small = [0.0; 1];
        let status = tle_model_predict(model, train, 0, 5, &mut class, small.as_mut_ptr(), 1);
        assert_eq!(status, TleStatus::BufferTooSmall);
        let status = tle_model_predict(model, train, 100, 5, &mut class, ptr::null_mut(), 0);
        assert_eq!(status, TleStatus::InvalidArgument);
        tle_model_free(model);
        tle_dataset_free(train);
        tle_dataset_free(other);
    }
}

#[test]
fn kernels_match_core() {
    let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let map = tle_core::FeatureMap::from_dims(1, 3, 4, x.clone()).unwrap();
    unsafe {
        let mut g = [0.0; 16];
        assert_eq!(tle_bilinear_forward(x.as_ptr(), 1, 3, 4, g.as_mut_ptr(), 16), TleStatus::Ok);
        assert_eq!(&g[..], tle_core::bilinear_forward(&map).values());

        let mut short = [0.0; 15];
        assert_eq!(
            tle_bilinear_forward(x.as_ptr(), 1, 3, 4, short.as_mut_ptr(), 15),
            TleStatus::BufferTooSmall
        );

        let mut ts = [0.0; 32];
        assert_eq!(tle_tensor_sketch_forward(x.as_ptr(), 1, 3, 4, 32, 9, ts.as_mut_ptr(), 32), TleStatus::Ok);
        let enc = tle_core::TensorSketchEncoder::new(4, 32, 9).unwrap();
        assert_eq!(&ts[..], enc.forward(&map).unwrap().values());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tle.h")).unwrap();
    for name in [
        "typedef struct TleDataset TleDataset;",
        "typedef struct TleModel TleModel;",
        "TLE_STATUS_OK = 0",
        "TLE_STATUS_PANIC",
        "tle_last_error_message",
        "tle_dataset_synth",
        "tle_model_train",
        "tle_model_predict",
        "tle_tensor_sketch_forward",
        "tle_fuse_streams",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
