use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use awekit::synth::{generate, SynthConfig};
use awekit::metrics::GroundTruth;
use awekit_ffi::*;

fn last_error() -> String {
    let p = awekit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(awekit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dtw_of_identical_sequences_is_zero() {
    let a = [1.0f32, 0.0, 0.5, 0.5, 0.0, 1.0];
    let mut cost = f64::NAN;
    let s = unsafe { awekit_dtw_cost(a.as_ptr(), 3, a.as_ptr(), 3, 2, &mut cost) };
    assert_eq!(s, AwekitStatus::Ok);
    assert_eq!(cost, 0.0);
}

#[test]
fn dtw_search_finds_planted_region() {
    let t = [1.0f32, 0.0, 0.0, 1.0];
    let u = [0.0f32, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let mut m = AwekitDtwMatch::default();
    let s = unsafe { awekit_dtw_search(t.as_ptr(), 2, u.as_ptr(), 5, 2, &mut m) };
    assert_eq!(s, AwekitStatus::Ok);
    assert_eq!((m.start, m.end), (2, 4));
    assert_eq!(m.cost, 0.0);
}

#[test]
fn zero_frame_reports_numerical_error() {
    let a = [0.0f32, 0.0];
    let b = [1.0f32, 0.0];
    let mut cost = 0.0;
    let s = unsafe { awekit_dtw_cost(a.as_ptr(), 1, b.as_ptr(), 1, 2, &mut cost) };
    assert_eq!(s, AwekitStatus::Numerical);
    assert!(last_error().contains("zero norm"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let mut cost = 0.0;
    let s = unsafe { awekit_dtw_cost(ptr::null(), 1, ptr::null(), 1, 2, &mut cost) };
    assert_eq!(s, AwekitStatus::NullPointer);
    let s = unsafe { awekit_corpus_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(s, AwekitStatus::NullPointer);
    unsafe {
        awekit_corpus_free(ptr::null_mut());
        awekit_embedder_free(ptr::null_mut());
    }
}

#[test]
fn average_precision_of_flags() {
    // relevant at ranks 1 and 3 of 3 ranked, with one relevant item unranked
    let flags = [1u8, 0, 1];
    let mut ap = 0.0;
    let s = unsafe { awekit_average_precision(flags.as_ptr(), 3, 3, &mut ap) };
    assert_eq!(s, AwekitStatus::Ok);
    assert!((ap - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    let s = unsafe { awekit_average_precision(flags.as_ptr(), 3, 1, &mut ap) };
    assert_eq!(s, AwekitStatus::InvalidArgument);
}

#[test]
fn embed_with_buffer_size_negotiation() {
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { awekit_embedder_subsample(4, &mut e) }, AwekitStatus::Ok);
    assert_eq!(unsafe { awekit_embedder_output_dim(e, 3) }, 12);
    let frames: Vec<f32> = (0..24).map(|i| i as f32).collect();
    let mut written = 0;
    let mut small = [0.0f32; 4];
    let s = unsafe { awekit_embed(e, frames.as_ptr(), 8, 3, small.as_mut_ptr(), 4, &mut written) };
    assert_eq!(s, AwekitStatus::BufferTooSmall);
    assert_eq!(written, 12);
    let mut out = vec![0.0f32; written];
    let s = unsafe { awekit_embed(e, frames.as_ptr(), 8, 3, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, AwekitStatus::Ok);
    assert_eq!(&out[..3], &[0.0, 1.0, 2.0]);
    unsafe { awekit_embedder_free(e) };
}

#[test]
fn corpus_roundtrip_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SynthConfig { n_types: 3, n_search: 12, ..SynthConfig::default() }).unwrap();
    let tpath = dir.path().join("templates.jsonl");
    let spath = dir.path().join("search.jsonl");
    awekit::corpus::write_corpus(&data.templates, &tpath).unwrap();
    awekit::corpus::write_corpus(&data.search, &spath).unwrap();

    let mut templates = ptr::null_mut();
    let mut search = ptr::null_mut();
    let mut normed = ptr::null_mut();
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(awekit_corpus_load(cstr(&tpath).as_ptr(), &mut templates), AwekitStatus::Ok);
        assert_eq!(awekit_corpus_load(cstr(&spath).as_ptr(), &mut search), AwekitStatus::Ok);
        assert_eq!(awekit_corpus_len(search), 12);
        assert_eq!(awekit_corpus_dim(search), 16);
        assert_eq!(
            awekit_corpus_normalize(search, AwekitNormalization::PerUtterance, &mut normed),
            AwekitStatus::Ok
        );
        assert_eq!(awekit_embedder_meanpool(&mut e), AwekitStatus::Ok);
        let out = dir.path().join("det.jsonl");
        assert_eq!(awekit_search(e, templates, normed, cstr(&out).as_ptr()), AwekitStatus::Ok);
        let rankings = awekit::kws::read_detections(&out).unwrap();
        assert_eq!(rankings.len(), 3);
        assert!(rankings.iter().all(|r| r.detections.len() == 12));
        GroundTruth::from_corpus(&data.search)
            .check_subset(rankings[0].detections.iter().map(|d| d.utterance_id.as_str()))
            .unwrap();
        for c in [templates, search, normed] {
            awekit_corpus_free(c);
        }
        awekit_embedder_free(e);
    }
}

#[test]
fn missing_manifest_and_checkpoint() {
    let mut c = ptr::null_mut();
    let p = CString::new("/nonexistent/awekit/manifest.jsonl").unwrap();
    assert_eq!(unsafe { awekit_corpus_load(p.as_ptr(), &mut c) }, AwekitStatus::MissingFile);
    assert!(c.is_null());
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { awekit_embedder_load(p.as_ptr(), &mut e) }, AwekitStatus::MissingFile);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/awekit.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ AwekitDtwMatch m; (void)m; return AWEKIT_STATUS_OK; }}\n",
            header.display()
        ),
    )
    .unwrap();
    let Ok(status) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
