use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use supcbm::annotate::annotate_dataset;
use supcbm::checkpoint::{self, Model};
use supcbm::model::{train, SupCbm};
use supcbm::optim::TrainConfig;
use supcbm::synth::{gen_synthetic, SyntheticConfig, SyntheticFixture};
use supcbm_ffi::*;

struct Saved {
    _dir: tempfile::TempDir,
    ckpt: CString,
    vocab: CString,
    fixture: SyntheticFixture,
    model: SupCbm,
}

fn saved() -> Saved {
    let dir = tempfile::tempdir().unwrap();
    let fixture = gen_synthetic(&SyntheticConfig {
        num_classes: 4,
        p: 3,
        q: 4,
        dim: 16,
        images_per_class: 10,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let ann = annotate_dataset(&fixture.train, &fixture.bundle.vocab, &fixture.concepts, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let model = train(&fixture.train, &ann, &fixture.bundle.matrix, &cfg, None)
        .unwrap()
        .model;
    let ckpt = dir.path().join("model.json");
    let vocab = dir.path().join("vocab.json");
    checkpoint::save(
        &ckpt,
        &Model::Supcbm(model.clone()),
        &cfg,
        Some(fixture.bundle.fingerprint()),
        &[],
    )
    .unwrap();
    fixture.bundle.save(&vocab).unwrap();
    Saved {
        ckpt: CString::new(ckpt.to_str().unwrap()).unwrap(),
        vocab: CString::new(vocab.to_str().unwrap()).unwrap(),
        _dir: dir,
        fixture,
        model,
    }
}

fn last_error() -> String {
    let p = supcbm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(s: &Saved) -> *mut SupcbmModel {
    let mut h = ptr::null_mut();
    let st = unsafe { supcbm_model_load(s.ckpt.as_ptr(), s.vocab.as_ptr(), &mut h) };
    assert_eq!(st, SupcbmStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn load_predict_matches_engine() {
    let s = saved();
    let h = load(&s);
    let (mut d, mut m, mut l) = (0, 0, 0);
    assert_eq!(unsafe { supcbm_model_dims(h, &mut d, &mut m, &mut l) }, SupcbmStatus::Ok);
    assert_eq!((d, m, l), (16, s.fixture.bundle.vocab.num_concepts(), 4));

    for i in 0..s.fixture.test.len() {
        let x = s.fixture.test.embeddings.row_f64(i);
        let mut c = vec![0.0; m];
        let mut scores = vec![0.0; l];
        let mut pred = usize::MAX;
        let st = unsafe {
            supcbm_model_predict(h, x.as_ptr(), d, c.as_mut_ptr(), m, scores.as_mut_ptr(), l, &mut pred)
        };
        assert_eq!(st, SupcbmStatus::Ok);
        let want = s.model.predict(&x).unwrap();
        assert_eq!(c, want.c);
        assert_eq!(scores, want.l);
        assert_eq!(pred, want.predicted);
    }
    unsafe { supcbm_model_free(h) };
}

#[test]
fn intervene_overrides_concepts() {
    let s = saved();
    let h = load(&s);
    let x = s.fixture.test.embeddings.row_f64(0);
    let before = s.model.predict(&x).unwrap();
    let j = before.predicted;
    let ids: Vec<usize> = s.fixture.bundle.matrix.concepts_of(j).to_vec();
    let values = vec![SupcbmEdit::Off as u32; ids.len()];
    let mut scores = vec![0.0; 4];
    let mut pred = 0;
    let st = unsafe {
        supcbm_model_intervene(
            h, x.as_ptr(), x.len(), ids.as_ptr(), values.as_ptr(), ids.len(),
            ptr::null_mut(), 0, scores.as_mut_ptr(), 4, &mut pred,
        )
    };
    assert_eq!(st, SupcbmStatus::Ok);
    assert_eq!(scores[j], 0.0);
    assert!(scores[j] < before.l[j]);

    let (bad_id, bad_val) = ([0usize], [9u32]);
    let st = unsafe {
        supcbm_model_intervene(
            h, x.as_ptr(), x.len(), bad_id.as_ptr(), bad_val.as_ptr(), 1,
            ptr::null_mut(), 0, ptr::null_mut(), 0, ptr::null_mut(),
        )
    };
    assert_eq!(st, SupcbmStatus::InvalidArgument);
    assert!(last_error().contains("edit value"));

    let unknown = [10_000usize];
    let on = [SupcbmEdit::On as u32];
    let st = unsafe {
        supcbm_model_intervene(
            h, x.as_ptr(), x.len(), unknown.as_ptr(), on.as_ptr(), 1,
            ptr::null_mut(), 0, ptr::null_mut(), 0, ptr::null_mut(),
        )
    };
    assert_eq!(st, SupcbmStatus::InvalidArgument);
    assert!(last_error().contains("10000"));
    unsafe { supcbm_model_free(h) };
}

#[test]
fn shape_errors_are_reported() {
    let s = saved();
    let h = load(&s);
    let x = [0.5f64; 3];
    let st = unsafe {
        supcbm_model_predict(h, x.as_ptr(), 3, ptr::null_mut(), 0, ptr::null_mut(), 0, ptr::null_mut())
    };
    assert_eq!(st, SupcbmStatus::ShapeMismatch);

    let x = s.fixture.test.embeddings.row_f64(0);
    let mut short = [0.0; 2];
    let st = unsafe {
        supcbm_model_predict(h, x.as_ptr(), x.len(), ptr::null_mut(), 0, short.as_mut_ptr(), 2, ptr::null_mut())
    };
    assert_eq!(st, SupcbmStatus::ShapeMismatch);
    assert!(last_error().contains("l buffer"));

    // A successful call clears the message.
    let st = unsafe {
        supcbm_model_predict(h, x.as_ptr(), x.len(), ptr::null_mut(), 0, ptr::null_mut(), 0, ptr::null_mut())
    };
    assert_eq!(st, SupcbmStatus::Ok);
    assert!(supcbm_last_error_message().is_null());
    unsafe { supcbm_model_free(h) };
}

#[test]
fn load_failures_map_to_codes() {
    let s = saved();
    let mut h = ptr::null_mut();

    let st = unsafe { supcbm_model_load(ptr::null(), ptr::null(), &mut h) };
    assert_eq!(st, SupcbmStatus::NullPointer);
    let st = unsafe { supcbm_model_load(s.ckpt.as_ptr(), s.vocab.as_ptr(), ptr::null_mut()) };
    assert_eq!(st, SupcbmStatus::NullPointer);

    let missing = CString::new("/nonexistent/model.json").unwrap();
    let st = unsafe { supcbm_model_load(missing.as_ptr(), s.vocab.as_ptr(), &mut h) };
    assert_eq!(st, SupcbmStatus::Io);
    assert!(h.is_null());

    let st = unsafe { supcbm_model_load(s.ckpt.as_ptr(), ptr::null(), &mut h) };
    assert_eq!(st, SupcbmStatus::InvalidArgument);

    let other = gen_synthetic(&SyntheticConfig {
        num_classes: 4,
        p: 3,
        q: 5,
        dim: 16,
        images_per_class: 10,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let other_vocab = dir.path().join("vocab.json");
    other.bundle.save(&other_vocab).unwrap();
    let other_vocab = CString::new(other_vocab.to_str().unwrap()).unwrap();
    let st = unsafe { supcbm_model_load(s.ckpt.as_ptr(), other_vocab.as_ptr(), &mut h) };
    assert_eq!(st, SupcbmStatus::ChecksumMismatch);

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    let st = unsafe { supcbm_model_load(garbage.as_ptr(), s.vocab.as_ptr(), &mut h) };
    assert_eq!(st, SupcbmStatus::Format);

    unsafe { supcbm_model_free(ptr::null_mut()) };
    let st = unsafe { supcbm_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, SupcbmStatus::NullPointer);
}

#[test]
fn cosine_and_version() {
    let (u, v) = ([1.0, 0.0, 1.0], [2.0, 0.0, 2.0]);
    let mut out = 0.0;
    assert_eq!(unsafe { supcbm_cosine(u.as_ptr(), v.as_ptr(), 3, &mut out) }, SupcbmStatus::Ok);
    assert!((out - 1.0).abs() < 1e-15);
    let z = [0.0; 3];
    assert_eq!(
        unsafe { supcbm_cosine(u.as_ptr(), z.as_ptr(), 3, &mut out) },
        SupcbmStatus::InvalidArgument
    );
    let version = unsafe { CStr::from_ptr(supcbm_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn cc_available() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_compiles_as_c_and_cpp() {
    if !cc_available() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"supcbm.h\"\nint main(void) { return SUPCBM_STATUS_OK; }\n").unwrap();
    for (compiler, extra) in [("cc", vec!["-std=c99"]), ("c++", vec!["-x", "c++"])] {
        let out = Command::new(compiler)
            .args(&extra)
            .args(["-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(header_dir())
            .arg(&src)
            .output()
            .unwrap();
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn static_lib() -> Option<PathBuf> {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libsupcbm_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib().filter(|_| cc_available()) else {
        eprintln!("skipping: static library or C compiler unavailable");
        return;
    };
    let s = saved();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "supcbm.h"

int main(int argc, char **argv) {
    SupcbmModel *m = NULL;
    if (argc != 3) return 10;
    if (supcbm_model_load(argv[1], argv[2], &m) != SUPCBM_STATUS_OK) {
        fprintf(stderr, "%s\n", supcbm_last_error_message());
        return 11;
    }
    size_t d = 0, nm = 0, nl = 0;
    supcbm_model_dims(m, &d, &nm, &nl);
    double x[64] = {0};
    x[0] = 1.0;
    double l[16];
    size_t pred = 99;
    if (d > 64 || nl > 16) return 12;
    if (supcbm_model_predict(m, x, d, NULL, 0, l, nl, &pred) != SUPCBM_STATUS_OK) return 13;
    if (supcbm_model_predict(m, x, 1, NULL, 0, NULL, 0, NULL) != SUPCBM_STATUS_SHAPE_MISMATCH) return 14;
    printf("%zu %zu %zu %zu %s\n", d, nm, nl, pred, supcbm_version());
    supcbm_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("probe");
    let out = Command::new("cc")
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "link: {}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe)
        .arg(s.ckpt.to_str().unwrap())
        .arg(s.vocab.to_str().unwrap())
        .output()
        .unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status, String::from_utf8_lossy(&run.stderr));
    let line = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[0], "16");
    assert_eq!(fields[1], s.fixture.bundle.vocab.num_concepts().to_string());
    assert_eq!(fields[2], "4");
    let mut x = vec![0.0; 16];
    x[0] = 1.0;
    assert_eq!(fields[3], s.model.predict(&x).unwrap().predicted.to_string());
}
