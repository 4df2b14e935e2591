//! The generated header must compile as C and as C++.

use std::path::Path;
use std::process::Command;

fn compiles(compiler: &str, lang: &str, source: &str) -> Option<bool> {
    let dir = tempfile::tempdir().unwrap();
    let ext = if lang == "c" { "c" } else { "cpp" };
    let src = dir.path().join(format!("check.{ext}"));
    std::fs::write(&src, source).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(compiler)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .ok()?;
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    Some(out.status.success())
}

const USE: &str = r#"
#include "clipmil.h"
int main(void) {
    double k = 0.0;
    uint64_t counts[4] = {2, 0, 0, 2};
    ClipmilStatus st = clipmil_fleiss_kappa(counts, 2, 2, &k);
    ClipmilBags *bags = clipmil_bags_new();
    ClipmilModel *model = NULL;
    st = clipmil_train(bags, NULL, &model);
    char msg[128];
    clipmil_last_error(msg, sizeof msg);
    clipmil_model_free(model);
    clipmil_bags_free(bags);
    return st == CLIPMIL_STATUS_OK ? 0 : 1;
}
"#;

#[test]
fn header_is_valid_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/clipmil.h");
    assert!(header.is_file(), "missing {}", header.display());
    let mut ran = false;
    for (cc, lang) in [("cc", "c"), ("c++", "cpp")] {
        match compiles(cc, lang, USE) {
            Some(ok) => {
                assert!(ok, "{cc} rejected clipmil.h");
                ran = true;
            }
            None => eprintln!("{cc} not available, skipping"),
        }
    }
    if !ran {
        eprintln!("no C compiler found; header not compiled");
    }
}
