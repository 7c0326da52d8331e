//! Compiles `c_smoke.c` against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

/// `libnmqsd_ffi.a` next to this test binary (`<target>/<profile>/deps`), or
/// one level up after a plain `cargo build`.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libnmqsd_ffi.a"))
        .find(|p| p.exists())
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = static_lib().expect("libnmqsd_ffi.a not built");
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c_smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("running the C compiler");
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("c smoke ok"));
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nmqsd.h")).unwrap();
    for sym in [
        "nmqsd_model_mg24",
        "nmqsd_model_load",
        "nmqsd_run_ensemble",
        "nmqsd_ensemble_rho",
        "nmqsd_ensemble_area_ratio",
        "nmqsd_kernel_memory_time",
        "nmqsd_last_error",
        "typedef struct NmqsdModel NmqsdModel",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
}
