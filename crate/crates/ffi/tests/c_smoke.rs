//! Compile and run a small C program against the generated header and the
//! static library, end to end.

use std::path::PathBuf;
use std::process::Command;

const C_SOURCE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "ltlcbf.h"

int main(int argc, char **argv) {
    if (argc < 4) return 64;
    LtlcbfScenario *handle = NULL;
    int rc = ltlcbf_scenario_load(argv[1], -1, 0, &handle);
    if (rc != LtlcbfStatus_Ok) {
        const char *err = ltlcbf_last_error();
        fprintf(stderr, "load failed (%d): %s\n", rc, err ? err : "?");
        return 1;
    }
    char *plan = ltlcbf_plan_json(handle);
    if (!plan || !strstr(plan, "specs")) return 2;
    ltlcbf_string_free(plan);
    rc = ltlcbf_simulate(handle, 0.001, 4.0, 0, argv[2], argv[3]);
    ltlcbf_scenario_free(handle);
    if (rc != LtlcbfStatus_Ok) return 3;
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests live in target/<profile>/deps; the library one level up
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_drives_the_pipeline() {
    let dir = std::env::temp_dir().join(format!("ltlcbf-c-smoke-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("smoke.c");
    std::fs::write(&src, C_SOURCE).unwrap();
    let exe = dir.join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib_dir = target_dir();

    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lltlcbf_ffi")
        .arg("-lpthread")
        .arg("-ldl")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("cc not available");
    assert!(
        cc.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&cc.stderr)
    );

    let scenario = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/scalar.json");
    let csv = dir.join("traj.csv");
    let verdict = dir.join("verdict.json");
    let run = Command::new(&exe)
        .arg(&scenario)
        .arg(&csv)
        .arg(&verdict)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "smoke binary failed ({:?}):\n{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let verdict_text = std::fs::read_to_string(&verdict).unwrap();
    assert!(verdict_text.contains("\"run_consistent\": true"));
    std::fs::remove_dir_all(&dir).ok();
}
