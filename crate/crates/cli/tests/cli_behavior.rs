//! Binary-level contract checks: exit codes, output formats, and the
//! fixture quick-start path.

use std::path::Path;
use std::process::{Command, Output};

fn gbm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn gbm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("gbm terminated by signal")
}

#[test]
fn io_failures_exit_3_and_config_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();

    let missing = gbm(&["calibrate", "--in", "absent.tif", "--out", "x.tif"], cwd);
    assert_eq!(code(&missing), 3, "missing input file must exit 3");

    // need one real raster to reach the mode check elsewhere
    std::fs::write(cwd.join("not_a_raster.tif"), b"junk").unwrap();
    let junk = gbm(&["calibrate", "--in", "not_a_raster.tif", "--out", "x.tif"], cwd);
    assert_eq!(code(&junk), 3, "unreadable raster must exit 3");

    let bad_mode = gbm(
        &["calibrate", "--in", "absent.tif", "--out", "x.tif", "--mode", "sideways"],
        cwd,
    );
    assert_eq!(code(&bad_mode), 2, "unknown mode must exit 2 before any IO");

    let usage = gbm(&["calibrate"], cwd);
    assert_eq!(code(&usage), 2, "missing required flags must exit 2");

    let bad_config = cwd.join("bad.json");
    std::fs::write(&bad_config, "{\"unknown_key\": 1}").unwrap();
    let run = gbm(&["run", "--config", "bad.json"], cwd);
    assert_eq!(code(&run), 2, "invalid pipeline config must exit 2");
}

#[test]
fn quick_start_world_runs_and_all_failed_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();

    let generated = gbm(
        &["fixtures", "generate", "--seed", "3", "--out", "w", "--n-cells", "1",
          "--buildings-per-cell", "6"],
        cwd,
    );
    assert_eq!(code(&generated), 0, "{}", String::from_utf8_lossy(&generated.stderr));

    let run = gbm(&["run", "--config", "w/pipeline_config.json"], cwd);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("cell 0_0: ok"), "run summary missing cell line: {stdout}");
    assert!(cwd.join("w/run/run_manifest.json").exists());

    // shift line format: two integers and a score
    let coreg = gbm(
        &["coregister", "--image", "w/run/calibrated/0_0.tif", "--mask",
          "w/run/filtered/0_0.tif", "--window", "2", "--out-shift", "shift.txt"],
        cwd,
    );
    assert_eq!(code(&coreg), 0, "{}", String::from_utf8_lossy(&coreg.stderr));
    let line = std::fs::read_to_string(cwd.join("shift.txt")).unwrap();
    let parts: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(parts.len(), 3, "shift file should hold `dx dy score`: {line:?}");
    parts[0].parse::<i64>().unwrap();
    parts[1].parse::<i64>().unwrap();
    parts[2].parse::<f64>().unwrap();

    // truncate every scene so the only cell fails -> exit 4
    for entry in std::fs::read_dir(cwd.join("w/scenes")).unwrap() {
        let path = entry.unwrap().path();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..32]).unwrap();
    }
    std::fs::remove_dir_all(cwd.join("w/run")).unwrap();
    let failed = gbm(&["run", "--config", "w/pipeline_config.json"], cwd);
    assert_eq!(code(&failed), 4, "all-cells-failed run must exit 4");
}
