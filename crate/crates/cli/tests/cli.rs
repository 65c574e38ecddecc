use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn probfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = probfuse(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure_line(args: &[&str]) -> String {
    let out = probfuse(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr
        .lines()
        .find(|l| l.starts_with("error: "))
        .unwrap_or_else(|| panic!("no error line in {stderr:?}"));
    line.to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == ext).then(|| p.file_name().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

#[test]
fn prior_files_drive_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("scene");
    let priors = tmp.path().join("priors");
    let out = tmp.path().join("out");
    ok(&["synth", "-o", s(&data), "--frames", "3"]);
    let msg = ok(&["make-priors", "--dataset", s(&data), "-o", s(&priors), "--with-normals"]);
    assert!(msg.contains("wrote 3 prior volumes"), "{msg}");
    let pvols = files_with_ext(&priors, "pvol");
    assert_eq!(pvols.len(), 3);
    assert_eq!(files_with_ext(&priors, "nrml").len(), 3);
    assert_eq!(files_with_ext(&priors, "obnd").len(), 3);

    let template = |ext: &str| priors.join(format!("{{stem}}.{ext}")).to_string_lossy().into_owned();
    let report = ok(&[
        "run",
        "--dataset",
        s(&data),
        "-o",
        s(&out),
        "--prior-file",
        &template("pvol"),
        "--normals-file",
        &template("nrml"),
        "--boundary-file",
        &template("obnd"),
        "--set",
        "max_iters=20",
    ]);
    assert!(report.contains("keyframes: 1"), "{report}");
    assert!(out.join("report.txt").is_file());
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    let pngs = files_with_ext(&out.join("depth"), "png");
    assert_eq!(pngs.len(), 1);
    let stem = pngs[0].trim_end_matches(".png");
    assert_eq!(pvols[0], format!("{stem}.pvol"));
    let trace = fs::read_to_string(out.join("trace").join(format!("{stem}.txt"))).unwrap();
    assert!(trace.lines().count() > 2);

    let gt = fs::read_dir(data.join("depth")).unwrap().next().unwrap().unwrap().path();
    let pred = out.join("depth").join(&pngs[0]);
    let line = ok(&["eval", s(&pred), s(&gt)]);
    assert!(line.starts_with("l1_rel=") && line.contains(" valid_pixels="), "{line}");
    let csv = ok(&["eval", s(&gt), s(&gt), "--csv"]);
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("l1_rel,l2_rel,rmse,valid_pixels"));
    assert!(rows.next().unwrap().starts_with("0.000000,0.000000,0.000000,"));

    let fused = tmp.path().join("fused.pvol");
    ok(&["fuse", s(&priors.join(&pvols[0])), s(&priors.join(&pvols[1])), "-o", s(&fused)]);
    assert_eq!(
        fs::metadata(&fused).unwrap().len(),
        fs::metadata(priors.join(&pvols[0])).unwrap().len()
    );
}

#[test]
fn errors_are_one_line_with_failure_status() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let line = failure_line(&["run", "--dataset", s(&missing), "-o", s(&tmp.path().join("o"))]);
    assert!(line.contains("rgb.txt"), "{line}");

    let data = tmp.path().join("scene");
    ok(&["synth", "-o", s(&data), "--frames", "1"]);
    let line = failure_line(&["run", "--dataset", s(&data), "-o", s(&tmp.path().join("o")), "--set", "lambda=-1"]);
    assert!(line.starts_with("error: "));
    let line = failure_line(&["run", "--dataset", s(&data), "-o", s(&tmp.path().join("o")), "--set", "bogus=1"]);
    assert!(line.contains("bogus"), "{line}");

    let bad = tmp.path().join("bad.pvol");
    fs::write(&bad, b"PVOL1\x01\x00").unwrap();
    let line = failure_line(&["fuse", s(&bad), s(&bad), "-o", s(&tmp.path().join("f.pvol"))]);
    assert!(line.contains("bad.pvol") || line.contains("size"), "{line}");

    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "mode = fused\nwarp = sideways\n").unwrap();
    let line = failure_line(&["ablate", "--config", s(&cfg)]);
    assert!(line.contains("line 2"), "{line}");
}
