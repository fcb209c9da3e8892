use std::path::Path;
use std::process::{Command, Output};

fn toy() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/toy"))
}

fn copy_toy(dst: &Path) {
    for entry in walk(toy()) {
        let rel = entry.strip_prefix(toy()).unwrap();
        if rel.starts_with("out") {
            continue;
        }
        let target = dst.join(rel);
        std::fs::create_dir_all(target.parent().unwrap()).unwrap();
        std::fs::copy(&entry, target).unwrap();
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn handbooster(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handbooster")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn dry_run_prints_the_plan_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    copy_toy(tmp.path());
    let config = tmp.path().join("config.toml");
    let o = handbooster(&["run", "--config", config.to_str().unwrap(), "--dry-run"]);
    assert_eq!(code(&o), 0);
    let plan = String::from_utf8(o.stdout).unwrap();
    assert!(plan.contains("M=10") && plan.contains("N=500"), "{plan}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn exit_codes_separate_usage_config_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&handbooster(&["run"])), 2);
    assert_eq!(code(&handbooster(&["bogus"])), 2);

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"seven\"\n").unwrap();
    let o = handbooster(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    copy_toy(tmp.path());
    std::fs::remove_file(tmp.path().join("real.jsonl")).unwrap();
    let o = handbooster(&["label", "--config", tmp.path().join("config.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn chained_subcommands_match_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    copy_toy(tmp.path());
    let config = tmp.path().join("config.toml");
    let config = config.to_str().unwrap();
    let whole = tmp.path().join("whole");
    let o = handbooster(&["run", "--config", config, "--out", whole.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("validate"));

    let chained = tmp.path().join("chained");
    for stage in ["label", "sample", "validate", "render", "filter", "metrics", "report"] {
        let o = handbooster(&[stage, "--config", config, "--out", chained.to_str().unwrap(), "--workers", "2"]);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let a = handbooster::pipeline::snapshot(&whole).unwrap();
    let b = handbooster::pipeline::snapshot(&chained).unwrap();
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert!(a == b);
}

#[test]
fn stages_out_of_order_fail_as_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    copy_toy(tmp.path());
    let config = tmp.path().join("config.toml");
    let o = handbooster(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `validate`"));
}
