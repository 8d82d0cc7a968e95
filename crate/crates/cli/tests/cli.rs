use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use apple_cli::RunConfig;

fn apple(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apple"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_envs_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = apple(&["gen-envs", "--n", "2", "--seed", "7", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["env_000.grid", "env_001.grid", "envs.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let other = apple(&["gen-envs", "--n", "2", "--seed", "8", "--out", "c"], dir.path());
    assert!(other.status.success());
    assert_ne!(
        std::fs::read(dir.path().join("a/env_000.grid")).unwrap(),
        std::fs::read(dir.path().join("c/env_000.grid")).unwrap()
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = apple(&["train", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--bogus"), "{err}");
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(apple(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(apple(&["train", "--mode", "human"], dir.path()).status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let v = apple(&["--version"], dir.path());
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
    let h = apple(&["--help"], dir.path());
    assert_eq!(h.status.code(), Some(0));
    for cmd in ["gen-envs", "train", "eval", "serve", "replay"] {
        assert!(String::from_utf8_lossy(&h.stdout).contains(cmd), "{cmd}");
    }
}

#[test]
fn eval_without_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = apple(&["eval", "--ckpt", "missing", "--envs", "1", "--runs", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
    let r = apple(&["replay", "--log", "missing.jsonl"], dir.path());
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[world]\nfil_prob = 0.4\n").unwrap();
    let o = apple(&["gen-envs", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fil_prob"), "{}", stderr(&o));
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "seed = 5\n[world]\nenvs = 1\nsize = 30\n[train]\nfeedback_budget = 40\nwarmup = 10\n",
    )
    .unwrap();
    let o = apple(&["train", "--config", "c.toml", "--budget", "30", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let eff = RunConfig::load(&dir.path().join("run/config.toml")).unwrap();
    assert_eq!(eff.train.feedback_budget, 30);
    assert_eq!(eff.seed, 5);
    assert_eq!(eff.world.size, 30);
    assert_eq!(eff.train.warmup, 10);
    assert_eq!(eff.train.batch_size, 64);

    let log = dir.path().join("run/dataset.jsonl");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 30);
    let r = apple(&["replay", "--log", "run/dataset.jsonl", "--ckpt", "run", "--json"], dir.path());
    assert!(r.status.success(), "{}", stderr(&r));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["records"], 30);
    assert_eq!(v["oracle"], 30);
}

/// `key -> value` for every leaf of a TOML table.
fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

#[test]
fn config_reference_matches_defaults() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.md")).unwrap();
    let mut documented = BTreeMap::new();
    for line in doc.lines() {
        let cells: Vec<&str> = line.split('|').map(str::trim).collect();
        if cells.len() < 4 || !cells[1].starts_with('`') {
            continue;
        }
        let key = cells[1].trim_matches('`').to_string();
        documented.insert(key, cells[2].to_string());
    }
    let defaults: toml::Value = toml::from_str(&RunConfig::default().to_toml()).unwrap();
    let mut actual = BTreeMap::new();
    flatten("", &defaults, &mut actual);

    for (key, value) in &actual {
        let doc_value = documented.get(key).unwrap_or_else(|| panic!("{key} is not documented"));
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", doc_value.trim_matches('`')))
            .unwrap_or_else(|e| panic!("{key}: {e}"))["v"]
            .clone();
        assert_eq!(&parsed, value, "{key}");
    }
    for key in documented.keys() {
        assert!(actual.contains_key(key) || key == "library", "{key} documented but not a config key");
    }
    assert_eq!(documented["library"], "unset");
}
