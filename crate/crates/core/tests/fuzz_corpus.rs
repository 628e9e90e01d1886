//! Replays the checked-in fuzz seeds through the same checks as the fuzz targets.

use std::fs;
use std::path::PathBuf;

use sfq_core::config::{parse_config, parse_metadata_json, Preset};
use sfq_core::io::{parse_decay_csv, parse_numeric_csv};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds_round_trip() {
    let mut accepted = 0;
    for (path, doc) in seeds("config_toml") {
        for preset in [None, Some(Preset::PaperDefaults)] {
            if let Ok(cfg) = parse_config(&doc, preset) {
                accepted += 1;
                let again = parse_config(&cfg.to_toml_string(), None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert_eq!(again, cfg, "{}", path.display());
            }
        }
    }
    assert!(accepted >= 5);
}

#[test]
fn metadata_seeds() {
    let ok = seeds("metadata_json").iter().filter(|(_, s)| parse_metadata_json(s).is_ok()).count();
    assert_eq!(ok, 2);
}

#[test]
fn decay_seeds() {
    let ok = seeds("decay_csv").iter().filter(|(_, s)| parse_decay_csv(s).is_ok()).count();
    assert_eq!(ok, 2);
}

#[test]
fn numeric_seeds() {
    for (path, s) in seeds("numeric_csv") {
        if let Ok(t) = parse_numeric_csv(&s) {
            assert!(t.rows.iter().all(|r| r.len() == t.header.len()), "{}", path.display());
        }
    }
}
