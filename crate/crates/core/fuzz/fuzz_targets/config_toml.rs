#![no_main]
use libfuzzer_sys::fuzz_target;
use sfq_core::config::{parse_config, Preset};

fuzz_target!(|data: &[u8]| {
    let Ok(doc) = std::str::from_utf8(data) else { return };
    for preset in [None, Some(Preset::PaperDefaults)] {
        if let Ok(cfg) = parse_config(doc, preset) {
            // accepted documents survive a round trip through the canonical form
            let again = parse_config(&cfg.to_toml_string(), None).expect("canonical config re-parses");
            assert_eq!(again, cfg);
        }
    }
});
