#![no_main]
use libfuzzer_sys::fuzz_target;
use sfq_core::io::parse_decay_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(curve) = parse_decay_csv(s) {
        assert_eq!(curve.times.len(), curve.p1.len());
        assert!(curve.times.iter().all(|t| *t >= 0.0 && t.is_finite()));
    }
});
