#![no_main]
use libfuzzer_sys::fuzz_target;
use sfq_core::io::parse_numeric_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_numeric_csv(s) {
        assert!(table.rows.iter().all(|r| r.len() == table.header.len()));
    }
});
