#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = qcnet_core::parse_manifest(text, "fuzz") {
        let again = qcnet_core::parse_manifest(&m.to_jsonl(), "fuzz").expect("serialized manifest parses");
        assert_eq!(again.records, m.records);
    }
});
