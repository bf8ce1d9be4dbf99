#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(events) = qcnet_review::parse_journal(text) {
        let _ = qcnet_review::replay(&events);
    }
});
