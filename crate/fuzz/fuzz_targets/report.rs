#![no_main]

use libfuzzer_sys::fuzz_target;
use qcnet_core::qc::QcReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = QcReport::from_json(text) {
        let _ = report.is_consistent();
        let _ = report.render_text();
        let back = QcReport::from_json(&report.to_json()).expect("serialized report parses");
        assert_eq!(back.volumes.len(), report.volumes.len());
    }
});
