#![no_main]

use libfuzzer_sys::fuzz_target;
use qcnet_core::model::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok((model, threshold)) = decode_checkpoint(data) {
        let bytes = encode_checkpoint(&model, threshold);
        assert!(decode_checkpoint(&bytes).is_ok());
    }
});
