#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(scan) = qcnet_core::decode_nifti(data, "fuzz") {
        // Anything accepted must re-encode and decode to the same voxels.
        let bytes = qcnet_core::encode_nifti(&scan).expect("decoded scan encodes");
        let back = qcnet_core::decode_nifti(&bytes, "fuzz").expect("re-encoded scan decodes");
        assert_eq!(back.volumes.len(), scan.volumes.len());
    }
});
