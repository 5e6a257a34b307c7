#![no_main]

use libfuzzer_sys::fuzz_target;
use prunelab::pruning::Mask;

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = Mask::decode(data) {
        // Padding bits are rejected, so the encoding is canonical.
        assert_eq!(mask.encode(), data);
    }
});
