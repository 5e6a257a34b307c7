//! PLCK checkpoints: decoding must never panic, and anything accepted must
//! survive a re-encode unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use prunelab::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        // Byte comparison: decoded weights may be NaN.
        assert_eq!(again.encode(), ck.encode());
    }
});
