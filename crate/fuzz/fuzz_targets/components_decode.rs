#![no_main]

use libfuzzer_sys::fuzz_target;
use prunelab::decomp::Components;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Components::decode(data) {
        let again = Components::decode(&c.encode()).expect("re-encoded components decode");
        assert_eq!(again.encode(), c.encode());
    }
});
