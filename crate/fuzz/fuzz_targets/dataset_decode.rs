#![no_main]

use libfuzzer_sys::fuzz_target;
use prunelab::data::{DType, Dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::decode(data) {
        // f64 storage holds every decoded value exactly.
        let again = Dataset::decode(&ds.encode(DType::F64)).expect("re-encoded dataset decodes");
        assert_eq!(again.encode(DType::F64), ds.encode(DType::F64));
    }
});
