#![no_main]

use libfuzzer_sys::fuzz_target;
use metatopo::io::dataset;

fuzz_target!(|data: &[u8]| {
    // decoding must never panic; accepted inputs must re-encode and decode
    // to the same dataset
    if let Ok(ds) = dataset::decode(data) {
        let bytes = dataset::encode(&ds);
        let again = dataset::decode(&bytes).expect("re-encoded dataset must decode");
        assert_eq!(again, ds);
    }
});
