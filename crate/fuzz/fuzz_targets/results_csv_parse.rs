#![no_main]

use libfuzzer_sys::fuzz_target;
use metatopo::io::results;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = results::parse(text) {
            // NaN cells block direct equality; compare canonical encodings
            let encoded = results::encode(&table);
            let again = results::parse(&encoded).expect("canonical encoding must parse");
            assert_eq!(results::encode(&again), encoded);
        }
    }
});
