#![no_main]

use libfuzzer_sys::fuzz_target;
use metatopo::io::density;

fuzz_target!(|data: &[u8]| {
    if let Ok((field, nelx, nely)) = density::decode(data) {
        assert_eq!(field.values.len(), nelx * nely);
        let bytes = density::encode(&field, nelx, nely);
        let (again, _, _) = density::decode(&bytes).expect("re-encoded field must decode");
        assert_eq!(again, field);
        if nelx * nely <= 1 << 16 {
            let pgm = density::to_pgm(&field, nelx, nely);
            assert!(pgm.len() >= nelx * nely);
        }
    }
});
