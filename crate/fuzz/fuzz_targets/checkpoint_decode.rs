#![no_main]

use libfuzzer_sys::fuzz_target;
use metatopo::io::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = checkpoint::decode(data) {
        // accepted checkpoints satisfy the layout invariant
        assert_eq!(ckpt.params.values.len(), ckpt.params.config.count_params());
        let bytes = checkpoint::encode(&ckpt);
        let again = checkpoint::decode(&bytes).expect("re-encoded checkpoint must decode");
        assert_eq!(again, ckpt);
    }
});
