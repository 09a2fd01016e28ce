#![no_main]

use libfuzzer_sys::fuzz_target;
use metatopo::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // parsing arbitrary TOML must not panic; accepted configs must
        // survive a serialize/parse cycle unchanged
        if let Ok(cfg) = RunConfig::from_toml(text) {
            let round = RunConfig::from_toml(&cfg.to_toml()).expect("rewritten config must parse");
            assert_eq!(round, cfg);
        }
    }
});
