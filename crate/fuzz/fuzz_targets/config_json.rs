//! Fuzzes the experiment-config JSON parser/validator.
//!
//! Arbitrary bytes must never panic; malformed documents and out-of-range
//! values are rejected as errors.
#![no_main]

use libfuzzer_sys::fuzz_target;
use persopt::bench::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::from_json(text) {
        // An accepted config survives normalization and re-validation.
        let json = serde_json::to_string(&config).expect("accepted config serializes");
        let again = ExperimentConfig::from_json(&json).expect("normalized config reparses");
        assert_eq!(again.function, config.function);
        assert_eq!(again.n0, config.n0);
    }
});
