//! Fuzzes the cost-report CSV parser.
//!
//! Arbitrary bytes must never panic, and anything that parses must re-emit
//! to a byte-identical CSV (the round-trip the harness relies on).
#![no_main]

use libfuzzer_sys::fuzz_target;
use persopt::report::{CostReport, RunMetadata, COST_HEADER};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = CostReport::parse_csv(text) {
        let report = CostReport {
            rows,
            metadata: RunMetadata {
                function: "fuzz".into(),
                seed: 0,
                replicates: 0,
                iterations: 0,
                wall_clock_secs: 0.0,
                version: "fuzz".into(),
            },
        };
        let emitted = report.to_csv();
        assert!(emitted.starts_with(COST_HEADER));
        let again = CostReport::parse_csv(&emitted).expect("emitted csv reparses");
        let report2 = CostReport {
            rows: again,
            metadata: report.metadata.clone(),
        };
        assert_eq!(report2.to_csv(), emitted, "re-emission must be stable");
    }
});
