#![no_main]

use agentreg::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            assert_eq!(ExperimentConfig::parse(&cfg.render()).expect("rendered config parses"), cfg);
        }
    }
});
