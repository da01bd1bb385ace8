#![no_main]

use libfuzzer_sys::fuzz_target;
use qmda::experiments::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        // A config that validated once must survive a round trip.
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), cfg.to_json().unwrap());
        let _ = cfg.filter_config();
    }
});
