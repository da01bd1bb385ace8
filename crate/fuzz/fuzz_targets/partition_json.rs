#![no_main]

use libfuzzer_sys::fuzz_target;
use qmda::quantizer::PartitionSummary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(summary) = PartitionSummary::from_json(text) {
        if let Ok(binning) = summary.binning() {
            for a in [f64::NEG_INFINITY, -1.0, 0.0, 1.0, f64::INFINITY, f64::NAN] {
                assert!(binning.affiliation(a) < binning.s());
            }
        }
    }
});
