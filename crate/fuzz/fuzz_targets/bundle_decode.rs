#![no_main]

use libfuzzer_sys::fuzz_target;
use qmda::bundle::AnyBundle;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(bundle) = AnyBundle::decode(data) {
        assert_eq!(bundle.encode(), data);
    }
});
