#![no_main]

use libfuzzer_sys::fuzz_target;
use qmda::kernel::EigenBasis;

fuzz_target!(|data: &[u8]| {
    if let Ok(basis) = EigenBasis::read_csv(data) {
        assert_eq!(basis.eigenvalues().len(), basis.l());
        let _ = basis.orthonormality_error();
    }
});
