#![no_main]

use libfuzzer_sys::fuzz_target;
use qmda::dynamics::TrajectoryDataset;

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = TrajectoryDataset::read_csv(data) else {
        return;
    };
    assert_eq!(ds.points().len(), ds.n_samples() * ds.dim());
    let mut out = Vec::new();
    ds.write_csv(&mut out).unwrap();
    let back = TrajectoryDataset::read_csv(out.as_slice()).unwrap();
    assert_eq!(back.points(), ds.points());
});
