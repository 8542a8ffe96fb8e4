#![no_main]

use bgmoe::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::from_csv_reader(data, false) {
        let mut out = Vec::new();
        let _ = ds.write_csv(&mut out);
    }
    let _ = Dataset::from_csv_reader(data, true);
});
