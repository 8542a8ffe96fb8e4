#![no_main]

use bgmoe::config::GridSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(grid) = text.parse::<GridSpec>() {
        assert!(grid.cell_area() > 0.0);
        assert_eq!(grid.y1.points().count(), grid.y1.steps);
    }
});
