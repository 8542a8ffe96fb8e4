#![no_main]

use bgmoe::model_io::{from_text, to_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = from_text(text) {
        let again = to_text(&model);
        assert!(from_text(&again).is_ok());
    }
});
