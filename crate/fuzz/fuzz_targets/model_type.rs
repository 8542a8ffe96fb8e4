#![no_main]

use bgmoe::{ModelSpec, ModelType};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&g, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if text.parse::<ModelType>().is_ok() {
        let covs = vec!["w1".to_string()];
        let _ = ModelSpec::build(text, usize::from(g % 9), covs.clone(), [covs.clone(), vec![], covs.clone()], covs);
    }
});
