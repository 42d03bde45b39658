#![no_main]

use libfuzzer_sys::fuzz_target;
use nvpolar::io::{load_state, write_state};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(state) = load_state(s) {
        assert_eq!(load_state(&write_state(&state)).unwrap(), state);
    }
});
