#![no_main]

use libfuzzer_sys::fuzz_target;
use nvpolar::io::{load_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(d) = load_dataset(s) {
        assert_eq!(load_dataset(&write_dataset(&d)).unwrap(), d);
    }
});
