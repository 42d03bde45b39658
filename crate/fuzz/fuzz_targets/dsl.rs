#![no_main]

use libfuzzer_sys::fuzz_target;
use nvpolar::io::dsl::{parse_pulse_program, print_pulse_program};
use nvpolar::rates::PresetTable;
use nvpolar::spin::{transition_frequencies, RegisterParams};

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else {
        return;
    };
    let presets = PresetTable::builtin();
    let table = transition_frequencies(&RegisterParams::default()).unwrap();
    if let Ok(program) = parse_pulse_program(src, &presets, &table) {
        // accepted programs must survive print -> parse unchanged
        let text = print_pulse_program(&program).unwrap();
        let again = parse_pulse_program(&text, &presets, &table).unwrap();
        assert_eq!(again, program);
    }
});
