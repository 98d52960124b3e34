#![no_main]

use libfuzzer_sys::fuzz_target;
use superopt::isa::{format_program, parse_listing};

// Whatever parses must print and parse back to the same program.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(program) = parse_listing(text) else { return };
    let printed = format_program(&program);
    let again = parse_listing(&printed).expect("printed program parses");
    assert_eq!(again.compacted(), program.compacted());
});
