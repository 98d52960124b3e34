#![no_main]

use libfuzzer_sys::fuzz_target;
use superopt::testgen::{testcases_from_json, testcases_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(tests) = testcases_from_json(text) else { return };
    let again = testcases_from_json(&testcases_to_json(&tests)).expect("serialized testcases load");
    assert_eq!(again, tests);
});
