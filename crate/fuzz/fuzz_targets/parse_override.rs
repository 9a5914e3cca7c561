#![no_main]

use libfuzzer_sys::fuzz_target;
use rollhand::scenario::{bundled_source, parse_override, parse_scenario_with};

// Each line is one override, applied to a bundled scenario.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let overrides: Vec<_> = text.lines().filter_map(|l| parse_override(l).ok()).collect();
    let _ = parse_scenario_with(bundled_source("fig6_disk").unwrap(), &overrides);
});
