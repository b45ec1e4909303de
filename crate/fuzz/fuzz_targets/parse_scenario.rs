#![no_main]
use libfuzzer_sys::fuzz_target;
use wavesched::config::{parse_kv, parse_scenario, Scenario};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_kv(s);
        if let Ok(scenario) = parse_scenario(s, &Scenario::default()) {
            // Whatever parses must serialize and parse back unchanged.
            let text = scenario.to_text().unwrap();
            assert_eq!(parse_scenario(&text, &Scenario::default()).unwrap(), scenario);
        }
    }
});
