#![no_main]

use libfuzzer_sys::fuzz_target;
use tbc_core::scenario::{apply_override, builtin_source, ScenarioConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let specs: Vec<String> = text.lines().take(8).map(str::to_string).collect();
    let base = builtin_source("head_on").unwrap();
    let mut tree: toml::Value = toml::from_str(base).unwrap();
    for s in &specs {
        let _ = apply_override(&mut tree, s);
    }
    let _ = ScenarioConfig::from_toml_with_overrides(base, &specs);
});
