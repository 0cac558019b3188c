#![no_main]

use libfuzzer_sys::fuzz_target;
use spkf_nui::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        // Anything accepted must survive its own serialisation.
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg.hash(), again.hash());
    }
});
