#![no_main]

use libfuzzer_sys::fuzz_target;
use oce_net::Config;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = Config::parse(text) {
        let _ = cfg.validate();
        let printed = cfg.to_string();
        let again = Config::parse(&printed).expect("printed config parses");
        assert_eq!(again.to_string(), printed);
    }
});
