#![no_main]

use libfuzzer_sys::fuzz_target;
use spr_cli::Config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::from_toml(text) {
            let echo = cfg.to_toml().expect("resolved config serializes");
            Config::from_toml(&echo).expect("resolved config parses back");
        }
    }
});
