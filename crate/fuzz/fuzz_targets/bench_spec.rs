#![no_main]

use dtsemnet_cli::bench::BenchSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = BenchSpec::from_json(text) {
        for row in &spec.rows {
            row.run_config(None).expect("validated rows convert");
        }
    }
});
