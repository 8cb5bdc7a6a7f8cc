#![no_main]

use dtsemnet::data::{read_libsvm, write_libsvm};
use libfuzzer_sys::fuzz_target;

// Canonical output must be a fixed point of read + write.
fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_libsvm(data, None) else {
        return;
    };
    let text = write_libsvm(&table);
    let again = read_libsvm(text.as_bytes(), Some(table.features.cols()))
        .expect("canonical libsvm text reparses");
    assert_eq!(write_libsvm(&again), text);
});
