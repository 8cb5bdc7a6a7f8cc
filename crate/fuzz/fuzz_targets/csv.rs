#![no_main]

use dtsemnet::data::{read_csv, Dataset, Schema};
use dtsemnet::semnet::Task;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_csv(data) else { return };
    for task in [Task::Classification, Task::Regression] {
        if let Ok(ds) = Dataset::from_table(&table, &Schema::new(task)) {
            let _ = ds.split(dtsemnet::data::Fractions::CLASSIFICATION, 0);
        }
    }
});
