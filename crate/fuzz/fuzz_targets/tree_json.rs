#![no_main]

use dtsemnet::interchange::TreeDocument;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(doc) = serde_json::from_slice::<TreeDocument>(data) else {
        return;
    };
    let Ok(model) = doc.to_model() else { return };
    let _ = model.predict(&vec![0.0; model.params.dim()]);
    let back = TreeDocument::from_model(&model).expect("a valid model re-exports");
    back.to_model().expect("re-exported document loads");
});
