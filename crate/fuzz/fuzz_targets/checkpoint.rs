#![no_main]

use dtsemnet::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ck) = Checkpoint::from_json(text) else {
        return;
    };
    let Ok(net) = ck.to_net() else { return };
    let _ = net.forward(&vec![0.0; net.dim()]);
});
