#![no_main]

use imuloc::io::Container;
use imuloc::pipeline::{labels_from_container, prepared_from_container, simulated_from_container};
use libfuzzer_sys::fuzz_target;

// Stage artifact decoders must reject malformed containers without panicking.
fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let _ = simulated_from_container(&c);
        let _ = prepared_from_container(&c);
        let _ = labels_from_container(&c);
    }
});
