#![no_main]

use imuloc::io::Container;
use libfuzzer_sys::fuzz_target;

// Anything that decodes must re-encode to bytes that decode to the same value.
fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let again = Container::from_bytes(&c.to_bytes()).expect("re-encoded container decodes");
        assert_eq!(again.to_bytes(), c.to_bytes());
    }
});
