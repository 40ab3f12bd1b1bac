#![no_main]

use libfuzzer_sys::fuzz_target;
use tbc_core::protocol::{encode_client, parse_client, ClientMessage};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ClientMessage::Command(cmd)) = parse_client(text) {
        assert_eq!(parse_client(&encode_client(&cmd)).unwrap(), ClientMessage::Command(cmd));
    }
});
