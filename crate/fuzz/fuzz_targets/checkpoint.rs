#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((spec, params)) = eleatt::checkpoint::decode(data) {
        params.check_spec(&spec).unwrap();
        assert_eq!(eleatt::checkpoint::encode(&params), data);
    }
});
