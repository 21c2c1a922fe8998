#![no_main]

use libfuzzer_sys::fuzz_target;
use lrcp_cli::stage::StageLog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = StageLog::parse(text) {
        assert_eq!(StageLog::parse(&log.to_text()).expect("written log parses"), log);
    }
});
