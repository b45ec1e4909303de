#![no_main]
use libfuzzer_sys::fuzz_target;

// Trace CSV: a parsed trace must also round-trip through write_trace.
fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(trace) = wavesched::workload::parse_trace(s) {
            let dims = trace.dims;
            let frames = trace.frames.len();
            let Ok(models) = trace.into_cost_models(Default::default(), Default::default()) else {
                return;
            };
            let back = wavesched::workload::parse_trace(&wavesched::workload::write_trace(&models)).unwrap();
            assert_eq!(back.dims, dims);
            assert_eq!(back.frames.len(), frames);
        }
    }
});
