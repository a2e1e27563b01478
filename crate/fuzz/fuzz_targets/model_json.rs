//! Fitted-model JSON is untrusted input to `assign`/`decode`/`accuracy`;
//! decoding must never panic, and any accepted model must validate.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mhmmx::mixture::FittedModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = FittedModel::from_json(text) {
            // from_json validates; these must therefore hold
            assert!(m.model.n_subgroups() >= 1);
            m.model.validate().expect("accepted model revalidates");
        }
    }
});
