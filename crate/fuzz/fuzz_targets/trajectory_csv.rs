//! The trajectory CSV parser must reject arbitrary bytes gracefully:
//! accepted trajectories always have the schema horizon and in-range
//! symptom values.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mhmmx::data::DatasetSchema;

fuzz_target!(|data: &[u8]| {
    let schema = DatasetSchema::with_defaults(vec![]);
    if let Ok(map) = mhmmx::data::parse_trajectory_csv(data, &schema) {
        for traj in map.values() {
            assert_eq!(traj.len(), schema.t);
            for obs in traj {
                if let Some(v) = obs.pain {
                    assert!(v <= schema.mp);
                }
                if let Some(v) = obs.disability {
                    assert!(v <= schema.md);
                }
            }
        }
    }
});
