//! The baseline CSV parser must reject arbitrary bytes gracefully: no
//! panics, and accepted rows always match the schema's encoded width.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mhmmx::data::{ColumnKind, ColumnSpec, DatasetSchema, RiskFactorEncoding};

fn schema() -> DatasetSchema {
    DatasetSchema::with_defaults(vec![
        ColumnSpec {
            name: "age".into(),
            kind: ColumnKind::Numeric,
        },
        ColumnSpec {
            name: "smoker".into(),
            kind: ColumnKind::Binary {
                levels: ["no".into(), "yes".into()],
            },
        },
        ColumnSpec {
            name: "site".into(),
            kind: ColumnKind::Categorical {
                levels: vec!["a".into(), "b".into(), "c".into()],
            },
        },
    ])
}

fuzz_target!(|data: &[u8]| {
    let schema = schema();
    if let Ok(rows) = mhmmx::data::parse_baseline_csv(data, &schema) {
        let width = RiskFactorEncoding::new(schema.columns.clone()).encoded_width();
        for (id, x) in &rows {
            assert!(!id.is_empty());
            assert_eq!(x.len(), width);
            assert!(x.iter().all(|v| v.is_finite()));
        }
    }
});
