//! Instance files: JSON documents holding a [`RawSystem`].

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{validate, RawSystem, ServiceSystem};

const KNOWN_KEYS: &[&str] = &[
    "n_units",
    "n_nodes",
    "arrival_rate",
    "demand_fractions",
    "service_rates",
    "preferences",
    "buffer_capacity",
    "travel_times",
    "metadata",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Unknown keys are an error.
    #[default]
    Strict,
    /// Unknown keys are dropped with a warning.
    Lenient,
}

#[derive(Debug, Clone)]
pub struct ParsedInstance {
    pub system: ServiceSystem,
    pub warnings: Vec<String>,
}

pub fn parse_instance(text: &str, mode: ParseMode) -> Result<ParsedInstance> {
    let mut warnings = Vec::new();
    let raw: RawSystem = match mode {
        ParseMode::Strict => serde_json::from_str(text)?,
        ParseMode::Lenient => {
            let mut value: Value = serde_json::from_str(text)?;
            if let Value::Object(map) = &mut value {
                let unknown: Vec<String> = map
                    .keys()
                    .filter(|k| !KNOWN_KEYS.contains(&k.as_str()))
                    .cloned()
                    .collect();
                for k in unknown {
                    map.remove(&k);
                    warnings.push(format!("ignoring unknown key {k:?}"));
                }
            }
            serde_json::from_value(value)?
        }
    };
    Ok(ParsedInstance {
        system: validate(raw)?,
        warnings,
    })
}

pub fn read_instance(path: &Path, mode: ParseMode) -> Result<ParsedInstance> {
    let text = std::fs::read_to_string(path)?;
    parse_instance(&text, mode)
}

pub fn instance_to_json(raw: &RawSystem) -> String {
    let mut s = serde_json::to_string_pretty(raw).expect("instance serializes");
    s.push('\n');
    s
}

/// `true` when the error stems from the instance itself rather than I/O.
pub fn is_validation_error(e: &Error) -> bool {
    matches!(
        e,
        Error::NonPermutationPreference { .. }
            | Error::FractionsNotNormalized { .. }
            | Error::NonPositiveRate { .. }
            | Error::DimensionMismatch(_)
            | Error::StateSpaceTooLarge(_)
            | Error::Json(_)
            | Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::MissingTravelTimes
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "n_units": 2, "n_nodes": 1, "arrival_rate": 1.0,
        "demand_fractions": [1.0], "service_rates": [1.0, 1.0],
        "preferences": [[1, 2]], "colour": "blue"
    }"#;

    #[test]
    fn strict_rejects_unknown_keys() {
        assert!(matches!(
            parse_instance(DOC, ParseMode::Strict),
            Err(Error::Json(_))
        ));
    }

    #[test]
    fn lenient_warns() {
        let p = parse_instance(DOC, ParseMode::Lenient).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert_eq!(p.system.n_units(), 2);
        assert_eq!(p.system.buffer_capacity(), 0);
    }

    #[test]
    fn round_trip() {
        let p = parse_instance(DOC, ParseMode::Lenient).unwrap();
        let text = instance_to_json(p.system.raw());
        let back = parse_instance(&text, ParseMode::Strict).unwrap();
        assert_eq!(back.system.raw(), p.system.raw());
    }

    #[test]
    fn generated_instances_round_trip_exactly() {
        let sys = crate::bench::InstanceGenerator::new(6, 10, 0.5, 3)
            .generate()
            .unwrap();
        let text = instance_to_json(sys.raw());
        let back = parse_instance(&text, ParseMode::Strict).unwrap();
        assert_eq!(back.system.raw(), sys.raw());
        assert_eq!(instance_to_json(back.system.raw()), text);
    }
}
