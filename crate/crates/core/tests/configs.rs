use std::collections::BTreeSet;
use std::path::Path;

use serde_json::Value;

use robust_lanchester::commands::{cmd_aggregate, cmd_classic, cmd_optimize, cmd_simulate};
use robust_lanchester::config::{parse_config, ScenarioConfig};
use robust_lanchester::service::SCENARIO_SCHEMA;

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn schema_matches_config_fields() {
    let schema: Value = serde_json::from_str(SCENARIO_SCHEMA).unwrap();
    let defaults = serde_json::to_value(ScenarioConfig::default()).unwrap();
    let props = &schema["properties"];
    assert_eq!(keys(props), keys(&defaults));
    for (name, value) in defaults.as_object().unwrap() {
        if value.is_object() {
            assert_eq!(keys(&props[name]["properties"]), keys(value), "{name}");
        }
    }
    let prior = &schema["$defs"]["prior"]["properties"];
    assert_eq!(keys(prior), keys(&defaults["priors"][0]));
}

#[test]
fn schema_defaults_match_reference_scenario() {
    let schema: Value = serde_json::from_str(SCENARIO_SCHEMA).unwrap();
    let defaults = serde_json::to_value(ScenarioConfig::default()).unwrap();
    for (name, value) in defaults.as_object().unwrap() {
        let prop = &schema["properties"][name];
        if value.is_object() {
            for (field, v) in value.as_object().unwrap() {
                let d = &prop["properties"][field]["default"];
                assert!(d == v || d.as_f64() == v.as_f64() && v.is_number(), "{name}.{field}: {d} vs {v}");
            }
        } else {
            let d = &prop["default"];
            assert!(d == value || d.as_f64() == value.as_f64() && value.is_number(), "{name}: {d} vs {value}");
        }
    }
}

#[test]
fn example_configs_run_end_to_end() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let config = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let name = path.display();
        cmd_simulate(&config).unwrap_or_else(|e| panic!("{name}: {e}"));
        cmd_aggregate(&config).unwrap_or_else(|e| panic!("{name}: {e}"));
        cmd_classic(&config).unwrap_or_else(|e| panic!("{name}: {e}"));
        let result = cmd_optimize(&config).unwrap_or_else(|e| panic!("{name}: {e}"));
        let pi = result.optimal_pi.unwrap();
        assert!((config.optimizer.pi_floor..=1.0).contains(&pi), "{name}");
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn reference_file_is_the_default() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/reference.json")).unwrap();
    assert_eq!(parse_config(&text).unwrap(), ScenarioConfig::default());
}
