//! Shared helpers for CLI integration tests: binary invocation and a small
//! JSON Schema checker covering the subset used by the shipped schemas
//! (type, required, properties, additionalProperties, items, enum, minimum).

use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_rtnerf"))
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("spawn rtnerf")
}

pub fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn load_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"))
}

pub fn load_schema(name: &str) -> Value {
    load_json(&workspace_root().join("schemas").join(name))
}

pub fn assert_valid(value: &Value, schema: &Value, what: &str) {
    let mut errors = Vec::new();
    validate(value, schema, "$", &mut errors);
    assert!(
        errors.is_empty(),
        "{what} does not match schema:\n{}",
        errors.join("\n")
    );
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        other => panic!("unsupported schema type {other:?}"),
    }
}

fn validate(value: &Value, schema: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(s) => type_matches(value, s),
            Value::Array(options) => options
                .iter()
                .any(|t| type_matches(value, t.as_str().expect("type name"))),
            other => panic!("unsupported type listing {other:?}"),
        };
        if !ok {
            errors.push(format!("{path}: type mismatch, expected {ty}, got {value}"));
            return;
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            errors.push(format!("{path}: {value} not in enum {options:?}"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        if let Some(v) = value.as_f64() {
            if v < min {
                errors.push(format!("{path}: {v} below minimum {min}"));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required {
                let key = key.as_str().expect("required key");
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required key {key:?}"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        let additional = schema.get("additionalProperties");
        for (key, child) in obj {
            let child_path = format!("{path}.{key}");
            if let Some(child_schema) = props.and_then(|p| p.get(key)) {
                validate(child, child_schema, &child_path, errors);
            } else {
                match additional {
                    Some(Value::Bool(false)) => {
                        errors.push(format!("{path}: unexpected key {key:?}"));
                    }
                    Some(schema @ Value::Object(_)) => {
                        validate(child, schema, &child_path, errors);
                    }
                    _ => {}
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            validate(child, items, &format!("{path}[{i}]"), errors);
        }
    }
}
