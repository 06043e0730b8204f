//! Pretty JSON with every float written to 17 significant digits.

use std::fmt::Write as _;

use serde_json::Value;

/// Renders `value` with two-space indentation. Floats use
/// `d.dddddddddddddddde±x` notation, integers stay integral, and non-finite
/// floats (already `null` after `serde_json::to_value`) stay `null`.
pub fn to_string_17(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, value: &Value, level: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f.is_finite() {
                    let _ = write!(out, "{f:.16e}");
                } else {
                    out.push_str("null");
                }
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escapes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                out.push_str(if i + 1 == items.len() { "\n" } else { ",\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, v)) in map.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&serde_json::to_string(k).expect("key escapes"));
                out.push_str(": ");
                write_value(out, v, level + 1);
                out.push_str(if i + 1 == map.len() { "\n" } else { ",\n" });
            }
            indent(out, level);
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_round_trip_at_17_digits() {
        let v = json!({"a": 0.1, "b": [1, -2, 1e-300], "c": "x\"y", "d": null, "e": 1.0});
        let s = to_string_17(&v);
        assert!(s.contains("1.0000000000000001e-1"));
        assert!(s.contains("1.0000000000000000e0"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(back["b"][1].as_i64(), Some(-2));
        assert_eq!(back["c"], "x\"y");
    }

    #[test]
    fn every_float_keeps_its_bits() {
        for &f in &[std::f64::consts::PI, -2.5e-17, 123_456_789.123_456_78, f64::MIN_POSITIVE, f64::MAX] {
            let s = to_string_17(&json!(f));
            assert_eq!(s.trim().parse::<f64>().unwrap().to_bits(), f.to_bits());
        }
    }
}
