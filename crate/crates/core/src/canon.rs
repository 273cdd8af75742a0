//! Canonical JSON: sorted keys (serde_json's default map is ordered) and
//! floats rounded to 9 significant digits, so identical values always
//! serialize to identical bytes.

use serde::Serialize;
use serde_json::Value;

/// Round a float to 9 significant decimal digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("round-trip of formatted float")
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    return serde_json::Number::from_f64(round_sig(f))
                        .map(Value::Number)
                        .unwrap_or(Value::Null);
                }
            }
            Value::Number(n)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Serialize to the canonical pretty-printed form (trailing newline).
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&canonicalize(v))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rounding_to_nine_digits() {
        assert_eq!(round_sig(0.1), 0.1);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333);
        assert_eq!(round_sig(123456789.123), 123456789.0);
        assert_eq!(round_sig(-2.718281828459045), -2.71828183);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn keys_sorted_and_stable() {
        let v = json!({"zeta": 1.0/3.0, "alpha": [1, 2.5, {"b": 2, "a": 1}]});
        let a = to_canonical_json(&v).unwrap();
        let b = to_canonical_json(&v).unwrap();
        assert_eq!(a, b);
        let alpha_pos = a.find("alpha").unwrap();
        let zeta_pos = a.find("zeta").unwrap();
        assert!(alpha_pos < zeta_pos);
        assert!(a.contains("0.333333333"));
    }

    #[test]
    fn reparse_round_trip_is_fixed_point() {
        let v = json!({"x": 0.1234567891234, "y": [9.999999999999, 1e-12]});
        let once = to_canonical_json(&v).unwrap();
        let reparsed: serde_json::Value = serde_json::from_str(&once).unwrap();
        let twice = to_canonical_json(&reparsed).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn integers_untouched() {
        let v = json!({"n": 12345678901234i64, "u": 42});
        let s = to_canonical_json(&v).unwrap();
        assert!(s.contains("12345678901234"));
        assert!(s.contains("42"));
    }
}
