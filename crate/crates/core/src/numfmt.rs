//! Float formatting for emitted reports: six significant digits everywhere.

/// Round to `digits` significant digits. Zero and non-finite values pass
/// through unchanged.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

/// Canonical report formatting: six significant digits, shortest decimal.
pub fn fmt_sig(x: f64) -> String {
    round_sig(x, 6).to_string()
}

/// Round every fractional number in a JSON tree to six significant digits.
/// Integers are left alone.
pub fn round_json_floats(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) => {
            if !n.is_i64() && !n.is_u64() {
                if let Some(f) = n.as_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig(f, 6)) {
                        *n = rounded;
                    }
                }
            }
        }
        serde_json::Value::Array(items) => {
            for item in items {
                round_json_floats(item);
            }
        }
        serde_json::Value::Object(map) => {
            for (_, item) in map.iter_mut() {
                round_json_floats(item);
            }
        }
        _ => {}
    }
}
