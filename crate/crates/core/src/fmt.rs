//! Deterministic float formatting for the text formats.
//!
//! `format_sig` follows C's `%.<n>g`: fixed notation when the decimal
//! exponent lies in `[-5, n)`, scientific otherwise, trailing zeros trimmed.
//! 9 significant digits round-trip any `f32`, 17 round-trip any `f64`.

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn format_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim_fraction(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// Fixed six-decimal formatting used by the metrics JSON.
pub fn format_fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    // avoid "-0.000000"
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
