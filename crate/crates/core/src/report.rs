//! Number formatting shared by the CSV writers.

/// `printf("%.17g")`: 17 significant digits, fixed notation for decimal exponents
/// in `-5..17`, trailing zeros trimmed.
pub fn g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// Shortest representation that parses back to the same `f64`.
pub fn shortest(v: f64) -> String {
    format!("{v}")
}
