//! Output formatting shared by the CSV writers.

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed,
/// scientific notation outside `1e-4 <= |v| < 1e9`.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
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
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, v)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::format_float;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(2f64.ln() * 1000.0), "693.147181");
        assert_eq!(format_float(123456789.0), "123456789");
        assert_eq!(format_float(1234567891.0), "1.23456789e+09");
        assert_eq!(format_float(4.53988e-5), "4.53988e-05");
        assert_eq!(format_float(0.0001), "0.0001");
    }
}
