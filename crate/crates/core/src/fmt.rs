//! Locale-independent decimal formatting for CSV artifacts.

/// `x` rounded to `sig` significant digits, written without an exponent
/// (unless the magnitude is extreme) and with trailing zeros trimmed.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp.abs() > 20 {
        let m = trim(mantissa);
        return format!("{m}e{exp}");
    }
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (a, b) = digits.split_at(point as usize);
        format!("{a}.{b}")
    };
    let body = trim(&body);
    if neg {
        format!("-{body}")
    } else {
        body.to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_sig;

    #[test]
    fn examples() {
        assert_eq!(fmt_sig(0.0, 12), "0");
        assert_eq!(fmt_sig(-0.09, 12), "-0.09");
        assert_eq!(fmt_sig(1.9, 12), "1.9");
        assert_eq!(fmt_sig(0.1 + 0.2, 12), "0.3");
        assert_eq!(fmt_sig(100.0, 12), "100");
        assert_eq!(fmt_sig(2.5e7, 12), "25000000");
        assert_eq!(fmt_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(fmt_sig(-123456.7890123456, 12), "-123456.789012");
        assert_eq!(fmt_sig(0.000123, 12), "0.000123");
        assert_eq!(fmt_sig(1e30, 12), "1e30");
        assert_eq!(fmt_sig(f64::INFINITY, 12), "inf");
    }
}
