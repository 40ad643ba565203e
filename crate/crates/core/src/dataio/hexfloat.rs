//! Hexadecimal float literals (`0x1.8p+1`), the exact-round-trip number format
//! used by every text file this crate writes.

/// Format `x` as a hex float literal. Finite inputs only.
pub fn format_hex(x: f64) -> String {
    debug_assert!(x.is_finite());
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - 1023) };
    let esign = if exp < 0 { '-' } else { '+' };
    if mantissa == 0 {
        return format!("{sign}0x{lead}p{esign}{}", exp.abs());
    }
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    format!("{sign}0x{lead}.{digits}p{esign}{}", exp.abs())
}

/// Parse a hex float literal; decimal literals are accepted as well.
/// Non-finite values are rejected.
pub fn parse_hex(s: &str) -> Result<f64, String> {
    let (neg, body) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) else {
        return s
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("invalid number literal {s:?}"));
    };
    let (digits, exp) = match hex.find(['p', 'P']) {
        Some(i) => {
            let e: i64 = hex[i + 1..].parse().map_err(|_| format!("invalid exponent in {s:?}"))?;
            (&hex[..i], e)
        }
        None => (hex, 0),
    };
    let (int_part, frac_part) = match digits.find('.') {
        Some(i) => (&digits[..i], &digits[i + 1..]),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("no digits in {s:?}"));
    }
    let mut mant: u64 = 0;
    let mut significant = 0usize;
    for c in int_part.chars().chain(frac_part.chars()) {
        let d = c
            .to_digit(16)
            .ok_or_else(|| format!("invalid hex digit {c:?} in {s:?}"))?;
        if significant > 0 || d != 0 {
            significant += 1;
        }
        if significant > 16 {
            return Err(format!("too many significant digits in {s:?}"));
        }
        mant = (mant << 4) | u64::from(d);
    }
    let mut e = exp
        .checked_sub(4 * frac_part.len() as i64)
        .ok_or_else(|| format!("exponent out of range in {s:?}"))?;
    let mut v = mant as f64;
    while e > 1000 && v != 0.0 {
        v *= 2f64.powi(1000);
        e -= 1000;
        if !v.is_finite() {
            break;
        }
    }
    while e < -1000 && v != 0.0 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v *= 2f64.powi(e.clamp(-1100, 1100) as i32);
    if !v.is_finite() {
        return Err(format!("non-finite value {s:?}"));
    }
    Ok(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_literals() {
        assert_eq!(format_hex(1.0), "0x1p+0");
        assert_eq!(format_hex(3.0), "0x1.8p+1");
        assert_eq!(format_hex(-0.375), "-0x1.8p-2");
        assert_eq!(format_hex(0.0), "0x0p+0");
        assert_eq!(format_hex(-0.0), "-0x0p+0");
        assert_eq!(parse_hex("0x1.8p+1").unwrap(), 3.0);
        assert_eq!(parse_hex("0X10").unwrap(), 16.0);
        assert_eq!(parse_hex("-0x.8p0").unwrap(), -0.5);
        assert_eq!(parse_hex("2.25").unwrap(), 2.25);
    }

    #[test]
    fn extremes_round_trip() {
        for x in [f64::MAX, f64::MIN_POSITIVE, 5e-324, -5e-324, 1e-310, f64::EPSILON] {
            assert_eq!(parse_hex(&format_hex(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rejects_garbage_and_non_finite() {
        for s in ["", "0x", "0xg", "nan", "inf", "-inf", "0x1p+2000", "1e400", "0x1.8q3"] {
            assert!(parse_hex(s).is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            prop_assert_eq!(parse_hex(&format_hex(x)).unwrap().to_bits(), bits);
        }
    }
}
