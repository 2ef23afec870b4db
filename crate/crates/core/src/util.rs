use std::f64::consts::{PI, TAU};

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Rounds to `digits` significant decimal digits so that serialized output is
/// stable across platforms and runs.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    s.parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!(wrap_angle(0.0) == 0.0);
        for k in -20..20 {
            let a = 0.3 + k as f64 * TAU;
            assert!((wrap_angle(a) - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn round_sig_digits() {
        assert_eq!(round_sig(1.234567891234, 9), 1.23456789);
        assert_eq!(round_sig(-0.000123456789123, 9), -0.000123456789);
        assert_eq!(round_sig(0.0, 9), 0.0);
    }
}
