//! Number formatting shared by every report.

/// Round to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Shortest text of `x` rounded to 6 significant digits.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    format!("{}", sig6(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(fmt6(0.363670001), "0.36367");
        assert_eq!(fmt6(2.449489742783178), "2.44949");
        assert_eq!(fmt6(200000.0), "200000");
        assert_eq!(fmt6(1.0 / 3.0 * 1e-9), "0.000000000333333");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(f64::NAN), "NaN");
    }
}
