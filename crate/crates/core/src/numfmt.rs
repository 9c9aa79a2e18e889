//! Lossless decimal formatting of `f64`.

/// Formats with 17 significant digits, which round-trips every finite `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Ceiling that ignores rounding noise just above an integer (e.g. `66.00000000000001`).
pub fn ceil_tol(x: f64) -> i64 {
    (x - 1e-9).ceil() as i64
}

/// Floor that ignores rounding noise just below an integer.
pub fn floor_tol(x: f64) -> i64 {
    (x + 1e-9).floor() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fmt_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn tolerant_rounding() {
        assert_eq!(ceil_tol(-66.5), -66);
        assert_eq!(floor_tol(332.5), 332);
        assert_eq!(ceil_tol(133.00000000000003), 133);
        assert_eq!(floor_tol(249.99999999999997), 250);
    }
}
