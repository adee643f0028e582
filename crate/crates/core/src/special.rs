//! Bessel functions of the first kind of orders 0 and 1.
//!
//! Both are thin wrappers around the fdlibm rational/asymptotic
//! approximations shipped by `libm`; the tests below pin their accuracy
//! against the integral representation.

#[inline]
pub fn bessel_j0(x: f64) -> f64 {
    libm::j0(x)
}

#[inline]
pub fn bessel_j1(x: f64) -> f64 {
    libm::j1(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    // J_n(x) = (1/pi) int_0^pi cos(n t - x sin t) dt. The integrand is smooth
    // and periodic, so the midpoint rule converges spectrally.
    fn bessel_integral(n: i32, x: f64) -> f64 {
        let m = 4000;
        let h = PI / m as f64;
        (0..m)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                (n as f64 * t - x * t.sin()).cos()
            })
            .sum::<f64>()
            * h
            / PI
    }

    #[test]
    fn matches_integral_representation_to_1e10() {
        for i in 0..=800 {
            let x = i as f64 * 0.05;
            let e0 = (bessel_j0(x) - bessel_integral(0, x)).abs();
            let e1 = (bessel_j1(x) - bessel_integral(1, x)).abs();
            assert!(e0 < 1e-10, "J0({x}) off by {e0}");
            assert!(e1 < 1e-10, "J1({x}) off by {e1}");
        }
    }

    #[test]
    fn values_at_origin_and_parity() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert_eq!(bessel_j1(0.0), 0.0);
        assert_eq!(bessel_j0(-3.3), bessel_j0(3.3));
        assert_eq!(bessel_j1(-3.3), -bessel_j1(3.3));
    }

    #[test]
    fn first_zeros() {
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-12);
        assert!(bessel_j1(3.831_705_970_207_512).abs() < 1e-12);
    }
}
