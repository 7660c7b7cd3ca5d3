use super::chi2::ln_gamma;

/// Volume of the unit-radius D-ball over that of its circumscribing cube `(2r)^D`.
pub fn volume_ratio(d: usize) -> f64 {
    assert!(d >= 1, "dimension must be at least 1");
    let d = d as f64;
    let pi = std::f64::consts::PI;
    (0.5 * d * pi.ln() - d * 2f64.ln() - ln_gamma(0.5 * d + 1.0)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn known_dimensions() {
        assert!((volume_ratio(1) - 1.0).abs() < 1e-13);
        assert!((volume_ratio(2) - PI / 4.0).abs() < 1e-12);
        assert!((volume_ratio(3) - PI / 6.0).abs() < 1e-12);
        // pi^3 / 384
        assert!((volume_ratio(6) - 0.080_745_512_188_280_78).abs() < 1e-12);
    }

    #[test]
    fn strictly_decreasing_to_zero() {
        let v: Vec<f64> = (1..=50).map(volume_ratio).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
        assert!(v[49] < 1e-20);
    }
}
