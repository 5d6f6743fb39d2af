//! Closed-form unicycle motion, used to bound the integrator's drift.

/// Exact pose after driving constant (v, omega) for `t` seconds from the
/// origin with heading 0. Returns (x, y, theta).
pub fn closed_form_arc(v: f64, omega: f64, t: f64) -> (f64, f64, f64) {
    if omega.abs() < 1e-12 {
        return (v * t, 0.0, 0.0);
    }
    let theta = omega * t;
    let r = v / omega;
    (r * theta.sin(), r * (1.0 - theta.cos()), theta)
}

/// Exact pose after the same maneuver starting from an arbitrary pose.
pub fn closed_form_from(start: (f64, f64, f64), v: f64, omega: f64, t: f64) -> (f64, f64, f64) {
    let (lx, ly, lt) = closed_form_arc(v, omega, t);
    let (sin, cos) = start.2.sin_cos();
    (
        start.0 + cos * lx - sin * ly,
        start.1 + sin * lx + cos * ly,
        start.2 + lt,
    )
}

#[cfg(test)]
mod tests {
    #[test]
    fn quarter_circle_lands_on_axis() {
        let (x, y, th) = super::closed_form_arc(1.0, 1.0, std::f64::consts::FRAC_PI_2);
        assert!((x - 1.0).abs() < 1e-12);
        assert!((y - 1.0).abs() < 1e-12);
        assert!((th - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn straight_line_limit_matches() {
        let (x, y, th) = super::closed_form_arc(2.0, 0.0, 3.0);
        assert_eq!((x, y, th), (6.0, 0.0, 0.0));
    }
}
