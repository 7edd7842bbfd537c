//! One-dimensional integrators used as closed-form test systems.

pub(super) const TARGET_RADIUS: f64 = 0.25;

pub(super) fn target(x: f64) -> f64 {
    x.abs() - TARGET_RADIUS
}
