//! Weight initializers, all driven by an explicit seeded stream.

use crate::Arr;
use diffdet_core::SeedStream;
use ndarray::IxDyn;

/// He-normal initialization: std = sqrt(2 / fan_in).
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut SeedStream) -> Arr {
    let std = (2.0 / fan_in as f64).sqrt();
    Arr::from_shape_simple_fn(IxDyn(shape), || rng.normal() * std)
}

/// Normal initialization with explicit std.
pub fn normal(shape: &[usize], std: f64, rng: &mut SeedStream) -> Arr {
    Arr::from_shape_simple_fn(IxDyn(shape), || rng.normal() * std)
}

pub fn zeros(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

pub fn full(shape: &[usize], value: f64) -> Arr {
    Arr::from_elem(IxDyn(shape), value)
}

/// Fan-in of a conv weight `(Cout, Cin, kh, kw)`.
pub fn conv_fan_in(shape: &[usize]) -> usize {
    shape[1] * shape[2] * shape[3]
}
