//! Minimal reverse-mode autodiff over `ndarray`, sized for the desk-profile
//! networks this crate trains. Values are `f32` tensors on a per-step tape;
//! persistent parameters live in a [`ParamStore`] and are bound into each
//! graph as leaves.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod serialize;
pub mod tape;

pub use layers::{Conv2d, LayerNorm, Linear, Mlp2};
pub use params::{Adam, Graph, ParamId, ParamStore};
pub use tape::{Arr, Tape, Var};

use rand::Rng;

/// Standard normal sample via Box-Muller; keeps initialization free of extra
/// distribution dependencies and bit-stable across platforms.
pub fn normal_sample(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
