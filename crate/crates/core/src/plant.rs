//! Forward-Euler double integrator with bounded additive noise.

use std::f64::consts::TAU;

use rand::Rng;

use crate::tracker::NoiseBounds;
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub p: Vec2,
    pub v: Vec2,
    /// Simulation clock (s).
    pub t: f64,
    pub frozen: bool,
}

impl PlantState {
    pub fn new(p: Vec2, v: Vec2) -> Self {
        PlantState {
            p,
            v,
            t: 0.0,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSample {
    /// Velocity-level noise entering the position equation.
    pub n_p: Vec2,
    /// Acceleration noise.
    pub n_v: Vec2,
}

impl NoiseSample {
    pub const ZERO: NoiseSample = NoiseSample {
        n_p: Vec2::new(0.0, 0.0),
        n_v: Vec2::new(0.0, 0.0),
    };
}

/// Uniform point in the closed disc of the given radius.
fn uniform_in_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec2 {
    let theta = rng.random::<f64>() * TAU;
    let rho = radius * rng.random::<f64>().sqrt();
    Vec2::new(rho * theta.cos(), rho * theta.sin())
}

/// Draw both noise vectors uniformly from their bounding discs.
///
/// Always consumes four uniforms so the stream stays aligned across
/// configurations with different bounds.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, nb: &NoiseBounds) -> NoiseSample {
    NoiseSample {
        n_p: uniform_in_disc(rng, nb.eps_p),
        n_v: uniform_in_disc(rng, nb.eps_v),
    }
}

/// `v' = v + (u + n_v) t_s`, `p' = p + (v + n_p) t_s + ½ (u + n_v) t_s²`.
pub fn step(state: &PlantState, u: &Vec2, ns: &NoiseSample, t_s: f64) -> PlantState {
    let accel = u + ns.n_v;
    PlantState {
        p: state.p + (state.v + ns.n_p) * t_s + accel * (0.5 * t_s * t_s),
        v: state.v + accel * t_s,
        t: state.t + t_s,
        frozen: state.frozen,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::sigma_buffer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euler_example() {
        let s = PlantState::new(Vec2::zeros(), Vec2::new(1.0, 0.0));
        let next = step(&s, &Vec2::new(0.0, 1.0), &NoiseSample::ZERO, 0.1);
        assert!((next.v - Vec2::new(1.0, 0.1)).amax() < 1e-15);
        assert!((next.p - Vec2::new(0.1, 0.005)).amax() < 1e-15);
        assert!((next.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn drift_and_fixed_point() {
        let s = PlantState::new(Vec2::new(0.2, -0.1), Vec2::new(0.3, 0.4));
        let next = step(&s, &Vec2::zeros(), &NoiseSample::ZERO, 0.01);
        assert_eq!(next.p, s.p + s.v * 0.01);
        assert_eq!(next.v, s.v);
        let rest = PlantState::new(Vec2::zeros(), Vec2::zeros());
        let same = step(&rest, &Vec2::zeros(), &NoiseSample::ZERO, 0.01);
        assert_eq!((same.p, same.v), (rest.p, rest.v));
    }

    #[test]
    fn zero_bounds_give_zero_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_noise(&mut rng, &NoiseBounds::ZERO), NoiseSample::ZERO);
    }

    #[test]
    fn noise_respects_bounds() {
        let nb = NoiseBounds { eps_p: 0.01, eps_v: 0.02 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut max_p: f64 = 0.0;
        for _ in 0..100_000 {
            let ns = sample_noise(&mut rng, &nb);
            assert!(ns.n_p.norm() <= 0.01 && ns.n_v.norm() <= 0.02);
            max_p = max_p.max(ns.n_p.norm());
        }
        assert!(max_p >= 0.0099);
    }

    #[test]
    fn noise_is_deterministic() {
        let nb = NoiseBounds::default();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert_eq!(sample_noise(&mut a, &nb), sample_noise(&mut b, &nb));
        }
    }

    #[test]
    fn one_step_deviation_within_buffer() {
        let nb = NoiseBounds { eps_p: 1e-3, eps_v: 1e-2 };
        let t_s = 0.01;
        let dp_max = sigma_buffer(&nb, t_s).dp_max;
        let s = PlantState::new(Vec2::new(0.1, 0.2), Vec2::new(0.5, -0.2));
        let u = Vec2::new(1.0, 2.0);
        let clean = step(&s, &u, &NoiseSample::ZERO, t_s);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let noisy = step(&s, &u, &sample_noise(&mut rng, &nb), t_s);
            assert!((noisy.p - clean.p).norm() <= dp_max * (1.0 + 1e-12));
        }
    }
}
