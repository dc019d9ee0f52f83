//! Feature encoders that turn raw environment observations into policy
//! states.
//!
//! A [`Theme`] plays the role of a task's visual appearance: every task
//! renders the same underlying geometry through its own seeded linear mix,
//! plus sensor noise. Policies only ever see the encoded vector, so two
//! themes present the same situation as different inputs.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, invalid, Result};

/// Largest condition number accepted for a theme's mix.
pub const MAX_CONDITION: f64 = 100.0;

const FAMILY_SALT: u64 = 0x6661_6d69_6c79_0000;

/// Maps raw observations to policy states.
pub trait Encoder {
    fn dim(&self) -> usize;

    fn encode(&self, raw: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// Seeded linear mix with additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Theme {
    seed: u64,
    dim: usize,
    /// Row-major `dim x dim`.
    mix: Vec<f64>,
    noise_scale: f64,
}

impl Theme {
    /// Builds the mix as `Q diag(g)`: `Q` is the orthogonal factor of
    /// `I + shift * G` with `G` standard normal, and the per-axis gains `g` are
    /// `exp(gain_spread * u)`, `u` uniform in `[-1, 1]`. `shift = 0` and
    /// `gain_spread = 0` give the identity.
    pub fn new(seed: u64, dim: usize, shift: f64, gain_spread: f64, noise_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !(shift >= 0.0 && gain_spread >= 0.0 && noise_scale >= 0.0) {
            return Err(invalid("theme", "shift, gain spread and noise must be nonnegative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let perturbed = DMatrix::<f64>::identity(dim, dim) + g * shift;
        let qr = perturbed.qr();
        let (mut q, r) = (qr.q(), qr.r());
        // fix column signs so that shift -> 0 recovers the identity
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let gains: Vec<f64> = (0..dim)
            .map(|_| (gain_spread * rand::Rng::gen_range(&mut rng, -1.0..=1.0)).exp())
            .collect();
        for (j, gain) in gains.iter().enumerate() {
            q.column_mut(j).scale_mut(*gain);
        }
        let mix: Vec<f64> = (0..dim * dim).map(|k| q[(k / dim, k % dim)]).collect();
        let theme = Theme {
            seed,
            dim,
            mix,
            noise_scale,
        };
        let cond = theme.condition_number();
        if cond.is_nan() || cond >= MAX_CONDITION {
            return Err(invalid("theme", format!("mix condition number {cond:.1} is too large")));
        }
        Ok(theme)
    }

    /// Member of a theme family: the family's shared mix (built like
    /// [`Theme::new`] from the family index with `family_shift`) composed with
    /// this seed's own perturbation.
    pub fn in_family(
        seed: u64,
        family: u64,
        dim: usize,
        family_shift: f64,
        shift: f64,
        gain_spread: f64,
        noise_scale: f64,
    ) -> Result<Self> {
        let base = Theme::new(FAMILY_SALT ^ family, dim, family_shift, 0.0, 0.0)?;
        let own = Theme::new(seed, dim, shift, gain_spread, noise_scale)?;
        let mut mix = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                mix[i * dim + j] = (0..dim).map(|k| base.mix[i * dim + k] * own.mix[k * dim + j]).sum();
            }
        }
        Theme::from_mix(seed, dim, mix, noise_scale)
    }

    pub fn identity(dim: usize) -> Self {
        let mut mix = vec![0.0; dim * dim];
        for i in 0..dim {
            mix[i * dim + i] = 1.0;
        }
        Theme {
            seed: 0,
            dim,
            mix,
            noise_scale: 0.0,
        }
    }

    /// Uses the given matrix as the mix. Rejects ill-conditioned input.
    pub fn from_mix(seed: u64, dim: usize, mix: Vec<f64>, noise_scale: f64) -> Result<Self> {
        check_len("mix", dim * dim, mix.len())?;
        let theme = Theme {
            seed,
            dim,
            mix,
            noise_scale,
        };
        let cond = theme.condition_number();
        if cond.is_nan() || cond >= MAX_CONDITION {
            return Err(invalid("theme", format!("mix condition number {cond:.1} is too large")));
        }
        Ok(theme)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mix(&self) -> &[f64] {
        &self.mix
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    /// Ratio of largest to smallest singular value of the mix.
    pub fn condition_number(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.mix);
        let sv = m.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }

    /// `mix * raw` without noise.
    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        check_len("raw observation", self.dim, raw.len())?;
        Ok(self
            .mix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(raw).map(|(m, x)| m * x).sum())
            .collect())
    }

    /// Frobenius distance between two mixes of equal size.
    pub fn distance(&self, other: &Theme) -> f64 {
        self.mix
            .iter()
            .zip(&other.mix)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Encoder for Theme {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, raw: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut out = self.apply(raw)?;
        if self.noise_scale > 0.0 {
            for v in &mut out {
                let eta: f64 = StandardNormal.sample(rng);
                *v += self.noise_scale * eta;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_theme_passes_raw_through() {
        let t = Theme::identity(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = [0.5, -1.0, 3.0, 2.25];
        assert_eq!(t.encode(&raw, &mut rng).unwrap(), raw.to_vec());
        assert_eq!(
            Theme::new(9, 4, 0.0, 0.0, 0.0).unwrap().apply(&raw).unwrap(),
            raw.to_vec()
        );
    }

    #[test]
    fn noiseless_encoding_is_linear() {
        let t = Theme::new(11, 5, 0.6, 0.3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = [1.0, -2.0, 0.5, 0.0, 3.0];
        let b = [0.25, 0.75, -1.5, 2.0, -0.5];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ea = t.encode(&a, &mut rng).unwrap();
        let eb = t.encode(&b, &mut rng).unwrap();
        let es = t.encode(&sum, &mut rng).unwrap();
        for i in 0..5 {
            assert!((es[i] - ea[i] - eb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_is_deterministic_per_stream() {
        let t = Theme::new(4, 6, 0.5, 0.2, 0.1).unwrap();
        let raw = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        assert_eq!(t.encode(&raw, &mut r1).unwrap(), t.encode(&raw, &mut r2).unwrap());
        assert_eq!(t, Theme::new(4, 6, 0.5, 0.2, 0.1).unwrap());
    }

    #[test]
    fn different_seeds_give_different_mixes() {
        for s in 0..20u64 {
            let a = Theme::new(2 * s, 8, 0.5, 0.2, 0.0).unwrap();
            let b = Theme::new(2 * s + 1, 8, 0.5, 0.2, 0.0).unwrap();
            assert!(a.distance(&b) > 0.0);
            assert!(a.condition_number() < MAX_CONDITION);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let t = Theme::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(t.encode(&[1.0, 2.0], &mut rng).is_err());
        assert!(Theme::from_mix(0, 2, vec![1.0, 0.0, 0.0, 0.0], 0.0).is_err());
        assert!(Theme::new(0, 0, 0.1, 0.0, 0.0).is_err());
    }
}
