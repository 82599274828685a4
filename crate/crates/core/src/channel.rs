//! Rayleigh channels, AWGN and seed splitting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::hermitian_condition;
use crate::{CMatrix, Error, Result, C64};

/// Default rejection threshold on `cond(H·Hᴴ)`.
pub const DEFAULT_MAX_COND: f64 = 1e8;
const MAX_REDRAWS: usize = 64;

/// `K × N_T` channel; row `k` is `h_kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    h: CMatrix,
}

impl Channel {
    pub fn new(h: CMatrix) -> Result<Self> {
        let (k, nt) = h.shape();
        if k == 0 || k > nt {
            return Err(Error::InvalidParameter(format!(
                "channel must have 1 <= K <= N_T, got K={k}, N_T={nt}"
            )));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("channel has non-finite entries".into()));
        }
        Ok(Channel { h })
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn users(&self) -> usize {
        self.h.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.h.ncols()
    }

    /// Noiseless received block `H·X`.
    pub fn receive(&self, x: &CMatrix) -> CMatrix {
        &self.h * x
    }
}

/// Draws a standard complex Gaussian (`CN(0, 1)`) sample.
pub fn complex_normal<R: rand::Rng>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// i.i.d. `CN(0, 1)` channel with `K ≤ N_T`, redrawn from the same stream
/// while `cond(H·Hᴴ)` exceeds [`DEFAULT_MAX_COND`].
pub fn rayleigh_channel(n_t: usize, k: usize, seed: u64) -> Result<Channel> {
    rayleigh_channel_with(n_t, k, seed, DEFAULT_MAX_COND)
}

pub fn rayleigh_channel_with(n_t: usize, k: usize, seed: u64, max_cond: f64) -> Result<Channel> {
    if k == 0 || k > n_t {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= K <= N_T, got K={k}, N_T={n_t}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = f64::INFINITY;
    for _ in 0..MAX_REDRAWS {
        let h = CMatrix::from_fn(k, n_t, |_, _| complex_normal(&mut rng));
        last = hermitian_condition(&(&h * h.adjoint()));
        if last <= max_cond {
            return Channel::new(h);
        }
    }
    Err(Error::IllConditioned {
        what: "H·Hᴴ",
        cond: last,
    })
}

/// `σ² = p0 · 10^(−snr_db/10)`: transmit SNR defined per slot against `p0`.
pub fn noise_variance(snr_db: f64, p0: f64) -> f64 {
    p0 * 10f64.powf(-snr_db / 10.0)
}

/// Adds independent `CN(0, σ²)` noise in place. The unit-variance draws
/// depend only on `seed`, so one seed gives the same realization scaled by
/// `σ` at every noise level.
pub fn add_awgn(samples: &mut [C64], sigma2: f64, seed: u64) {
    assert!(sigma2 >= 0.0, "noise variance must be nonnegative");
    if sigma2 == 0.0 {
        return;
    }
    let sigma = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in samples.iter_mut() {
        *s += complex_normal(&mut rng) * sigma;
    }
}

/// What a derived seed is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SeedPurpose {
    Channel = 1,
    Symbols = 2,
    Noise = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial sub-seed: `splitmix64(splitmix64(splitmix64(master) ^ trial) ^ purpose)`.
///
/// Each `(trial, purpose)` pair maps to its own ChaCha stream, so channel,
/// symbol and noise draws never share state.
pub fn derive_seed(master: u64, trial: u64, purpose: SeedPurpose) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ trial) ^ purpose as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rayleigh_is_deterministic() {
        assert_eq!(rayleigh_channel(4, 4, 3).unwrap(), rayleigh_channel(4, 4, 3).unwrap());
    }

    #[test]
    fn rayleigh_rejects_more_users_than_antennas() {
        assert!(rayleigh_channel(2, 3, 0).is_err());
    }

    #[test]
    fn rayleigh_entry_variance_is_one() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..10_000u64 {
            let ch = rayleigh_channel(8, 4, derive_seed(1, seed, SeedPurpose::Channel)).unwrap();
            acc += ch.h().iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += 32;
        }
        let var = acc / count as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn noise_variance_values() {
        assert_eq!(noise_variance(0.0, 1.0), 1.0);
        assert!((noise_variance(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((noise_variance(25.0, 1.0) - 10f64.powf(-2.5)).abs() < 1e-15);
    }

    #[test]
    fn awgn_zero_variance_is_identity() {
        let mut v = vec![C64::new(1.0, -2.0); 16];
        add_awgn(&mut v, 0.0, 5);
        assert!(v.iter().all(|&z| z == C64::new(1.0, -2.0)));
    }

    #[test]
    fn awgn_variance_and_reproducibility() {
        let mut v = vec![C64::new(0.0, 0.0); 100_000];
        add_awgn(&mut v, 1.0, 11);
        let var = v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
        let mut w = vec![C64::new(0.0, 0.0); 100_000];
        add_awgn(&mut w, 1.0, 11);
        assert_eq!(v, w);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0, SeedPurpose::Channel);
        let b = derive_seed(7, 0, SeedPurpose::Noise);
        let c = derive_seed(7, 1, SeedPurpose::Channel);
        let d = derive_seed(8, 0, SeedPurpose::Channel);
        assert!(a != b && a != c && a != d && b != c);
    }
}
