//! Deterministic seeded RNG used everywhere randomness is needed.
//!
//! The generator is SplitMix64: a 64-bit splittable counter-based generator.
//! State advances by a fixed odd increment (the "gamma"); each output is a
//! bijective mix of the counter, so the stream is reproducible bit-for-bit
//! from the seed and independent of call-site history length. `split` derives
//! a statistically independent child stream, which keeps the shuffle /
//! dropout / mask draws of a training run decoupled from each other.
//!
//! Algorithm (Steele, Lea & Flood, "Fast splittable pseudorandom number
//! generators"): `state += gamma; z = state; z = (z ^ (z >> 30)) *
//! 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return
//! z ^ (z >> 31)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    gamma: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixer used to derive a child gamma; must yield an odd value.
fn mix_gamma(z: u64) -> u64 {
    let mut z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z = (z ^ (z >> 33)) | 1;
    // Avoid gammas with too-regular bit patterns.
    if (z ^ (z >> 1)).count_ones() < 24 {
        z ^ 0xAAAA_AAAA_AAAA_AAAA
    } else {
        z
    }
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            gamma: GOLDEN_GAMMA,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(self.gamma);
        mix64(self.state)
    }

    /// Derives an independent child generator; the parent advances once.
    pub fn split(&mut self) -> Rng {
        let state = self.next_u64();
        self.state = self.state.wrapping_add(self.gamma);
        let gamma = mix_gamma(self.state);
        Rng { state, gamma }
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses rejection to stay unbiased.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "Rng::below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal draw via the Box–Muller transform (both draws consumed,
    /// second discarded, so the stream stays a pure function of call count).
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// N(0, std^2) truncated at +/- 2 std via rejection.
    pub fn truncated_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    /// Seeded Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_streams_differ_and_are_deterministic() {
        let mut a = Rng::new(7);
        let mut c1 = a.split();
        let mut a2 = Rng::new(7);
        let mut c2 = a2.split();
        let x: Vec<u64> = (0..10).map(|_| c1.next_u64()).collect();
        let y: Vec<u64> = (0..10).map(|_| c2.next_u64()).collect();
        assert_eq!(x, y);
        let parent: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        assert_ne!(x, parent);
    }

    #[test]
    fn uniform_below_in_range() {
        let mut r = Rng::new(1);
        for _ in 0..1000 {
            assert!(r.below(7) < 7);
            let u = r.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut r = Rng::new(3);
        for _ in 0..5000 {
            assert!(r.truncated_normal(0.02).abs() <= 0.04 + 1e-12);
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut r = Rng::new(11);
        let n = 50_000;
        let draws: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
