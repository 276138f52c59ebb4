//! Counter-based splittable random number streams.
//!
//! Every random quantity in this crate is drawn from a [`Stream`]: a stateless
//! function from (key, counter) to 64 random bits. Streams are split by name
//! or index into statistically independent child streams, so parallel code can
//! hand each unit of work (a vertex, a Monte-Carlo sample, a trial) its own
//! stream and produce results that do not depend on thread count or execution
//! order.
//!
//! The generator is the SplitMix64 output function evaluated at an arbitrary
//! counter: `mix(key + ctr * GOLDEN)` where `mix` is the standard two-round
//! xor-shift-multiply finalizer. Equidistributed over the full 2^64 period of
//! the counter, non-cryptographic.
//!
//! The stream algorithm is versioned: [`STREAM_VERSION`] is folded into every
//! root key, so a future change to the mixing function bumps the version and
//! never silently reinterprets old seeds.

/// Version tag folded into root keys. Bump on any change to the mixing
/// function or to derived samplers' draw order.
pub const STREAM_VERSION: u64 = 1;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of a stream name. Only used for key derivation.
#[inline]
fn hash_name(name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A splittable counter-based random stream.
///
/// `Stream` itself is an immutable key; [`Stream::cursor`] yields a cheap
/// stateful iterator over its outputs. Child streams derived with the same
/// name/index are identical regardless of what else was drawn in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    /// Root stream for a user-supplied seed.
    pub fn root(seed: u64) -> Self {
        Stream {
            key: mix64(seed ^ mix64(STREAM_VERSION.wrapping_mul(GOLDEN))),
        }
    }

    /// Child stream identified by a static name.
    pub fn named(&self, name: &str) -> Self {
        Stream {
            key: mix64(self.key ^ mix64(hash_name(name))),
        }
    }

    /// Child stream identified by an index (vertex id, trial number, ...).
    pub fn substream(&self, index: u64) -> Self {
        Stream {
            key: mix64(self.key ^ mix64(index ^ GOLDEN)),
        }
    }

    /// The raw 64-bit output at a given counter position.
    #[inline]
    pub fn bits_at(&self, ctr: u64) -> u64 {
        mix64(self.key.wrapping_add(ctr.wrapping_mul(GOLDEN)))
    }

    /// Stateful cursor starting at counter 0.
    pub fn cursor(&self) -> Cursor {
        Cursor {
            stream: *self,
            ctr: 0,
        }
    }
}

/// Stateful view over a [`Stream`]: sequential draws with an advancing counter.
#[derive(Debug, Clone)]
pub struct Cursor {
    stream: Stream,
    ctr: u64,
}

impl Cursor {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.stream.bits_at(self.ctr);
        self.ctr += 1;
        v
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 / DEN
    }

    /// Uniform f64 in (0, 1]; safe as a log argument.
    #[inline]
    pub fn next_f64_open(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) + 1) as f64 / DEN
    }

    /// Fair Rademacher draw.
    #[inline]
    pub fn next_sign(&mut self) -> i8 {
        if self.next_u64() & 1 == 0 {
            1
        } else {
            -1
        }
    }

    /// Standard normal via Box-Muller, two uniforms per draw. The sine branch
    /// is discarded so the cursor stays trivially cloneable; cost is dominated
    /// by ln/cos anyway.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }

    /// Fill a slice with standard normals.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }

    /// Gamma(shape, 1) for shape >= 1e-3 via the Marsaglia-Tsang squeeze
    /// (boosted below shape 1). Used for chi-square draws in calibration.
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            // Boost: G(a) = G(a+1) * U^{1/a}.
            let g = self.next_gamma(shape + 1.0);
            let u = self.next_f64_open();
            return g * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.next_normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v3 = v * v * v;
            let u = self.next_f64_open();
            // Cheap squeeze first, exact acceptance second.
            if u < 1.0 - 0.0331 * x.powi(4) {
                return d * v3;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v3 + v3.ln()) {
                return d * v3;
            }
        }
    }

    /// Chi-square with `dof` degrees of freedom.
    #[inline]
    pub fn next_chi_square(&mut self, dof: f64) -> f64 {
        2.0 * self.next_gamma(0.5 * dof)
    }
}
