//! Path-keyed random streams.
//!
//! A stream is identified by a master seed and a path of integers, e.g.
//! `[client, round, step, sample]`. The generator for a stream is derived
//! from that identity alone, so the numbers a client draws never depend on
//! how many draws other clients made or which thread ran first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

/// Identity of an independent random stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    master_seed: u64,
    path: Vec<u64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            path: Vec::new(),
        }
    }

    pub fn with_path(master_seed: u64, path: &[u64]) -> Self {
        Self {
            master_seed,
            path: path.to_vec(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream whose path is this path extended by `index`.
    pub fn spawn(&self, index: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    /// 256-bit generator key. Path length is absorbed first so that `[a]`
    /// and `[a, 0]` never share a key.
    fn key(&self) -> [u8; 32] {
        let mut h = mix64(self.master_seed ^ GOLDEN);
        h = mix64(h ^ (self.path.len() as u64).wrapping_mul(GOLDEN));
        for (pos, &p) in self.path.iter().enumerate() {
            h = mix64(h.wrapping_add(GOLDEN) ^ mix64(p ^ ((pos as u64 + 1) << 56)));
        }
        let mut key = [0u8; 32];
        let mut w = h;
        for chunk in key.chunks_exact_mut(8) {
            w = mix64(w.wrapping_add(GOLDEN));
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        key
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }
}

/// Matrix with i.i.d. standard normal entries.
pub fn sample_gaussian(stream: &RngStream, rows: usize, cols: usize) -> Matrix {
    let mut rng = stream.rng();
    gaussian_from(&mut rng, rows, cols)
}

fn gaussian_from(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.sample(StandardNormal);
    }
    m
}

/// Uniform draw from the unit Frobenius sphere of `rows×cols` matrices.
pub fn sample_unit_sphere(stream: &RngStream, rows: usize, cols: usize) -> Matrix {
    let mut rng = stream.rng();
    loop {
        let mut g = gaussian_from(&mut rng, rows, cols);
        let n = g.norm();
        if n >= 1e-12 {
            g.scale_mut(1.0 / n);
            return g;
        }
    }
}
