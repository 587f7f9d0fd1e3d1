//! 32-bit Sobol' sequence with digital-shift randomisation.

use crate::domain::MAX_DIM;

const BITS: usize = 32;

/// Primitive polynomial data (degree, coefficient bits, initial direction
/// numbers) for dimensions 2..=12. Dimension 1 is the van der Corput sequence.
const PRIMITIVES: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
];

#[derive(Debug, Clone)]
pub(crate) struct Sobol {
    d: usize,
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d));
        let mut directions = Vec::with_capacity(d);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(s, a, m) in PRIMITIVES.iter().take(d - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..BITS {
                v[k] = if k < s {
                    m[k] << (BITS - 1 - k)
                } else {
                    let mut x = v[k - s] ^ (v[k - s] >> s);
                    for l in 1..s {
                        if (a >> (s - 1 - l)) & 1 == 1 {
                            x ^= v[k - l];
                        }
                    }
                    x
                };
            }
            directions.push(v);
        }
        Sobol { d, directions }
    }

    /// Iterator over raw integer points starting at sequence index `start`.
    pub fn points_from(&self, start: u64) -> SobolIter<'_> {
        let gray = start ^ (start >> 1);
        let mut state = [0u32; MAX_DIM];
        for (j, s) in state.iter_mut().enumerate().take(self.d) {
            for (k, dir) in self.directions[j].iter().enumerate() {
                if (gray >> k) & 1 == 1 {
                    *s ^= dir;
                }
            }
        }
        SobolIter {
            seq: self,
            index: start,
            state,
        }
    }
}

pub(crate) struct SobolIter<'a> {
    seq: &'a Sobol,
    index: u64,
    state: [u32; MAX_DIM],
}

impl SobolIter<'_> {
    /// Writes the current point, XOR-shifted by `shift` and mapped to the
    /// centre of its `2^-32` cell, into `out`, then advances.
    #[inline]
    pub fn next_shifted(&mut self, shift: &[u32], out: &mut [f64]) {
        const SCALE: f64 = 1.0 / 4294967296.0;
        for j in 0..self.seq.d {
            out[j] = ((self.state[j] ^ shift[j]) as f64 + 0.5) * SCALE;
        }
        let c = self.index.trailing_ones() as usize;
        for j in 0..self.seq.d {
            self.state[j] ^= self.seq.directions[j][c];
        }
        self.index += 1;
    }
}
