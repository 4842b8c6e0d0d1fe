//! Primal block selection schemes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::solver::SamplerScheme;
use crate::{Error, Result};

/// Draws the index set updated at each iteration. Selections are returned
/// sorted so downstream reductions are order-independent.
#[derive(Debug, Clone)]
pub struct Sampler {
    n: usize,
    k: usize,
    scheme: SamplerScheme,
    /// Cyclic scheme: a fixed random permutation chunked into groups of `k`,
    /// visited round-robin.
    groups: Vec<Vec<usize>>,
    cursor: usize,
}

impl Sampler {
    pub fn new(scheme: SamplerScheme, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::Config(format!("K = {k} outside 1..={n}")));
        }
        let groups = match scheme {
            SamplerScheme::UniformSubsets => Vec::new(),
            SamplerScheme::CyclicPartition => {
                let mut perm: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    perm.swap(i, j);
                }
                perm.chunks(k)
                    .map(|c| {
                        let mut g = c.to_vec();
                        g.sort_unstable();
                        g
                    })
                    .collect()
            }
        };
        Ok(Self { n, k, scheme, groups, cursor: 0 })
    }

    /// The next selection, sorted ascending.
    pub fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.scheme {
            SamplerScheme::UniformSubsets => {
                let mut sel = rand::seq::index::sample(rng, self.n, self.k).into_vec();
                sel.sort_unstable();
                sel
            }
            SamplerScheme::CyclicPartition => {
                let g = self.groups[self.cursor].clone();
                self.cursor = (self.cursor + 1) % self.groups.len();
                g
            }
        }
    }
}

/// Uniform subset of `k_i` dual rows out of `i_blocks`, sorted.
pub fn sample_dual_rows(rng: &mut ChaCha8Rng, i_blocks: usize, k_i: usize) -> Vec<usize> {
    if k_i >= i_blocks {
        return (0..i_blocks).collect();
    }
    let mut sel = rand::seq::index::sample(rng, i_blocks, k_i).into_vec();
    sel.sort_unstable();
    sel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn uniform_subsets_have_right_size_and_range() {
        let mut rng = seeded_rng(&[1]);
        let mut s = Sampler::new(SamplerScheme::UniformSubsets, 7, 3, &mut rng).unwrap();
        for _ in 0..100 {
            let sel = s.next(&mut rng);
            assert_eq!(sel.len(), 3);
            assert!(sel.windows(2).all(|w| w[0] < w[1]));
            assert!(sel.iter().all(|&j| j < 7));
        }
    }

    #[test]
    fn uniform_subsets_cover_all_pairs() {
        let mut rng = seeded_rng(&[2]);
        let mut s = Sampler::new(SamplerScheme::UniformSubsets, 4, 2, &mut rng).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            seen.insert(s.next(&mut rng));
        }
        assert_eq!(seen.len(), 6); // C(4, 2)
    }

    #[test]
    fn cyclic_partition_visits_every_block_each_round() {
        let mut rng = seeded_rng(&[3]);
        let mut s = Sampler::new(SamplerScheme::CyclicPartition, 6, 2, &mut rng).unwrap();
        let mut seen = Vec::new();
        for _ in 0..3 {
            seen.extend(s.next(&mut rng));
        }
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        // Second round repeats the same grouping.
        let mut round2 = Vec::new();
        for _ in 0..3 {
            round2.extend(s.next(&mut rng));
        }
        round2.sort_unstable();
        assert_eq!(round2, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn cyclic_partition_handles_ragged_tail() {
        let mut rng = seeded_rng(&[4]);
        let mut s = Sampler::new(SamplerScheme::CyclicPartition, 5, 2, &mut rng).unwrap();
        let sizes: Vec<usize> = (0..3).map(|_| s.next(&mut rng).len()).collect();
        let mut sorted = sizes.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 2, 2]);
    }

    #[test]
    fn bad_k_is_rejected() {
        let mut rng = seeded_rng(&[5]);
        assert!(Sampler::new(SamplerScheme::UniformSubsets, 4, 0, &mut rng).is_err());
        assert!(Sampler::new(SamplerScheme::UniformSubsets, 4, 5, &mut rng).is_err());
    }
}
