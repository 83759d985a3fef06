//! Cell search space: an architecture is an assignment of one operation to
//! each edge of a fixed cell, embedded as concatenated one-hot blocks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest space `enumerate_all` will materialize by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 22;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpaceError {
    #[error("invalid operation index {op} on edge {edge} (num_ops = {num_ops})")]
    InvalidOperationIndex { edge: usize, op: usize, num_ops: usize },
    #[error("architecture has {got} edges, expected {expected}")]
    WrongEdgeCount { expected: usize, got: usize },
    #[error("space of {num_ops}^{num_edges} architectures exceeds the cap of {cap}")]
    SpaceTooLarge {
        num_edges: usize,
        num_ops: usize,
        cap: usize,
    },
    #[error("requested {requested} architectures but the space holds only {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("encoding is not a valid one-hot block vector")]
    InvalidEncoding,
    #[error("cannot parse architecture {0:?}")]
    Parse(String),
    #[error("num_edges and num_ops must be positive")]
    EmptySpec,
}

/// Shape of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub num_edges: usize,
    pub num_ops: usize,
}

impl Default for SpaceSpec {
    fn default() -> Self {
        Self {
            num_edges: 6,
            num_ops: 5,
        }
    }
}

impl SpaceSpec {
    pub fn new(num_edges: usize, num_ops: usize) -> Result<Self, SpaceError> {
        if num_edges == 0 || num_ops == 0 {
            return Err(SpaceError::EmptySpec);
        }
        Ok(Self { num_edges, num_ops })
    }

    /// `num_ops ^ num_edges`, or `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        let exp = u32::try_from(self.num_edges).ok()?;
        self.num_ops.checked_pow(exp)
    }

    /// Dimension of the one-hot encoding.
    pub fn dim(&self) -> usize {
        self.num_edges * self.num_ops
    }

    fn checked_size(&self, cap: usize) -> Result<usize, SpaceError> {
        match self.size() {
            Some(s) if s <= cap => Ok(s),
            _ => Err(SpaceError::SpaceTooLarge {
                num_edges: self.num_edges,
                num_ops: self.num_ops,
                cap,
            }),
        }
    }

    /// Canonical (lexicographic) index of `arch`; the first edge is the most
    /// significant digit.
    pub fn index_of(&self, arch: &Architecture) -> Result<usize, SpaceError> {
        self.validate(arch)?;
        Ok(arch
            .edge_ops
            .iter()
            .fold(0usize, |acc, &op| acc * self.num_ops + op))
    }

    /// Inverse of [`SpaceSpec::index_of`].
    pub fn arch_at(&self, mut index: usize) -> Architecture {
        let mut ops = vec![0usize; self.num_edges];
        for slot in ops.iter_mut().rev() {
            *slot = index % self.num_ops;
            index /= self.num_ops;
        }
        Architecture::new(ops)
    }

    pub fn validate(&self, arch: &Architecture) -> Result<(), SpaceError> {
        if arch.edge_ops.len() != self.num_edges {
            return Err(SpaceError::WrongEdgeCount {
                expected: self.num_edges,
                got: arch.edge_ops.len(),
            });
        }
        for (edge, &op) in arch.edge_ops.iter().enumerate() {
            if op >= self.num_ops {
                return Err(SpaceError::InvalidOperationIndex {
                    edge,
                    op,
                    num_ops: self.num_ops,
                });
            }
        }
        Ok(())
    }
}

/// Operation index per cell edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Architecture {
    pub edge_ops: Vec<usize>,
}

impl Architecture {
    pub fn new(edge_ops: Vec<usize>) -> Self {
        Self { edge_ops }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, op) in self.edge_ops.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(SpaceError::Parse(s.to_string()));
        }
        trimmed
            .split(',')
            .map(|tok| tok.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map(Architecture::new)
            .map_err(|_| SpaceError::Parse(s.to_string()))
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One-hot block embedding of an architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub values: Vec<f64>,
}

impl Encoding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn decode(&self, spec: &SpaceSpec) -> Result<Architecture, SpaceError> {
        if self.values.len() != spec.dim() {
            return Err(SpaceError::InvalidEncoding);
        }
        let mut ops = Vec::with_capacity(spec.num_edges);
        for block in self.values.chunks(spec.num_ops) {
            let mut hot = None;
            for (k, &v) in block.iter().enumerate() {
                if v == 1.0 {
                    if hot.is_some() {
                        return Err(SpaceError::InvalidEncoding);
                    }
                    hot = Some(k);
                } else if v != 0.0 {
                    return Err(SpaceError::InvalidEncoding);
                }
            }
            ops.push(hot.ok_or(SpaceError::InvalidEncoding)?);
        }
        Ok(Architecture::new(ops))
    }
}

/// Position `num_ops * e + edge_ops[e]` is 1 for every edge `e`; all else 0.
pub fn encode(arch: &Architecture, spec: &SpaceSpec) -> Result<Encoding, SpaceError> {
    spec.validate(arch)?;
    let mut values = vec![0.0; spec.dim()];
    for (e, &op) in arch.edge_ops.iter().enumerate() {
        values[spec.num_ops * e + op] = 1.0;
    }
    Ok(Encoding { values })
}

pub fn enumerate_all(spec: &SpaceSpec) -> Result<Vec<Architecture>, SpaceError> {
    enumerate_all_capped(spec, DEFAULT_ENUMERATION_CAP)
}

/// Every architecture in lexicographic order of `edge_ops`.
pub fn enumerate_all_capped(spec: &SpaceSpec, cap: usize) -> Result<Vec<Architecture>, SpaceError> {
    let size = spec.checked_size(cap)?;
    Ok((0..size).map(|i| spec.arch_at(i)).collect())
}

/// Draws `n` distinct architectures uniformly at random.
pub fn sample_uniform<R: Rng + ?Sized>(
    spec: &SpaceSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Architecture>, SpaceError> {
    let size = spec.size().ok_or(SpaceError::SpaceTooLarge {
        num_edges: spec.num_edges,
        num_ops: spec.num_ops,
        cap: usize::MAX,
    })?;
    Ok(sample_indices(size, n, rng)?
        .into_iter()
        .map(|i| spec.arch_at(i))
        .collect())
}

/// `n` distinct indices from `0..size`, in draw order.
pub fn sample_indices<R: Rng + ?Sized>(
    size: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SpaceError> {
    if n > size {
        return Err(SpaceError::SampleTooLarge {
            requested: n,
            available: size,
        });
    }
    Ok(rand::seq::index::sample(rng, size, n).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn ones(enc: &Encoding) -> Vec<usize> {
        enc.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn encode_examples() {
        let spec = SpaceSpec::default();
        let a = Architecture::new(vec![0; 6]);
        assert_eq!(ones(&encode(&a, &spec).unwrap()), vec![0, 5, 10, 15, 20, 25]);
        let b: Architecture = "4,3,2,1,0,4".parse().unwrap();
        assert_eq!(ones(&encode(&b, &spec).unwrap()), vec![4, 8, 12, 16, 20, 29]);
        let c = Architecture::new(vec![0, 0, 0, 0, 0, 7]);
        assert!(matches!(
            encode(&c, &spec),
            Err(SpaceError::InvalidOperationIndex { edge: 5, op: 7, .. })
        ));
    }

    #[test]
    fn enumerate_examples() {
        let two = enumerate_all(&SpaceSpec::new(2, 2).unwrap()).unwrap();
        let got: Vec<Vec<usize>> = two.into_iter().map(|a| a.edge_ops).collect();
        assert_eq!(got, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(enumerate_all(&SpaceSpec::default()).unwrap().len(), 15625);
        let one = enumerate_all(&SpaceSpec::new(1, 3).unwrap()).unwrap();
        assert_eq!(one.len(), 3);
        assert_eq!(one[2].edge_ops, vec![2]);
    }

    #[test]
    fn enumerate_respects_cap() {
        let spec = SpaceSpec::new(6, 5).unwrap();
        assert!(matches!(
            enumerate_all_capped(&spec, 1000),
            Err(SpaceError::SpaceTooLarge { .. })
        ));
        let huge = SpaceSpec::new(64, 10).unwrap();
        assert!(enumerate_all(&huge).is_err());
    }

    #[test]
    fn sample_examples() {
        let spec = SpaceSpec::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_uniform(&spec, 0, &mut rng).unwrap().is_empty());
        let all = sample_uniform(&spec, 4, &mut rng).unwrap();
        let set: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 4);
        assert!(matches!(
            sample_uniform(&spec, 5, &mut rng),
            Err(SpaceError::SampleTooLarge { .. })
        ));

        let big = SpaceSpec::default();
        let a = sample_uniform(&big, 100, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_uniform(&big, 100, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 100);
    }

    #[test]
    fn encode_is_injective_and_round_trips() {
        for (e, o) in [(2, 2), (3, 3), (2, 4), (1, 5)] {
            let spec = SpaceSpec::new(e, o).unwrap();
            let mut seen = HashSet::new();
            for (i, arch) in enumerate_all(&spec).unwrap().into_iter().enumerate() {
                let enc = encode(&arch, &spec).unwrap();
                let norm = enc.values.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - (e as f64).sqrt()).abs() < 1e-12);
                assert_eq!(enc.decode(&spec).unwrap(), arch);
                assert_eq!(spec.index_of(&arch).unwrap(), i);
                let key: Vec<u64> = enc.values.iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key));
            }
        }
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        // 10^4 single draws over a 2x2 space; chi-square with 3 dof at
        // significance 0.01 has critical value 11.345.
        let spec = SpaceSpec::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let a = &sample_uniform(&spec, 1, &mut rng).unwrap()[0];
            counts[spec.index_of(a).unwrap()] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn text_form() {
        let a: Architecture = " 1, 2 ,3".parse().unwrap();
        assert_eq!(a.to_string(), "1,2,3");
        assert!("1,,2".parse::<Architecture>().is_err());
        assert!("".parse::<Architecture>().is_err());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "\"1,2,3\"");
    }
}
