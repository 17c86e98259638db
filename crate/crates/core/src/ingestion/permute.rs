use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::init::rng_from_seed;
use crate::scalar::Scalar;

use super::{ByteArray, PositionMeta};

/// A single row permutation shared by every item of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSpec {
    pub seed: u64,
    /// Output row `i` takes input row `permutation[i]`.
    pub permutation: Vec<usize>,
}

impl PermutationSpec {
    pub fn random(len: usize, seed: u64) -> Self {
        let mut permutation: Vec<usize> = (0..len).collect();
        permutation.shuffle(&mut rng_from_seed(seed));
        PermutationSpec { seed, permutation }
    }

    pub fn identity(len: usize) -> Self {
        PermutationSpec { seed: 0, permutation: (0..len).collect() }
    }

    pub fn from_vec(permutation: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; permutation.len()];
        for &p in &permutation {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Domain("permutation is not a bijection".into()));
            }
        }
        Ok(PermutationSpec { seed: 0, permutation })
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.permutation.len()];
        for (i, &p) in self.permutation.iter().enumerate() {
            inv[p] = i;
        }
        PermutationSpec { seed: self.seed, permutation: inv }
    }
}

/// Reorders rows after position features were attached, so each row keeps
/// its own position encoding.
pub fn permute_bytes<T: Scalar>(bytes: &ByteArray<T>, spec: &PermutationSpec) -> Result<ByteArray<T>> {
    if spec.len() != bytes.rows() {
        return Err(Error::dim("permute_bytes", format!("permutation of {} for {} rows", spec.len(), bytes.rows())));
    }
    if bytes.spans.len() > 1 {
        return Err(Error::Domain("permuting a fused array would split its modality spans".into()));
    }
    let meta = match &bytes.position_meta {
        PositionMeta::Permuted(inner) => PositionMeta::Permuted(inner.clone()),
        other => PositionMeta::Permuted(Box::new(other.clone())),
    };
    Ok(ByteArray { data: bytes.data.permute_rows(&spec.permutation)?, spans: bytes.spans.clone(), position_meta: meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample() -> ByteArray<f64> {
        let data = Tensor::from_fn([5, 3], |i| i as f64);
        ByteArray::new("image", data, PositionMeta::None).unwrap()
    }

    #[test]
    fn identity_and_inverse() {
        let b = sample();
        let id = permute_bytes(&b, &PermutationSpec::identity(5)).unwrap();
        assert_eq!(id.data, b.data);
        let spec = PermutationSpec::random(5, 9);
        let there = permute_bytes(&b, &spec).unwrap();
        let back = permute_bytes(&there, &spec.inverse()).unwrap();
        assert_eq!(back.data, b.data);
        assert_eq!(PermutationSpec::random(5, 9), spec);
    }

    #[test]
    fn length_mismatch_and_bad_vectors() {
        assert!(permute_bytes(&sample(), &PermutationSpec::identity(4)).is_err());
        assert!(PermutationSpec::from_vec(vec![0, 0, 1]).is_err());
        assert!(PermutationSpec::from_vec(vec![2, 0, 1]).is_ok());
    }
}
