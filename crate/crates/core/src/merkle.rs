//! Binary merkle commitments and inclusion proofs.
//!
//! Odd levels are padded by pairing the last node with itself. A single leaf is
//! its own root. Interior nodes are hashed under [`domain::NODE`](crate::hash::domain),
//! while callers are expected to supply leaves that were hashed under a
//! different tag (transaction ids, account leaves).

use serde::{Deserialize, Serialize};

use crate::hash::{domain, Hash256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("cannot build a merkle tree over zero leaves")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Root committed for an empty set (an empty child block, an empty account state).
pub fn empty_root() -> Hash256 {
    Hash256::tagged(domain::EMPTY, &[b"empty-tree"])
}

pub fn merkle_root(leaves: &[Hash256]) -> Result<Hash256, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    Ok(level[0])
}

/// Like [`merkle_root`] but maps the empty set to [`empty_root`].
pub fn merkle_root_or_empty(leaves: &[Hash256]) -> Hash256 {
    merkle_root(leaves).unwrap_or_else(|_| empty_root())
}

fn next_level(level: &[Hash256]) -> Vec<Hash256> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => Hash256::node(l, r),
            [l] => Hash256::node(l, l),
            _ => unreachable!(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf: Hash256,
    pub index: u64,
    pub siblings: Vec<Hash256>,
    pub root: Hash256,
}

pub fn merkle_prove(leaves: &[Hash256], index: usize) -> Result<MerkleProof, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    if index >= leaves.len() {
        return Err(MerkleError::IndexOutOfRange { index, len: leaves.len() });
    }
    let mut siblings = Vec::new();
    let mut level = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let sibling = if pos.is_multiple_of(2) { *level.get(pos + 1).unwrap_or(&level[pos]) } else { level[pos - 1] };
        siblings.push(sibling);
        level = next_level(&level);
        pos /= 2;
    }
    Ok(MerkleProof { leaf: leaves[index], index: index as u64, siblings, root: level[0] })
}

impl MerkleProof {
    /// Recomputes the root from the leaf, reading one index bit per level.
    ///
    /// A sibling equal to the running node is only accepted on the right,
    /// which is where padding places it. Index bits above the proof depth
    /// must be zero.
    pub fn verify(&self) -> bool {
        let depth = self.siblings.len();
        if depth < 64 && self.index >> depth != 0 {
            return false;
        }
        let mut acc = self.leaf;
        for (level, sibling) in self.siblings.iter().enumerate() {
            let is_right = (self.index >> level) & 1 == 1;
            if is_right {
                if *sibling == acc {
                    return false;
                }
                acc = Hash256::node(sibling, &acc);
            } else {
                acc = Hash256::node(&acc, sibling);
            }
        }
        acc == self.root
    }

    /// Verifies against an externally trusted root.
    pub fn verify_against(&self, root: &Hash256) -> bool {
        self.root == *root && self.verify()
    }
}

pub fn merkle_verify(proof: &MerkleProof) -> bool {
    proof.verify()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: usize) -> Vec<Hash256> {
        (0..n).map(|i| Hash256::leaf(&(i as u64).to_le_bytes())).collect()
    }

    /// Independent recursive reference: split at the largest power of two
    /// below n, padding the right half by duplication the way a level-wise
    /// construction does.
    fn reference_root(items: &[Hash256]) -> Hash256 {
        fn height(n: usize) -> u32 {
            (n as f64).log2().ceil() as u32
        }
        fn go(items: &[Hash256], h: u32) -> Hash256 {
            if h == 0 {
                return items[0];
            }
            let half = 1usize << (h - 1);
            let left = go(&items[..half.min(items.len())], h - 1);
            if items.len() <= half {
                Hash256::node(&left, &left)
            } else {
                let right = go(&items[half..], h - 1);
                Hash256::node(&left, &right)
            }
        }
        go(items, height(items.len()))
    }

    #[test]
    fn single_leaf_is_root() {
        let l = leaves(1);
        assert_eq!(merkle_root(&l).unwrap(), l[0]);
    }

    #[test]
    fn two_leaves_combine_once() {
        let l = leaves(2);
        assert_eq!(merkle_root(&l).unwrap(), Hash256::node(&l[0], &l[1]));
    }

    #[test]
    fn seven_leaves_match_reference() {
        let l = leaves(7);
        assert_eq!(merkle_root(&l).unwrap(), reference_root(&l));
    }

    #[test]
    fn all_sizes_match_reference() {
        for n in 1..=33 {
            let l = leaves(n);
            assert_eq!(merkle_root(&l).unwrap(), reference_root(&l), "n = {n}");
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(merkle_root(&[]), Err(MerkleError::EmptyLeaves));
        assert_eq!(merkle_root_or_empty(&[]), empty_root());
    }

    #[test]
    fn prove_verify_eight() {
        let l = leaves(8);
        for i in 0..8 {
            let p = merkle_prove(&l, i).unwrap();
            assert!(merkle_verify(&p));
        }
    }

    #[test]
    fn flipped_sibling_fails() {
        let l = leaves(8);
        let mut p = merkle_prove(&l, 3).unwrap();
        p.siblings[1] = p.siblings[1].flip_bit(5);
        assert!(!merkle_verify(&p));
    }

    #[test]
    fn proofs_for_sizes_up_to_16_agree_with_reference_root() {
        for n in 1..=16 {
            let l = leaves(n);
            let root = reference_root(&l);
            for i in 0..n {
                let p = merkle_prove(&l, i).unwrap();
                assert_eq!(p.root, root);
                assert!(p.verify(), "n = {n}, i = {i}");
            }
        }
    }

    #[test]
    fn index_out_of_range() {
        assert_eq!(merkle_prove(&leaves(3), 3), Err(MerkleError::IndexOutOfRange { index: 3, len: 3 }));
    }

    #[test]
    fn padded_position_rejects_index_flip() {
        let l = leaves(3);
        let mut p = merkle_prove(&l, 2).unwrap();
        assert!(p.verify());
        p.index ^= 1;
        assert!(!p.verify());
    }
}
