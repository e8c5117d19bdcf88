use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

/// Toy payment: spends `input` once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tx {
    pub id: u64,
    pub input: u64,
    pub amount: u64,
}

impl Tx {
    pub fn well_formed(&self) -> bool {
        self.amount > 0
    }

    pub fn encode(&self) -> [u8; 24] {
        let mut out = [0u8; 24];
        out[..8].copy_from_slice(&self.id.to_be_bytes());
        out[8..16].copy_from_slice(&self.input.to_be_bytes());
        out[16..].copy_from_slice(&self.amount.to_be_bytes());
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Batch(pub Vec<Tx>);

impl Batch {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn digest(&self) -> Digest {
        let encoded: Vec<[u8; 24]> = self.0.iter().map(Tx::encode).collect();
        let mut fields: Vec<&[u8]> = vec![b"batch"];
        fields.extend(encoded.iter().map(|e| e.as_slice()));
        Digest::of_fields(&fields)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every tx well-formed, no input spent twice, none already spent.
    pub fn is_valid_against(&self, spent: &HashSet<u64>) -> bool {
        let mut inputs = BTreeSet::new();
        self.0
            .iter()
            .all(|tx| tx.well_formed() && !spent.contains(&tx.input) && inputs.insert(tx.input))
    }
}

/// Committed state: which inputs are spent.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    spent: HashSet<u64>,
    applied: u64,
    skipped: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spent(&self) -> &HashSet<u64> {
        &self.spent
    }

    pub fn is_spent(&self, input: u64) -> bool {
        self.spent.contains(&input)
    }

    /// Applies a committed batch in order. Conflicting or malformed txs are
    /// skipped, identically on every replica.
    pub fn apply(&mut self, batch: &Batch) -> Vec<u64> {
        let mut ok = Vec::new();
        for tx in &batch.0 {
            if tx.well_formed() && self.spent.insert(tx.input) {
                self.applied += 1;
                ok.push(tx.id);
            } else {
                self.skipped += 1;
            }
        }
        ok
    }

    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(id: u64, input: u64) -> Tx {
        Tx {
            id,
            input,
            amount: 1,
        }
    }

    #[test]
    fn digest_depends_on_content_and_order() {
        let a = Batch(vec![tx(1, 1), tx(2, 2)]);
        let b = Batch(vec![tx(2, 2), tx(1, 1)]);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
        assert_eq!(Batch::empty().digest(), Digest::of_fields(&[b"batch"]));
    }

    #[test]
    fn double_spend_is_invalid() {
        let spent: HashSet<u64> = [7].into_iter().collect();
        assert!(Batch(vec![tx(1, 1), tx(2, 2)]).is_valid_against(&spent));
        assert!(!Batch(vec![tx(1, 1), tx(2, 1)]).is_valid_against(&spent));
        assert!(!Batch(vec![tx(1, 7)]).is_valid_against(&spent));
        let zero = Tx {
            id: 3,
            input: 3,
            amount: 0,
        };
        assert!(!Batch(vec![zero]).is_valid_against(&spent));
    }

    #[test]
    fn apply_skips_conflicts_deterministically() {
        let mut l = Ledger::new();
        assert_eq!(
            l.apply(&Batch(vec![tx(1, 1), tx(2, 1), tx(3, 2)])),
            vec![1, 3]
        );
        assert_eq!(l.apply(&Batch(vec![tx(4, 2)])), Vec::<u64>::new());
        assert_eq!((l.applied(), l.skipped()), (2, 2));
    }
}
