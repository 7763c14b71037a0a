//! Adaptive order-0 bit model with Laplace-smoothed per-position counts.

use crate::schema::{DciMessage, DciSchema};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptiveModel {
    ones: Vec<u64>,
    total: u64,
}

impl AdaptiveModel {
    pub fn new(bits: usize) -> Self {
        AdaptiveModel {
            ones: vec![0; bits],
            total: 0,
        }
    }

    /// Counts pre-loaded from `messages`.
    pub fn warm_started<'a>(bits: usize, messages: impl IntoIterator<Item = &'a DciMessage>) -> Self {
        let mut m = AdaptiveModel::new(bits);
        for msg in messages {
            m.observe(msg);
        }
        m
    }

    pub fn bits(&self) -> usize {
        self.ones.len()
    }

    pub fn observations(&self) -> u64 {
        self.total
    }

    /// `(ones + 1) / (total + 2)` at bit position `i`.
    pub fn p1(&self, i: usize) -> f64 {
        (self.ones[i] + 1) as f64 / (self.total + 2) as f64
    }

    /// Per-bit probabilities for field `k`.
    pub fn field_probs(&self, schema: &DciSchema, k: usize) -> Vec<f64> {
        schema.field_range(k).map(|i| self.p1(i)).collect()
    }

    pub fn observe(&mut self, msg: &DciMessage) {
        debug_assert_eq!(msg.len(), self.ones.len());
        for (c, &b) in self.ones.iter_mut().zip(&msg.bits) {
            *c += b as u64;
        }
        self.total += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FieldSpec;
    use proptest::prelude::*;

    #[test]
    fn no_observations_give_one_half() {
        let m = AdaptiveModel::new(5);
        assert!((0..5).all(|i| m.p1(i) == 0.5));
    }

    #[test]
    fn ninety_eight_ones_give_99_percent() {
        let mut m = AdaptiveModel::new(2);
        for _ in 0..98 {
            m.observe(&DciMessage::new(vec![true, false]));
        }
        assert_eq!(m.p1(0), 99.0 / 100.0);
        assert_eq!(m.p1(1), 1.0 / 100.0);
    }

    #[test]
    fn field_probs_follow_the_schema() {
        let schema = DciSchema::new(vec![FieldSpec::new("a", 1), FieldSpec::new("b", 2)], 8).unwrap();
        let mut m = AdaptiveModel::new(3);
        m.observe(&DciMessage::new(vec![true, false, true]));
        assert_eq!(m.field_probs(&schema, 1), vec![1.0 / 3.0, 2.0 / 3.0]);
    }

    proptest! {
        #[test]
        fn shared_prefix_gives_identical_state(bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 4), 0..30)) {
            let msgs: Vec<DciMessage> = bits.into_iter().map(DciMessage::new).collect();
            let mut enc = AdaptiveModel::new(4);
            let mut dec = AdaptiveModel::new(4);
            for m in &msgs {
                enc.observe(m);
                dec.observe(&DciMessage::new(m.bits.clone()));
            }
            prop_assert_eq!(&enc, &dec);
            prop_assert_eq!(enc, AdaptiveModel::warm_started(4, &msgs));
        }
    }
}
