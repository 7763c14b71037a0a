//! Histogram field entropies and entropy-based field ordering.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::schema::{DciMessage, DciSchema};

/// Empirical entropy (bits) of field `k` over `messages`.
pub fn field_entropy<'a>(
    schema: &DciSchema,
    messages: impl IntoIterator<Item = &'a DciMessage>,
    k: usize,
) -> Result<f64> {
    let mut hist: HashMap<u64, u64> = HashMap::new();
    let mut n = 0u64;
    for m in messages {
        *hist.entry(schema.field_value(m, k)).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("entropy of an empty sample".into()));
    }
    let mut counts: Vec<u64> = hist.into_values().collect();
    counts.sort_unstable();
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortDirection {
    Descending,
    Ascending,
}

/// A field permutation with the entropies it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOrder {
    /// `order[i]` is the original index of the field coded `i`-th.
    pub order: Vec<usize>,
    /// Entropy of each original field.
    pub entropies: Vec<f64>,
}

impl FieldOrder {
    pub fn identity(num_fields: usize) -> Self {
        FieldOrder {
            order: (0..num_fields).collect(),
            entropies: vec![0.0; num_fields],
        }
    }

    pub fn from_messages<'a>(
        schema: &DciSchema,
        messages: impl IntoIterator<Item = &'a DciMessage>,
        direction: SortDirection,
    ) -> Result<Self> {
        let messages: Vec<&DciMessage> = messages.into_iter().collect();
        let entropies = (0..schema.num_fields())
            .map(|k| field_entropy(schema, messages.iter().copied(), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldOrder {
            order: sort_fields(&entropies, direction),
            entropies,
        })
    }
}

/// Field indices sorted by entropy; ties keep ascending original index.
pub fn sort_fields(entropies: &[f64], direction: SortDirection) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..entropies.len()).collect();
    idx.sort_by(|&a, &b| {
        let c = entropies[a].total_cmp(&entropies[b]);
        let c = match direction {
            SortDirection::Descending => c.reverse(),
            SortDirection::Ascending => c,
        };
        c.then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FieldSpec;
    use proptest::prelude::*;

    fn one_field(width: usize, values: &[u64]) -> (DciSchema, Vec<DciMessage>) {
        let schema = DciSchema::new(vec![FieldSpec::new("f", width)], 8).unwrap();
        let msgs = values.iter().map(|&v| schema.pack(&[v]).unwrap()).collect();
        (schema, msgs)
    }

    #[test]
    fn constant_field_has_zero_entropy() {
        let (s, m) = one_field(3, &[5; 40]);
        assert_eq!(field_entropy(&s, &m, 0).unwrap(), 0.0);
    }

    #[test]
    fn uniform_two_bit_field_has_two_bits() {
        let (s, m) = one_field(2, &[0, 1, 2, 3, 3, 2, 1, 0]);
        assert!((field_entropy(&s, &m, 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_to_one_split() {
        let mut v = vec![0u64; 750];
        v.extend(vec![1u64; 250]);
        let (s, m) = one_field(1, &v);
        let expected = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        let h = field_entropy(&s, &m, 0).unwrap();
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 0.8113).abs() < 1e-4);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let (s, _) = one_field(1, &[]);
        assert!(field_entropy(&s, &[], 0).is_err());
    }

    #[test]
    fn sort_examples() {
        assert_eq!(sort_fields(&[0.1, 2.0, 1.0], SortDirection::Descending), vec![1, 2, 0]);
        assert_eq!(sort_fields(&[0.1, 2.0, 1.0], SortDirection::Ascending), vec![0, 2, 1]);
        assert_eq!(sort_fields(&[0.7; 5], SortDirection::Descending), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn default_trace_order_puts_noisy_fields_first() {
        let schema = DciSchema::default_dci();
        let cfg = crate::tracegen::SimConfig {
            tti_count: 2000,
            ..Default::default()
        };
        let trace = crate::tracegen::simulate(&cfg, &schema).unwrap();
        let fo = FieldOrder::from_messages(&schema, trace.messages(), SortDirection::Descending).unwrap();
        for w in fo.order.windows(2) {
            assert!(fo.entropies[w[0]] >= fo.entropies[w[1]]);
        }
        for (k, h) in fo.entropies.iter().enumerate() {
            assert!(*h >= 0.0 && *h <= schema.width(k) as f64 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn reversing_distinct_entropies_reverses_order(h in proptest::collection::vec(0u32..1000, 1..12)) {
            let mut uniq = h.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assume!(uniq.len() == h.len());
            let h: Vec<f64> = h.iter().map(|&x| x as f64 / 100.0).collect();
            let n = h.len();
            let desc = sort_fields(&h, SortDirection::Descending);
            let mut asc = sort_fields(&h, SortDirection::Ascending);
            asc.reverse();
            prop_assert_eq!(&asc, &desc);
            // Reversing the entropy vector mirrors the field indices.
            let rev: Vec<f64> = h.iter().rev().copied().collect();
            let mirrored: Vec<usize> = sort_fields(&rev, SortDirection::Descending)
                .into_iter()
                .map(|i| n - 1 - i)
                .collect();
            prop_assert_eq!(mirrored, desc);
        }

        #[test]
        fn sort_is_a_permutation(h in proptest::collection::vec(0.0f64..4.0, 0..15)) {
            let mut o = sort_fields(&h, SortDirection::Descending);
            o.sort_unstable();
            prop_assert_eq!(o, (0..h.len()).collect::<Vec<_>>());
        }
    }
}
