//! Token features and masked labels for the transformer.

use crate::error::{Error, Result};
use crate::schema::{DciMessage, DciSchema, SegmentPlan};

/// Encoder and decoder token sequences for one (message, field) sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturePair {
    /// `L * R` tokens: previous messages, most recent first.
    pub encoder: Vec<usize>,
    /// `R` tokens: fields before `k` of the current message, then padding.
    pub decoder: Vec<usize>,
}

/// Field bits padded with zeros to `S_output`; only the first `width`
/// positions are valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldLabel {
    pub bits: Vec<bool>,
    pub width: usize,
}

impl FieldLabel {
    pub fn new(schema: &DciSchema, msg: &DciMessage, k: usize, s_output: usize) -> Self {
        let mut bits = msg.bits[schema.field_range(k)].to_vec();
        let width = bits.len();
        bits.resize(s_output, false);
        FieldLabel { bits, width }
    }

    pub fn valid(&self, j: usize) -> bool {
        j < self.width
    }
}

/// Encoder tokens for the message after `history`, whose last entry is the
/// most recent message. Missing slots become all-padding pseudo-messages.
pub fn encoder_tokens(plan: &SegmentPlan, history: &[DciMessage], memory: usize) -> Result<Vec<usize>> {
    let r = plan.num_segments();
    let mut out = Vec::with_capacity(memory * r);
    for back in 1..=memory {
        match history.len().checked_sub(back) {
            Some(i) => out.extend(plan.message_to_integers(&history[i])?),
            None => out.extend(std::iter::repeat_n(plan.padding_token(), r)),
        }
    }
    Ok(out)
}

/// Decoder tokens when fields `0..k` of `bits` are known. Only the known
/// prefix of `bits` is read, so a partially decoded message may be passed.
pub fn decoder_tokens(plan: &SegmentPlan, bits: &[bool], k: usize) -> Vec<usize> {
    let r = plan.num_segments();
    let known = if k < plan.num_fields() {
        plan.first_segment(k)
    } else {
        r
    };
    let mut out = Vec::with_capacity(r);
    for s in &plan.segments()[..known] {
        let v = bits[s.bit_offset..s.bit_offset + s.width]
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize);
        out.push(s.token_offset + v);
    }
    out.resize(r, plan.padding_token());
    out
}

/// Features for field `k` of `messages[t]` with `memory` previous messages.
pub fn build_features(
    messages: &[DciMessage],
    t: usize,
    k: usize,
    plan: &SegmentPlan,
    memory: usize,
) -> Result<FeaturePair> {
    if t >= messages.len() || k >= plan.num_fields() {
        return Err(Error::InvalidArgument(format!(
            "sample (t={t}, k={k}) outside {} messages x {} fields",
            messages.len(),
            plan.num_fields()
        )));
    }
    let lo = t.saturating_sub(memory);
    Ok(FeaturePair {
        encoder: encoder_tokens(plan, &messages[lo..t], memory)?,
        decoder: decoder_tokens(plan, &messages[t].bits, k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FieldSpec;

    fn toy() -> (DciSchema, SegmentPlan, Vec<DciMessage>) {
        // Fields of width 2, 1, 2 with eta = 8: R = 3 and token offsets 0, 4, 6.
        let schema = DciSchema::new(
            vec![FieldSpec::new("a", 2), FieldSpec::new("b", 1), FieldSpec::new("c", 2)],
            8,
        )
        .unwrap();
        let plan = SegmentPlan::new(&schema).unwrap();
        let msgs = [[1u64, 0, 3], [2, 1, 0], [3, 1, 2]]
            .iter()
            .map(|v| schema.pack(v).unwrap())
            .collect();
        (schema, plan, msgs)
    }

    #[test]
    fn encoder_feature_by_hand() {
        let (_, plan, msgs) = toy();
        assert_eq!(plan.dictionary_size(), 10);
        let f = build_features(&msgs, 2, 0, &plan, 2).unwrap();
        // x~_{t-1} = [0+2, 4+1, 6+0], x~_{t-2} = [0+1, 4+0, 6+3]
        assert_eq!(f.encoder, vec![2, 5, 6, 1, 4, 9]);
    }

    #[test]
    fn first_field_has_all_padding_decoder() {
        let (_, plan, msgs) = toy();
        let f = build_features(&msgs, 1, 0, &plan, 2).unwrap();
        assert_eq!(f.decoder, vec![10; 3]);
        let f = build_features(&msgs, 1, 2, &plan, 2).unwrap();
        assert_eq!(f.decoder, vec![2, 5, 10]);
    }

    #[test]
    fn warm_up_uses_pseudo_messages() {
        let (_, plan, msgs) = toy();
        let f = build_features(&msgs, 0, 1, &plan, 4).unwrap();
        assert_eq!(f.encoder, vec![10; 12]);
        let f = build_features(&msgs, 1, 1, &plan, 2).unwrap();
        assert_eq!(f.encoder, vec![1, 4, 9, 10, 10, 10]);
    }

    #[test]
    fn padding_only_in_decoder_tail() {
        let (_, plan, msgs) = toy();
        for k in 0..3 {
            let f = build_features(&msgs, 2, k, &plan, 1).unwrap();
            assert_eq!(f.decoder.len(), 3);
            let first_pad = f.decoder.iter().position(|&x| x == 10).unwrap_or(3);
            assert!(f.decoder[first_pad..].iter().all(|&x| x == 10));
            assert_eq!(first_pad, plan.first_segment(k));
        }
    }

    #[test]
    fn label_is_masked_and_zero_padded() {
        let (schema, _, msgs) = toy();
        let y = FieldLabel::new(&schema, &msgs[0], 1, 2);
        assert_eq!(y.bits, vec![false, false]);
        assert_eq!(y.width, 1);
        let y = FieldLabel::new(&schema, &msgs[0], 2, 2);
        assert_eq!(y.bits, vec![true, true]);
        assert!(y.valid(1) && !FieldLabel::new(&schema, &msgs[0], 1, 2).valid(1));
    }

    #[test]
    fn out_of_range_sample_is_rejected() {
        let (_, plan, msgs) = toy();
        assert!(build_features(&msgs, 3, 0, &plan, 1).is_err());
        assert!(build_features(&msgs, 0, 3, &plan, 1).is_err());
    }
}
