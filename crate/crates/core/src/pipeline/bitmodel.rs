//! Sequential bit predictors driving the arithmetic coder.
//!
//! A [`BitModel`] is asked for `P(bit i = 1)` with bits `0..i` of the current
//! message known. Encoder and decoder issue the same call sequence, so both
//! sides see identical probabilities.

use crate::coders::{ArithmeticDecoder, ArithmeticEncoder};
use crate::error::{Error, Result};
use crate::models::{decoder_tokens, encoder_tokens, AdaptiveModel, EncodedContext, GruModel, RnnState, Transformer};
use crate::schema::{DciMessage, DciSchema, SegmentPlan};

pub trait BitModel {
    /// Message width in bits.
    fn bits(&self) -> usize;

    /// Starts a message; `history` holds previous messages, most recent last.
    fn begin(&mut self, history: &[DciMessage]) -> Result<()>;

    /// Probability that bit `prefix.len()` is one.
    fn predict(&mut self, prefix: &[bool]) -> Result<f64>;

    /// Called with the message once both sides know it.
    fn observe(&mut self, _msg: &DciMessage) {}
}

/// Arithmetic-codes `msg` bit by bit; the result includes the flush bits.
pub fn ac_encode(model: &mut impl BitModel, history: &[DciMessage], msg: &DciMessage) -> Result<Vec<bool>> {
    if msg.len() != model.bits() {
        return Err(Error::InvalidArgument(format!(
            "message has {} bits, model expects {}",
            msg.len(),
            model.bits()
        )));
    }
    model.begin(history)?;
    let mut enc = ArithmeticEncoder::new();
    for i in 0..msg.len() {
        let p = model.predict(&msg.bits[..i])?;
        enc.encode_p(msg.bits[i], p);
    }
    Ok(enc.finish())
}

/// Inverse of [`ac_encode`]; rejects payloads with missing or extra bits.
pub fn ac_decode(model: &mut impl BitModel, history: &[DciMessage], payload: &[bool]) -> Result<DciMessage> {
    model.begin(history)?;
    let n = model.bits();
    let mut dec = ArithmeticDecoder::new(payload);
    let mut bits = Vec::with_capacity(n);
    for _ in 0..n {
        let p = model.predict(&bits)?;
        bits.push(dec.decode_p(p)?);
    }
    dec.finish()?;
    Ok(DciMessage::new(bits))
}

/// Decodes a message from the front of a zero-padded stream; returns it
/// with the length of the original arithmetic-coded frame.
pub fn ac_decode_prefix(
    model: &mut impl BitModel,
    history: &[DciMessage],
    padded: &[bool],
) -> Result<(DciMessage, usize)> {
    model.begin(history)?;
    let n = model.bits();
    let mut dec = ArithmeticDecoder::new(padded);
    let mut bits = Vec::with_capacity(n);
    for _ in 0..n {
        let p = model.predict(&bits)?;
        bits.push(dec.decode_p(p)?);
    }
    let used = dec.consumed();
    if used > padded.len() {
        return Err(Error::TruncatedStream {
            needed: used,
            available: padded.len(),
        });
    }
    Ok((DciMessage::new(bits), used))
}

/// Predicts 1/2 for every bit.
#[derive(Debug, Clone)]
pub struct UniformBits(pub usize);

impl BitModel for UniformBits {
    fn bits(&self) -> usize {
        self.0
    }

    fn begin(&mut self, _: &[DciMessage]) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, _: &[bool]) -> Result<f64> {
        Ok(0.5)
    }
}

impl BitModel for AdaptiveModel {
    fn bits(&self) -> usize {
        AdaptiveModel::bits(self)
    }

    fn begin(&mut self, _: &[DciMessage]) -> Result<()> {
        Ok(())
    }

    fn predict(&mut self, prefix: &[bool]) -> Result<f64> {
        Ok(self.p1(prefix.len()))
    }

    fn observe(&mut self, msg: &DciMessage) {
        AdaptiveModel::observe(self, msg);
    }
}

/// The GRU stepped one bit at a time.
#[derive(Debug, Clone)]
pub struct RnnBits {
    model: GruModel,
    state: Option<RnnState>,
    pushed: usize,
}

impl RnnBits {
    pub fn new(model: GruModel) -> Self {
        RnnBits {
            model,
            state: None,
            pushed: 0,
        }
    }

    pub fn model(&self) -> &GruModel {
        &self.model
    }
}

impl BitModel for RnnBits {
    fn bits(&self) -> usize {
        self.model.config().bits
    }

    fn begin(&mut self, history: &[DciMessage]) -> Result<()> {
        if history.iter().any(|m| m.len() != self.bits()) {
            return Err(Error::Shape("history message width differs from the model".into()));
        }
        self.state = Some(self.model.start(history));
        self.pushed = 0;
        Ok(())
    }

    fn predict(&mut self, prefix: &[bool]) -> Result<f64> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("predict before begin".into()))?;
        if prefix.len() != self.pushed && prefix.len() != self.pushed + 1 {
            return Err(Error::InvalidArgument(format!(
                "bits must be predicted in order: at {}, asked for {}",
                self.pushed,
                prefix.len()
            )));
        }
        if prefix.len() == self.pushed + 1 {
            state.push(prefix[self.pushed]);
            self.pushed += 1;
        }
        Ok(state.predict(&self.model))
    }
}

/// The transformer queried once per field, then read out bit by bit.
pub struct TransformerBits {
    model: Transformer,
    plan: SegmentPlan,
    /// Field index of every bit.
    field_of: Vec<usize>,
    field_start: Vec<usize>,
    ctx: Option<EncodedContext>,
    cached: Option<(usize, Vec<f64>)>,
}

impl TransformerBits {
    /// `schema` is the (already permuted) layout the model was trained on.
    pub fn new(model: Transformer, schema: &DciSchema) -> Result<Self> {
        model.check_schema(schema)?;
        let plan = SegmentPlan::new(schema)?;
        let mut field_of = Vec::with_capacity(schema.total_bits());
        let mut field_start = Vec::with_capacity(schema.num_fields());
        for k in 0..schema.num_fields() {
            field_start.push(field_of.len());
            field_of.extend(std::iter::repeat_n(k, schema.width(k)));
        }
        Ok(TransformerBits {
            model,
            plan,
            field_of,
            field_start,
            ctx: None,
            cached: None,
        })
    }

    pub fn model(&self) -> &Transformer {
        &self.model
    }
}

impl BitModel for TransformerBits {
    fn bits(&self) -> usize {
        self.field_of.len()
    }

    fn begin(&mut self, history: &[DciMessage]) -> Result<()> {
        let tokens = encoder_tokens(&self.plan, history, self.model.config().memory)?;
        self.ctx = Some(self.model.encode_context(&tokens)?);
        self.cached = None;
        Ok(())
    }

    fn predict(&mut self, prefix: &[bool]) -> Result<f64> {
        let i = prefix.len();
        let k = *self
            .field_of
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("bit {i} outside the message")))?;
        if self.cached.as_ref().is_none_or(|(c, _)| *c != k) {
            let ctx = self
                .ctx
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("predict before begin".into()))?;
            let start = self.field_start[k];
            let tokens = decoder_tokens(&self.plan, &prefix[..start], k);
            self.cached = Some((k, self.model.predict_field(ctx, &tokens, k)?));
        }
        let (_, probs) = self.cached.as_ref().expect("filled above");
        Ok(probs[i - self.field_start[k]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coders::arith::FLUSH_BITS;
    use crate::models::{ModelConfig, RnnConfig};
    use crate::schema::FieldSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema() -> DciSchema {
        DciSchema::new(
            vec![FieldSpec::new("a", 5), FieldSpec::new("b", 1), FieldSpec::new("c", 11)],
            4,
        )
        .unwrap()
    }

    fn random_messages(n: usize, bits: usize, seed: u64) -> Vec<DciMessage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DciMessage::new((0..bits).map(|_| rng.random_bool(0.3)).collect()))
            .collect()
    }

    fn round_trip(model: &mut impl BitModel, msgs: &[DciMessage]) {
        for t in 0..msgs.len() {
            let hist = &msgs[..t];
            let payload = ac_encode(model, hist, &msgs[t]).unwrap();
            assert_eq!(ac_decode(model, hist, &payload).unwrap(), msgs[t]);
            model.observe(&msgs[t]);
        }
    }

    #[test]
    fn uniform_model_costs_n_plus_flush() {
        let msgs = random_messages(20, 17, 1);
        for m in &msgs {
            let payload = ac_encode(&mut UniformBits(17), &[], m).unwrap();
            assert_eq!(payload.len(), 17 + FLUSH_BITS);
        }
    }

    #[test]
    fn all_models_round_trip() {
        let s = schema();
        let msgs = random_messages(30, s.total_bits(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        round_trip(&mut UniformBits(s.total_bits()), &msgs);
        round_trip(&mut AdaptiveModel::new(s.total_bits()), &msgs);
        let gru = GruModel::new(RnnConfig::new(s.total_bits(), s.num_fields(), 2), &mut rng).unwrap();
        round_trip(&mut RnnBits::new(gru), &msgs);
        let mut cfg = ModelConfig::new(&s, 2).unwrap();
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.d_ff = 16;
        let tf = Transformer::new(&s, cfg, &mut rng).unwrap();
        round_trip(&mut TransformerBits::new(tf, &s).unwrap(), &msgs);
    }

    #[test]
    fn transformer_bits_match_field_predictions() {
        let s = schema();
        let msgs = random_messages(4, s.total_bits(), 4);
        let mut cfg = ModelConfig::new(&s, 2).unwrap();
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.d_ff = 16;
        let tf = Transformer::new(&s, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let plan = SegmentPlan::new(&s).unwrap();
        let mut bits = TransformerBits::new(tf.clone(), &s).unwrap();
        bits.begin(&msgs[..3]).unwrap();
        let mut got = Vec::new();
        for i in 0..s.total_bits() {
            got.push(bits.predict(&msgs[3].bits[..i]).unwrap());
        }
        let mut want = Vec::new();
        for k in 0..s.num_fields() {
            let p = tf.predict_message_field(&plan, &msgs[..3], &msgs[3], k).unwrap();
            want.extend_from_slice(&p[..s.width(k)]);
        }
        assert_eq!(got, want);
    }

    #[test]
    fn rnn_bits_match_window_predictions() {
        let s = schema();
        let msgs = random_messages(3, s.total_bits(), 6);
        let gru = GruModel::new(RnnConfig::new(s.total_bits(), s.num_fields(), 1), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut bits = RnnBits::new(gru.clone());
        bits.begin(&msgs[..2]).unwrap();
        for i in 0..s.total_bits() {
            let p = bits.predict(&msgs[2].bits[..i]).unwrap();
            assert_eq!(p, gru.predict_window(&msgs[..2], &msgs[2].bits[..i]).unwrap());
        }
    }

    #[test]
    fn out_of_order_rnn_queries_are_rejected() {
        let gru = GruModel::new(RnnConfig::new(8, 2, 1), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut bits = RnnBits::new(gru);
        bits.begin(&[]).unwrap();
        assert!(bits.predict(&[true, true]).is_err());
    }

    #[test]
    fn truncated_and_padded_payloads_fail() {
        let msgs = random_messages(1, 17, 8);
        let mut m = AdaptiveModel::warm_started(17, &random_messages(50, 17, 9));
        let payload = ac_encode(&mut m, &[], &msgs[0]).unwrap();
        let mut longer = payload.clone();
        longer.push(false);
        assert!(ac_decode(&mut m, &[], &longer).is_err());
        assert!(ac_decode(&mut m, &[], &payload[..payload.len() - 1]).is_err());
    }

    #[test]
    fn wrong_width_is_rejected() {
        let msg = DciMessage::zeros(5);
        assert!(ac_encode(&mut UniformBits(6), &[], &msg).is_err());
    }
}
