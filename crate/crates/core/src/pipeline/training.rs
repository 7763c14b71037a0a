//! Per-UE training of every method's artifacts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::codec::MethodCodec;
use super::order::{FieldOrder, SortDirection};
use crate::coders::{HuffmanCodebooks, Method};
use crate::error::{Error, Result};
use crate::models::{
    message_samples, rnn_samples, train, AdaptiveModel, EpochStats, GruModel, ModelConfig, RnnConfig, StoredModel,
    StoredNetwork, TrainConfig, TrainReport, TrainingMeta, Transformer,
};
use crate::schema::{DciMessage, DciSchema};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    /// Previous messages the transformer attends to.
    pub memory: usize,
    /// Previous messages the GRU reads before the current one.
    pub rnn_memory: usize,
    /// Tail fraction of each UE's training stream held out for validation.
    pub validation_fraction: f64,
    pub direction: SortDirection,
    pub optimizer: TrainConfig,
    /// Seeds parameter initialization; shuffling uses `optimizer.seed`.
    pub seed: u64,
    pub train_rnn: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            memory: 2,
            rnn_memory: 1,
            validation_fraction: 0.1,
            direction: SortDirection::Descending,
            optimizer: TrainConfig::default(),
            seed: 0,
            train_rnn: true,
        }
    }
}

fn stream_seed(seed: u64, ue: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((ue as u64) << 32) ^ stream
}

/// Number of training messages when the last `fraction` is held out.
pub fn validation_split(n: usize, fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let val = (n as f64 * fraction).ceil() as usize;
    let tr = n.saturating_sub(val);
    if tr == 0 {
        return Err(Error::InvalidArgument(format!("{n} messages leave nothing to train on")));
    }
    Ok(tr)
}

/// Trains a transformer on `messages` (original layout) under `order`.
pub fn train_transformer(
    schema: &DciSchema,
    messages: &[DciMessage],
    order: &[usize],
    settings: &TrainSettings,
    ue: usize,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Transformer, TrainReport)> {
    let permuted = schema.permuted(order)?;
    let msgs: Vec<DciMessage> = messages.iter().map(|m| schema.permute_message(m, order)).collect();
    let config = ModelConfig::new(&permuted, settings.memory)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(settings.seed, ue, 1));
    let model = Transformer::new(&permuted, config, &mut rng)?;
    let n_tr = validation_split(msgs.len(), settings.validation_fraction)?;
    let tr = message_samples(&permuted, model.config(), &msgs, 0..n_tr)?;
    let va = message_samples(&permuted, model.config(), &msgs, n_tr..msgs.len())?;
    train(model, &tr, &va, &settings.optimizer, on_epoch)
}

/// Trains the bit-wise GRU on `messages` under `order`.
pub fn train_rnn(
    schema: &DciSchema,
    messages: &[DciMessage],
    order: &[usize],
    settings: &TrainSettings,
    ue: usize,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(GruModel, TrainReport)> {
    let msgs: Vec<DciMessage> = messages.iter().map(|m| schema.permute_message(m, order)).collect();
    let config = RnnConfig::new(schema.total_bits(), schema.num_fields(), settings.rnn_memory);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(settings.seed, ue, 2));
    let model = GruModel::new(config, &mut rng)?;
    let n_tr = validation_split(msgs.len(), settings.validation_fraction)?;
    let tr = rnn_samples(model.config(), &msgs, 0..n_tr);
    let va = rnn_samples(model.config(), &msgs, n_tr..msgs.len());
    train(model, &tr, &va, &settings.optimizer, on_epoch)
}

/// Everything needed to code one UE's stream with any method.
#[derive(Debug, Clone)]
pub struct UeArtifacts {
    pub ue: usize,
    pub order: FieldOrder,
    pub transformer: Transformer,
    pub transformer_report: TrainReport,
    pub rnn: Option<(GruModel, TrainReport)>,
    pub huffman: HuffmanCodebooks,
    /// Counts over the UE's training stream.
    pub adaptive: AdaptiveModel,
}

impl UeArtifacts {
    /// A fresh codec for `method`.
    pub fn codec(&self, schema: &DciSchema, method: Method) -> Result<MethodCodec> {
        let order = self.order.order.clone();
        match method {
            Method::Identity => MethodCodec::identity(schema),
            Method::Huffman => MethodCodec::huffman(schema, self.huffman.clone()),
            Method::Adaptive => MethodCodec::adaptive(schema, self.adaptive.clone()),
            Method::Rnn => match &self.rnn {
                Some((m, _)) => MethodCodec::rnn(schema, order, m.clone()),
                None => Err(Error::Config(format!("no GRU was trained for UE {}", self.ue))),
            },
            Method::Transformer => MethodCodec::transformer(schema, order, self.transformer.clone()),
            Method::Joint => MethodCodec::joint(schema, order, self.transformer.clone(), self.huffman.clone()),
        }
    }

    pub fn stored_transformer(&self, schema: &DciSchema) -> StoredModel {
        stored(
            StoredNetwork::Transformer(self.transformer.clone()),
            schema,
            &self.order.order,
            &self.transformer_report,
        )
    }

    pub fn stored_rnn(&self, schema: &DciSchema) -> Option<StoredModel> {
        self.rnn
            .as_ref()
            .map(|(m, r)| stored(StoredNetwork::Rnn(m.clone()), schema, &self.order.order, r))
    }
}

pub fn stored(network: StoredNetwork, schema: &DciSchema, order: &[usize], report: &TrainReport) -> StoredModel {
    StoredModel {
        network,
        schema_hash: schema.hash(),
        field_order: order.to_vec(),
        meta: TrainingMeta {
            best_val_bce: report.best_val_bce,
            best_epoch: report.best_epoch as u32,
        },
    }
}

/// Which model an epoch callback refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Transformer,
    Rnn,
}

/// Field order, Huffman books, counts, and trained networks for one UE's
/// training stream.
pub fn train_ue(
    schema: &DciSchema,
    ue: usize,
    messages: &[DciMessage],
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(ModelTag, &EpochStats),
) -> Result<UeArtifacts> {
    let order = FieldOrder::from_messages(schema, messages, settings.direction)?;
    let huffman = HuffmanCodebooks::build(schema, messages)?;
    let adaptive = AdaptiveModel::warm_started(schema.total_bits(), messages);
    let (transformer, transformer_report) =
        train_transformer(schema, messages, &order.order, settings, ue, |e| on_epoch(ModelTag::Transformer, e))?;
    let rnn = if settings.train_rnn {
        Some(train_rnn(schema, messages, &order.order, settings, ue, |e| on_epoch(ModelTag::Rnn, e))?)
    } else {
        None
    };
    Ok(UeArtifacts {
        ue,
        order,
        transformer,
        transformer_report,
        rnn,
        huffman,
        adaptive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FieldSpec;

    fn schema() -> DciSchema {
        DciSchema::new(vec![FieldSpec::new("a", 4), FieldSpec::new("b", 2), FieldSpec::new("c", 3)], 8).unwrap()
    }

    #[test]
    fn validation_split_holds_out_the_tail() {
        assert_eq!(validation_split(100, 0.1).unwrap(), 90);
        assert_eq!(validation_split(101, 0.1).unwrap(), 90);
        assert_eq!(validation_split(5, 0.0).unwrap(), 5);
        assert!(validation_split(1, 0.5).is_err());
        assert!(validation_split(10, 1.0).is_err());
    }

    #[test]
    fn constant_stream_trains_to_near_zero_bce() {
        let s = schema();
        let msgs = vec![s.pack(&[9, 2, 5]).unwrap(); 600];
        let settings = TrainSettings {
            optimizer: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            train_rnn: false,
            ..TrainSettings::default()
        };
        let a = train_ue(&s, 0, &msgs, &settings, |_, _| {}).unwrap();
        assert!(a.transformer_report.best_val_bce < 0.01, "{:?}", a.transformer_report);
        assert!(a.rnn.is_none());
        assert!(a.codec(&s, Method::Rnn).is_err());
        // Entropy-zero fields keep their index order.
        assert_eq!(a.order.order, vec![0, 1, 2]);
        let mut c = a.codec(&s, Method::Transformer).unwrap();
        let f = c.compress_message(&msgs[..2], &msgs[0]).unwrap();
        assert!(f.len() <= 8, "{}", f.len());
    }

    #[test]
    fn stored_models_carry_order_and_hash() {
        let s = schema();
        let msgs: Vec<DciMessage> = (0..60u64).map(|t| s.pack(&[t % 16, t % 3, 1]).unwrap()).collect();
        let settings = TrainSettings {
            optimizer: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            ..TrainSettings::default()
        };
        let a = train_ue(&s, 3, &msgs, &settings, |_, _| {}).unwrap();
        let st = a.stored_transformer(&s);
        assert_eq!(st.schema_hash, s.hash());
        assert_eq!(st.field_order, a.order.order);
        assert_eq!(st.meta.best_epoch, 1);
        assert!(a.stored_rnn(&s).is_some());
        let mut from = MethodCodec::from_stored(&s, st).unwrap();
        let mut direct = a.codec(&s, Method::Transformer).unwrap();
        assert_eq!(
            from.compress_message(&msgs[..5], &msgs[5]).unwrap(),
            direct.compress_message(&msgs[..5], &msgs[5]).unwrap()
        );
    }
}
