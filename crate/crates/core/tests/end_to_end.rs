//! Compressed DCI carried over the polar-coded control channel and
//! recovered through blind length decoding.

use dcizip::coders::Method;
use dcizip::pdcch::{attach_crc, bpsk_awgn_llr, BlindDecoder, LengthHistogram};
use dcizip::pipeline::{train_ue, TrainSettings};
use dcizip::tracegen::{simulate, split_train_test, SimConfig};
use dcizip::{DciMessage, DciSchema};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn blind_decoded_payloads_decompress_to_the_original_messages() {
    let schema = DciSchema::default_dci();
    let sim = SimConfig {
        tti_count: 1200,
        seed: 21,
        ..SimConfig::default()
    };
    let trace = simulate(&sim, &schema).unwrap();
    let (train, test) = split_train_test(&trace, 0.1).unwrap();
    let mut settings = TrainSettings::default();
    settings.optimizer.epochs = 2;
    settings.train_rnn = false;
    let mut rng = ChaCha8Rng::seed_from_u64(22);

    let methods = [Method::Huffman, Method::Transformer, Method::Joint];
    let mut checked = [0usize; 3];
    for s in train.streams() {
        let msgs: Vec<DciMessage> = s.messages().cloned().collect();
        let art = train_ue(&schema, s.ue, &msgs, &settings, |_, _| {}).unwrap();
        for (i, &method) in methods.iter().enumerate() {
            let mut enc = art.codec(&schema, method).unwrap();
            let mut dec = art.codec(&schema, method).unwrap();
            let mut history = msgs.clone();
            let targets: Vec<DciMessage> = test.stream(s.ue).messages().cloned().collect();

            let frames: Vec<_> = {
                let mut h = history.clone();
                targets
                    .iter()
                    .map(|m| {
                        let f = enc.compress_message(&h, m).unwrap();
                        enc.observe(m);
                        h.push(m.clone());
                        f
                    })
                    .collect()
            };
            let lengths: Vec<usize> = frames.iter().map(|f| f.len()).collect();
            let hist = LengthHistogram::from_lengths(&lengths, 8, 8).unwrap();
            let blind = BlindDecoder::new(128, &hist.lengths(), 8).unwrap();

            for (frame, msg) in frames.iter().zip(&targets) {
                let padded_len = frame.len().div_ceil(8) * 8;
                let Some(code) = blind.code(padded_len) else {
                    // Outside the candidate list; delivered by other means.
                    dec.observe(msg);
                    history.push(msg.clone());
                    continue;
                };
                let mut payload = frame.payload.clone();
                payload.resize(padded_len, false);
                let cw = code.encode(&attach_crc(&payload)).unwrap();
                let llr = bpsk_awgn_llr(&cw, 8.0, &mut rng);
                let (got_len, got) = blind.decode(&llr).unwrap().expect("clean channel decodes");
                assert_eq!(got_len, padded_len);
                let (back, k) = dec.decompress_padded(&history, &got).unwrap();
                assert_eq!(&back, msg, "{method}");
                assert_eq!(k, frame.len(), "{method}");
                dec.observe(&back);
                history.push(back);
                checked[i] += 1;
            }
        }
    }
    for (m, c) in methods.iter().zip(checked) {
        assert!(c > 50, "{m}: only {c} messages checked");
    }
}
