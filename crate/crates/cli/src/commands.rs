//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use dcizip::coders::{HuffmanCodebooks, Method};
use dcizip::models::{load_model, save_model, AdaptiveModel, StoredModel, StoredNetwork};
use dcizip::pdcch::{fer_sweep, snr_at_fer, write_fer_csv, FerCurve, LengthHistogram};
use dcizip::pipeline::{
    field_entropy, frame_entries, read_records_csv, sort_fields, train_ue, write_bitmap_csv, write_frames,
    write_records_csv, write_summary_csv, CompressionReport, MethodCodec, ModelTag, SortDirection,
};
use dcizip::schema::SegmentPlan;
use dcizip::tracegen::{read_trace, simulate, split_train_test, trace_to_hex, write_trace, DciTrace};
use dcizip::{DciSchema, Error};

use crate::config::RunConfig;

/// FER target at which dB gains are reported.
const TARGET_FER: f64 = 1e-2;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Opens an input artifact; a missing file is a configuration error.
fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

fn load_trace(path: &Path, schema: &DciSchema) -> anyhow::Result<DciTrace> {
    let trace = read_trace(&mut open(path)?, schema).with_context(|| format!("reading {}", path.display()))?;
    Ok(trace)
}

fn transformer_path(dir: &Path, ue: usize) -> PathBuf {
    dir.join(format!("ue{ue}.transformer.model"))
}

fn rnn_path(dir: &Path, ue: usize) -> PathBuf {
    dir.join(format!("ue{ue}.rnn.model"))
}

fn huffman_path(dir: &Path, ue: usize) -> PathBuf {
    dir.join(format!("ue{ue}.huffman.txt"))
}

pub fn gen(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let schema = cfg.load_schema()?;
    let trace = simulate(&cfg.sim, &schema)?;
    let bin = out.join("trace.bin");
    let mut w = create(&bin)?;
    write_trace(&trace, &mut w)?;
    w.flush()?;
    let mut hex = create(&out.join("trace.hex"))?;
    hex.write_all(trace_to_hex(&trace).as_bytes())?;
    hex.flush()?;
    println!(
        "UEs {}  T {}  N {}  messages {}",
        trace.num_ues(),
        trace.tti_count(),
        schema.total_bits(),
        trace.num_messages()
    );
    for s in trace.streams() {
        println!("  UE {}: {} messages", s.ue, s.len());
    }
    println!("wrote {}", bin.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, trace_path: &Path, out: &Path) -> anyhow::Result<()> {
    let schema = cfg.load_schema()?;
    let trace = load_trace(trace_path, &schema)?;
    let (train, _) = split_train_test(&trace, cfg.split.test_fraction)?;
    let settings = cfg.train.settings();
    let models = out.join("models");
    fs::create_dir_all(&models).with_context(|| format!("creating {}", models.display()))?;
    let mut log = create(&out.join("train_log.csv"))?;
    writeln!(log, "ue,model,epoch,train_loss,val_bce")?;
    for stream in train.streams() {
        let ue = stream.ue;
        if stream.is_empty() {
            println!("UE {ue}: no training messages, skipped");
            continue;
        }
        let msgs: Vec<_> = stream.messages().cloned().collect();
        let mut rows = Vec::new();
        let art = train_ue(&schema, ue, &msgs, &settings, |tag, e| {
            let name = match tag {
                ModelTag::Transformer => "transformer",
                ModelTag::Rnn => "rnn",
            };
            rows.push(format!("{ue},{name},{},{:.6},{:.6}", e.epoch, e.train_loss, e.val_bce));
        })
        .with_context(|| format!("training UE {ue}"))?;
        for r in rows {
            writeln!(log, "{r}")?;
        }
        save_model(&art.stored_transformer(&schema), transformer_path(&models, ue))?;
        if let Some(rnn) = art.stored_rnn(&schema) {
            save_model(&rnn, rnn_path(&models, ue))?;
        }
        let mut hc = create(&huffman_path(&models, ue))?;
        hc.write_all(art.huffman.to_text(&schema).as_bytes())?;
        hc.flush()?;
        let r = &art.transformer_report;
        print!(
            "UE {ue}: {} messages, order {:?}, transformer val BCE {:.4} (epoch {})",
            msgs.len(),
            art.order.order,
            r.best_val_bce,
            r.best_epoch
        );
        if let Some((_, r)) = &art.rnn {
            print!(", rnn val BCE {:.4} (epoch {})", r.best_val_bce, r.best_epoch);
        }
        println!();
    }
    log.flush()?;
    println!("wrote models to {}", models.display());
    Ok(())
}

/// Artifacts loaded from a model directory for one UE.
struct UeModels {
    transformer: Option<StoredModel>,
    rnn: Option<StoredModel>,
    huffman: Option<HuffmanCodebooks>,
    adaptive: AdaptiveModel,
}

fn load_optional<T>(path: &Path, load: impl FnOnce(&Path) -> dcizip::Result<T>) -> anyhow::Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let v = load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some(v))
}

fn missing(what: &str, ue: usize) -> Error {
    Error::Config(format!("no {what} for UE {ue}; run `train` first"))
}

impl UeModels {
    fn codec(&self, schema: &DciSchema, ue: usize, method: Method) -> dcizip::Result<MethodCodec> {
        let books = || self.huffman.clone().ok_or_else(|| missing("Huffman codebooks", ue));
        let transformer = || self.transformer.clone().ok_or_else(|| missing("transformer model", ue));
        match method {
            Method::Identity => MethodCodec::identity(schema),
            Method::Huffman => MethodCodec::huffman(schema, books()?),
            Method::Adaptive => MethodCodec::adaptive(schema, self.adaptive.clone()),
            Method::Rnn => MethodCodec::from_stored(schema, self.rnn.clone().ok_or_else(|| missing("GRU model", ue))?),
            Method::Transformer => MethodCodec::from_stored(schema, transformer()?),
            Method::Joint => {
                let stored = transformer()?;
                if stored.schema_hash != schema.hash() {
                    return Err(Error::Config(format!("transformer for UE {ue} was trained on another schema")));
                }
                match stored.network {
                    StoredNetwork::Transformer(t) => MethodCodec::joint(schema, stored.field_order, t, books()?),
                    StoredNetwork::Rnn(_) => Err(Error::Config(format!("UE {ue}: transformer file holds a GRU"))),
                }
            }
        }
    }
}

pub fn eval(cfg: &RunConfig, trace_path: &Path, models: &Path, out: &Path) -> anyhow::Result<()> {
    let schema = cfg.load_schema()?;
    let methods = cfg.eval.methods()?;
    let trace = load_trace(trace_path, &schema)?;
    let (train, test) = split_train_test(&trace, cfg.split.test_fraction)?;
    let mut per_ue = Vec::with_capacity(train.num_ues());
    for s in train.streams() {
        let ue = s.ue;
        per_ue.push(UeModels {
            transformer: load_optional(&transformer_path(models, ue), |p| load_model(p, &schema))?,
            rnn: load_optional(&rnn_path(models, ue), |p| load_model(p, &schema))?,
            huffman: load_optional(&huffman_path(models, ue), |p| {
                HuffmanCodebooks::parse(&fs::read_to_string(p)?, &schema)
            })?,
            adaptive: AdaptiveModel::warm_started(schema.total_bits(), s.messages()),
        });
    }
    // Fail on missing artifacts before any coding starts.
    for (ue, m) in per_ue.iter().enumerate() {
        if !test.stream(ue).is_empty() {
            for &method in &methods {
                m.codec(&schema, ue, method)?;
            }
        }
    }
    let report = dcizip::pipeline::evaluate(&train, &test, &methods, |ue, method| {
        per_ue[ue].codec(&schema, ue, method)
    })?;
    if !report.all_lossless() {
        return Err(Error::Verification("a decoded message differs from its original".into()).into());
    }
    write_outputs(&report, out)?;
    print_summary(&report, &schema);
    Ok(())
}

fn write_outputs(report: &CompressionReport, out: &Path) -> anyhow::Result<()> {
    let mut w = create(&out.join("records.csv"))?;
    write_records_csv(report, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("summary.csv"))?;
    write_summary_csv(report, &mut w)?;
    w.flush()?;
    let mut w = create(&out.join("bitmap.csv"))?;
    write_bitmap_csv(report, &mut w)?;
    w.flush()?;
    for m in report.methods() {
        let mut w = create(&out.join(format!("frames_{m}.bin")))?;
        write_frames(&frame_entries(report, m), &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn print_summary(report: &CompressionReport, schema: &DciSchema) {
    println!("{} test messages, N = {}", report.lengths(Method::Identity).len(), schema.total_bits());
    println!("{:<12} {:>10} {:>10}", "method", "ratio", "mean K");
    for (m, ratio) in report.summary() {
        let k = report.mean_length(m).unwrap_or(f64::NAN);
        println!("{:<12} {ratio:>10.4} {k:>10.3}", m.name());
    }
}

/// Padded-length histogram of one method's compressed lengths.
fn method_histogram(cfg: &RunConfig, lengths: &[usize], method: Method) -> anyhow::Result<LengthHistogram> {
    if lengths.is_empty() {
        return Err(Error::Config(format!("records hold no `{method}` rows; evaluate it first")).into());
    }
    let h = LengthHistogram::from_lengths(lengths, cfg.pdcch.bin_bits, cfg.pdcch.max_candidates)?;
    Ok(h)
}

pub fn fer(cfg: &RunConfig, records_path: &Path, out: &Path) -> anyhow::Result<()> {
    let records = read_records_csv(open(records_path)?).with_context(|| format!("reading {}", records_path.display()))?;
    let n = records
        .first()
        .map(|r| r.original_bits)
        .ok_or_else(|| Error::Config(format!("{} holds no records", records_path.display())))?;
    let lengths = |m: Method| -> Vec<usize> {
        records
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.compressed_bits)
            .collect()
    };
    let mut sources = vec![
        (format!("uncompressed-{n}"), LengthHistogram::fixed(n)),
        ("huffman".to_string(), method_histogram(cfg, &lengths(Method::Huffman), Method::Huffman)?),
        ("joint".to_string(), method_histogram(cfg, &lengths(Method::Joint), Method::Joint)?),
    ];
    if let Some(h) = cfg.pdcch.config_histogram()? {
        sources.push(("config".to_string(), h));
    }
    for (_, h) in &sources {
        cfg.pdcch.check_source(h)?;
    }
    let mut curves = Vec::with_capacity(sources.len());
    for (label, h) in sources {
        let points = fer_sweep(&cfg.pdcch, &h).with_context(|| format!("FER sweep for {label}"))?;
        println!("{label}: candidates {:?}", h.lengths());
        curves.push(FerCurve { label, points });
    }
    let path = out.join("fer.csv");
    let mut w = create(&path)?;
    write_fer_csv(&curves, &mut w)?;
    w.flush()?;

    let base = snr_at_fer(&curves[0].points, TARGET_FER);
    println!("SNR at FER {TARGET_FER:e}:");
    for c in &curves {
        match (snr_at_fer(&c.points, TARGET_FER), base) {
            (Some(s), Some(b)) => println!("  {:<16} {s:>7.3} dB  gain {:>6.3} dB", c.label, b - s),
            (Some(s), None) => println!("  {:<16} {s:>7.3} dB", c.label),
            (None, _) => println!("  {:<16} not reached on the grid", c.label),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn inspect(cfg: &RunConfig, trace_path: Option<&Path>) -> anyhow::Result<()> {
    let schema = cfg.load_schema()?;
    let plan = SegmentPlan::new(&schema)?;
    println!(
        "schema {:016x}: N = {} bits, {} fields, eta = {}",
        schema.hash(),
        schema.total_bits(),
        schema.num_fields(),
        schema.eta()
    );
    println!("{:<4} {:<10} {:>5} {:>6} {:>8} {:>8}", "k", "field", "width", "offset", "segments", "alphabet");
    for (k, f) in schema.fields().iter().enumerate() {
        let seg = plan.field(k);
        println!(
            "{k:<4} {:<10} {:>5} {:>6} {:>8} {:>8}",
            f.name,
            f.width,
            schema.field_offset(k),
            seg.segment_count(),
            seg.alphabet
        );
    }
    println!("segments per message R = {}, dictionary size = {}", plan.num_segments(), plan.dictionary_size());

    if let Some(path) = trace_path {
        let trace = load_trace(path, &schema)?;
        println!("field entropies (bits), {} UEs:", trace.num_ues());
        for s in trace.streams() {
            if s.is_empty() {
                println!("  UE {}: no messages", s.ue);
                continue;
            }
            let msgs: Vec<_> = s.messages().collect();
            let h = (0..schema.num_fields())
                .map(|k| field_entropy(&schema, msgs.iter().copied(), k))
                .collect::<dcizip::Result<Vec<f64>>>()?;
            let cells: Vec<String> = h.iter().map(|e| format!("{e:.3}")).collect();
            println!("  UE {}: [{}]", s.ue, cells.join(", "));
            println!("        descending order {:?}", sort_fields(&h, SortDirection::Descending));
        }
    }
    Ok(())
}
