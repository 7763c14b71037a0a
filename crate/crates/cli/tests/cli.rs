//! End-to-end runs of the `dcizip` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcizip::models::load_model;
use dcizip::pipeline::field_entropy;
use dcizip::tracegen::{write_trace, DciTrace};
use dcizip::DciSchema;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SMALL: &str = r#"
[sim]
tti_count = 600

[train]
epochs = 2

[pdcch]
snr_db = [-1.0, 1.0]
max_frames = 200
min_errors = 20
batch_frames = 100
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("run.toml");
        let out = self.path("out");
        Command::new(env!("CARGO_BIN_EXE_dcizip"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap()
    }
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn default_gen_writes_a_three_ue_39_bit_trace() {
    let ws = Workspace::new("");
    let stdout = ws.ok(&["gen"]);
    assert!(stdout.contains("UEs 3"), "{stdout}");
    assert!(stdout.contains("N 39"), "{stdout}");
    assert!(ws.path("out/trace.bin").exists());
    assert!(ws.path("out/trace.hex").exists());
}

#[test]
fn seeded_gen_is_reproducible() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["--seed", "7", "gen"]);
    let first = sha(&ws.path("out/trace.bin"));
    ws.ok(&["--seed", "7", "gen"]);
    assert_eq!(first, sha(&ws.path("out/trace.bin")));
    ws.ok(&["--seed", "8", "gen"]);
    assert_ne!(first, sha(&ws.path("out/trace.bin")));
}

#[test]
fn missing_schema_file_exits_with_code_2() {
    let ws = Workspace::new(SMALL);
    let o = ws.run(&["--schema", "/nonexistent/dci.schema", "gen"]);
    assert_eq!(o.status.code(), Some(2));
    let ws = Workspace::new("schema = \"missing.schema\"\n");
    assert_eq!(ws.run(&["gen"]).status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_code_2() {
    let ws = Workspace::new("[sim]\nnum_ues = 0\n");
    assert_eq!(ws.run(&["gen"]).status.code(), Some(2));
    let ws = Workspace::new("[train]\nunknown_key = 1\n");
    assert_eq!(ws.run(&["gen"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_code_2() {
    let ws = Workspace::new(SMALL);
    assert_eq!(ws.run(&["train"]).status.code(), Some(2));
    assert_eq!(ws.run(&["fer"]).status.code(), Some(2));
    ws.ok(&["gen"]);
    // No models trained yet.
    assert_eq!(ws.run(&["eval"]).status.code(), Some(2));
}

#[test]
fn constant_trace_trains_to_near_zero_bce() {
    let ws = Workspace::new("[train]\nepochs = 5\ntrain_rnn = false\n");
    let schema = DciSchema::default_dci();
    let msg = schema.pack(&[300, 3, 17, 1, 0, 5, 2, 1, 4, 6]).unwrap();
    let trace = DciTrace::from_messages(schema, vec![msg; 600]);
    let path = ws.path("const.bin");
    write_trace(&trace, &mut fs::File::create(&path).unwrap()).unwrap();
    ws.ok(&["train", "--trace", path.to_str().unwrap()]);
    let rows = csv_rows(&ws.read("out/train_log.csv"));
    let last: f64 = rows.last().unwrap()[4].parse().unwrap();
    assert!(last / std::f64::consts::LN_2 < 0.01, "final validation BCE {last} nats/bit");
}

#[test]
fn ascending_flag_flips_the_field_order() {
    let ws = Workspace::new("[sim]\ntti_count = 600\n[train]\nepochs = 1\ntrain_rnn = false\n");
    ws.ok(&["gen"]);
    let schema = DciSchema::default_dci();
    let trace = dcizip::tracegen::read_trace(&mut fs::File::open(ws.path("out/trace.bin")).unwrap(), &schema).unwrap();
    let (train, _) = dcizip::tracegen::split_train_test(&trace, 0.03).unwrap();
    let entropies: Vec<f64> = (0..schema.num_fields())
        .map(|k| field_entropy(&schema, train.stream(0).messages(), k).unwrap())
        .collect();
    let order_of = |args: &[&str]| {
        ws.ok(args);
        load_model(ws.path("out/models/ue0.transformer.model"), &schema).unwrap().field_order
    };
    let desc = order_of(&["train"]);
    let asc = order_of(&["train", "--order", "ascending"]);
    assert!(desc.windows(2).all(|w| entropies[w[0]] >= entropies[w[1]]), "{desc:?}");
    assert!(asc.windows(2).all(|w| entropies[w[0]] <= entropies[w[1]]), "{asc:?}");
    assert_ne!(desc, asc);
}

#[test]
fn eval_reports_every_method_and_reloads_identically() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["gen"]);
    ws.ok(&["train"]);
    ws.ok(&["eval"]);
    let records = ws.read("out/records.csv");
    let frames = sha(&ws.path("out/frames_joint.bin"));
    let summary = ws.read("out/summary.csv");

    let rows = csv_rows(&summary);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["identity", "huffman", "adaptive", "rnn", "transformer", "joint"]);
    let ratio = |m: &str| -> f64 { rows.iter().find(|r| r[0] == m).unwrap()[1].parse().unwrap() };
    assert_eq!(ratio("identity"), 1.0);

    // Selector overhead bound: K_joint <= 1 + K_transformer per message.
    let recs = csv_rows(&records);
    let mean_k = |m: &str| {
        let ks: Vec<f64> = recs.iter().filter(|r| r[2] == m).map(|r| r[4].parse().unwrap()).collect();
        ks.iter().sum::<f64>() / ks.len() as f64
    };
    assert!(recs.iter().all(|r| r[5] == "true"));
    let bound = 39.0 / (mean_k("transformer") + 1.0);
    assert!(ratio("joint") >= bound - 1e-6, "{} < {bound}", ratio("joint"));

    let bitmap = csv_rows(&ws.read("out/bitmap.csv"));
    assert_eq!(bitmap.len(), recs.len());
    assert!(bitmap.iter().all(|r| r[3].len() == 39));

    // Evaluating again from the saved models reproduces every output.
    ws.ok(&["eval"]);
    assert_eq!(records, ws.read("out/records.csv"));
    assert_eq!(frames, sha(&ws.path("out/frames_joint.bin")));
}

#[test]
fn fer_emits_three_curves_reproducibly() {
    let ws = Workspace::new(SMALL);
    ws.ok(&["gen"]);
    let mut cfg = String::from(SMALL);
    cfg.push_str("[eval]\nmethods = [\"huffman\", \"joint\"]\n");
    fs::write(ws.path("run.toml"), cfg).unwrap();
    ws.ok(&["train"]);
    ws.ok(&["eval"]);
    ws.ok(&["fer"]);
    let first = ws.read("out/fer.csv");
    let labels: std::collections::BTreeSet<String> = csv_rows(&first).iter().map(|r| r[5].clone()).collect();
    assert_eq!(
        labels.into_iter().collect::<Vec<_>>(),
        ["huffman", "joint", "uncompressed-39"]
    );
    assert_eq!(csv_rows(&first).len(), 6);
    ws.ok(&["fer"]);
    assert_eq!(first, ws.read("out/fer.csv"));
}

#[test]
fn empty_snr_grid_is_a_config_error() {
    let ws = Workspace::new("[pdcch]\nsnr_db = []\n");
    fs::create_dir_all(ws.path("out")).unwrap();
    fs::write(
        ws.path("out/records.csv"),
        "ue,tti,method,original_bits,compressed_bits,lossless_ok\n\
         0,1,huffman,39,20,true\n0,1,joint,39,12,true\n",
    )
    .unwrap();
    let o = ws.run(&["fer"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn inspect_prints_the_segment_plan() {
    let ws = Workspace::new(SMALL);
    let stdout = ws.ok(&["inspect"]);
    assert!(stdout.contains("N = 39 bits"), "{stdout}");
    assert!(stdout.contains("R = 11"), "{stdout}");
    ws.ok(&["gen"]);
    let stdout = ws.ok(&["inspect", "--trace", ws.path("out/trace.bin").to_str().unwrap()]);
    assert!(stdout.contains("descending order"), "{stdout}");
}
