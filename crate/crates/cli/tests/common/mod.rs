#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn capslu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capslu"))
        .args(args)
        .arg("--quiet")
        .env_remove("CAPSLU_CACHE_DIR")
        .output()
        .expect("binary runs")
}

pub fn describe(out: &Output) -> String {
    format!(
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

pub fn stdout_of(out: &Output) -> Result<String, String> {
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(describe(out))
    }
}

pub fn ok(out: &Output) -> String {
    stdout_of(out).unwrap_or_else(|e| panic!("{e}"))
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

pub fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub const SMALL_MODEL: &str = "[model]
encoder_hidden = 8
encoder_layers = 1
num_primary = 8
primary_dim = 4
output_dim = 4
routing_iters = 2
transform_init_std = 0.3
";

/// Writes the tiny synthetic corpus under `dir/corpus` and a config that
/// trains on it; returns `(config, manifest)`.
pub fn synth_run(dir: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let manifest = PathBuf::from(
        ok(&capslu(&[
            "synth",
            "--preset",
            "tiny",
            "--seed",
            "3",
            "--out",
            dir.join("corpus").to_str().unwrap(),
        ]))
        .trim(),
    );
    let cfg = write(
        &dir.join("run.toml"),
        &format!(
            "seed = 5\noutput_dir = \"out\"\n[corpus]\nname = \"synth\"\nmanifest = \"corpus/manifest.tsv\"\n{SMALL_MODEL}{extra}"
        ),
    );
    (cfg, manifest)
}

pub fn tone(path: &Path, freq: f64, seconds: f64) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (16_000.0 * seconds) as usize;
    for i in 0..n {
        let v = (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin();
        w.write_sample((v * 8000.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

/// Two speakers, two commands each, in the GRABO directory layout.
pub fn grabo_tree(root: &Path) {
    for (s, spk) in ["pp2", "pp3"].iter().enumerate() {
        for (c, (action, freq)) in [("approach", 300.0), ("grab", 900.0)].iter().enumerate() {
            let stem = format!("recordings/{action}_{s}_{c}");
            tone(
                &root
                    .join(spk)
                    .join("spchdatadir")
                    .join(format!("{stem}.wav")),
                freq + 50.0 * s as f64,
                0.3,
            );
            write(
                &root.join(spk).join("framedir").join(format!("{stem}.xml")),
                &format!("<{action}><speed>slow</speed></{action}>"),
            );
        }
    }
}

/// Two speakers and two commands per split, in the Fluent layout.
pub fn fluent_tree(root: &Path) {
    let mut n = 0;
    for split in ["train", "valid", "test"] {
        let mut csv = String::from(",path,speakerId,transcription,action,object,location\n");
        for spk in ["s1", "s2"] {
            for (action, freq) in [("activate", 300.0), ("deactivate", 1200.0)] {
                let rel = format!("wavs/speakers/{spk}/{spk}_{split}_{action}.wav");
                tone(&root.join(&rel), freq, 0.25);
                csv.push_str(&format!("{n},{rel},{spk},x,{action},lights,none\n"));
                n += 1;
            }
        }
        write(&root.join(format!("data/{split}_data.csv")), &csv);
    }
}
