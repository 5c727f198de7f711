#![allow(dead_code)]

use std::path::{Path, PathBuf};

use qclass::synthetic::SyntheticCorpus;
use qclass::LabelTaxonomy;

pub const SMALL_CONFIG: &str = "\
# small, fast architecture for tests
filters=6
hidden=8
epochs=3
batch_size=16
validation_fraction=0.1
";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub corpus: SyntheticCorpus,
}

impl Fixture {
    pub fn new(per_fine: usize, dim: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = SyntheticCorpus::generate(&LabelTaxonomy::uiuc(), per_fine, dim, seed);
        corpus
            .write_label_file(dir.path().join("train.label"))
            .unwrap();
        corpus
            .write_vectors(dir.path().join("vectors.txt"))
            .unwrap();
        std::fs::write(dir.path().join("small.cfg"), SMALL_CONFIG).unwrap();
        Fixture { dir, corpus }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process.
pub fn qclass(args: &[&str], stdin: &str) -> Output {
    let mut argv = vec!["qclass"];
    argv.extend_from_slice(args);
    let mut input = stdin.as_bytes();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = qclass::cli::run(argv, &mut input, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
