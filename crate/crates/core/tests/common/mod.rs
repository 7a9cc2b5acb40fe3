#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use rnr::ingest::{parse_interactions, split_all_but_last, Format, Interaction, SplitDataset};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(name: &str) -> Vec<Interaction> {
    let file = File::open(fixture(name)).expect("fixture exists");
    parse_interactions(BufReader::new(file), Format::MovielensDat, ',')
        .expect("fixture parses")
        .interactions
}

pub fn split(name: &str, holdout: usize, seed: u64) -> SplitDataset {
    split_all_but_last(&load(name), holdout, seed).expect("fixture splits")
}
