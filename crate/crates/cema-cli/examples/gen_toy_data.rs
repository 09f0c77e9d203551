//! Generate a seeded toy JSONL dataset:
//! `cargo run -p cema-cli --example gen_toy_data -- <path> <count> <seed>`

use cema_core::dataset::write_jsonl;
use cema_core::toy::generate_toy_corpus;
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let path: PathBuf = args.next().expect("usage: gen_toy_data <path> <count> <seed>").into();
    let count: usize = args.next().as_deref().unwrap_or("200").parse().expect("count");
    let seed: u64 = args.next().as_deref().unwrap_or("7").parse().expect("seed");
    let records = generate_toy_corpus(count, seed);
    write_jsonl(&path, &records).expect("write dataset");
    println!("wrote {} records to {}", records.len(), path.display());
}
