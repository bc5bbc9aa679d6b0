//! Generates the seeded synthetic keypoint corpora and writes them in the
//! ingest formats.
//!
//! cargo run --example synthesize_corpus -- [seed] [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use skelmap::dataset::ranges_to_json;
use skelmap::io::write_atomic;
use skelmap::synthgen::{frames_to_jsonl, test_corpus, training_corpus};

fn main() -> skelmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let out = args.next().map(PathBuf::from);

    for (name, corpus) in [("train", training_corpus(seed)), ("test", test_corpus(seed))] {
        let seg = corpus.generate()?;
        let mut per_segment: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &seg.frames {
            *per_segment.entry(f.segment_id.as_str()).or_default() += 1;
        }
        println!("{name}: {} frames {per_segment:?}", seg.frames.len());
        for r in &seg.ranges {
            println!("  abnormal {r:?}");
        }
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir.join(name)).map_err(|e| skelmap::Error::io(dir, e))?;
            write_atomic(&dir.join(name).join("keypoints.jsonl"), frames_to_jsonl(&seg.frames).as_bytes())?;
            write_atomic(&dir.join(name).join("ranges.json"), ranges_to_json(&seg.ranges).as_bytes())?;
        }
    }
    Ok(())
}
