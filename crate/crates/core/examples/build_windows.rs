//! Turns synthetic keypoints into labeled sequential skeleton maps, saves the
//! binary dataset and reads it back.
//!
//! cargo run --example build_windows -- [window] [out.ssmap]

use std::path::PathBuf;

use skelmap::dataset::{build_windows, label_windows, Dataset, WindowSpec};
use skelmap::pipeline::images_from_frames;
use skelmap::poseio::PreprocessConfig;
use skelmap::synthgen::test_corpus;

fn main() -> skelmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let window = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let out = args.next().map(PathBuf::from);

    let corpus = test_corpus(7).generate()?;
    let (images, report) = images_from_frames(&corpus.frames, &PreprocessConfig::default());
    println!(
        "{} keypoint frames -> {} images ({} skipped, {} necks reused)",
        corpus.frames.len(),
        images.len(),
        report.skipped.len(),
        report.reused_neck
    );

    let windows = build_windows(&images, WindowSpec::new(window)?);
    let labeled = label_windows(&windows, &corpus.ranges)?;
    let dataset = Dataset::from_labeled(labeled, window)?;
    println!(
        "{} windows of {window} frames, {} abnormal, per segment {:?}",
        dataset.len(),
        dataset.abnormal_count(),
        dataset.segment_counts()
    );

    let bytes = dataset.to_bytes();
    println!("encoded size {} bytes", bytes.len());
    assert!(Dataset::from_bytes(&bytes)? == dataset);
    if let Some(path) = out {
        dataset.save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
