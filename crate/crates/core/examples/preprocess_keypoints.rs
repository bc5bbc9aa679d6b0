//! Renders one frame of every built-in motion program through the
//! keypoint-to-binary-image chain and prints it as ASCII art.
//!
//! cargo run --example preprocess_keypoints -- [frame] [stroke_width] [threshold]

use skelmap::poseio::{preprocess_frame, FrameRecord, LimbTopology, PreprocessConfig, IMAGE_SIDE};
use skelmap::synthgen::{builtin_programs, Skeleton};

fn main() {
    let mut args = std::env::args().skip(1);
    let t = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut config = PreprocessConfig::default();
    if let Some(w) = args.next().and_then(|s| s.parse().ok()) {
        config.stroke_width = w;
    }
    if let Some(th) = args.next().and_then(|s| s.parse().ok()) {
        config.threshold = th;
    }
    let topology = LimbTopology::body25();
    let skeleton = Skeleton::default();

    for program in builtin_programs() {
        let frame = skeleton.place(&program.pose_at(t), (320.0, 150.0), t as u64, "demo");
        match preprocess_frame(&FrameRecord::Detected(frame), &config, &topology, None) {
            Ok(img) => {
                println!("{} (frame {t}, {} pixels set)", program.name, img.count_ones());
                for row in 0..IMAGE_SIDE {
                    let line: String = (0..IMAGE_SIDE).map(|c| if img.get(row, c) == 1 { '#' } else { '.' }).collect();
                    println!("  {line}");
                }
            }
            Err(reason) => println!("{}: skipped ({reason:?})", program.name),
        }
    }
}
