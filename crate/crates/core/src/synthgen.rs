//! Seeded stick-figure motion generator emitting BODY_25 keypoint frames and
//! ground-truth abnormal ranges.
//!
//! A figure is a fixed-proportion 2D skeleton facing +x, seen at three
//! quarters so left and right limbs stay apart. Each program drives
//! nine joint angles with sinusoids of one shared frequency; angles are in
//! radians measured from straight down, positive towards the facing
//! direction.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{AbnormalRange, Label};
use crate::error::{Error, Result};
use crate::poseio::{frame_to_json, Keypoint, KeypointFrame, KEYPOINT_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Joint {
    /// Trunk tilt; positive leans the neck forward of the hips.
    Lean = 0,
    RightShoulder,
    /// Elbow flexion, added to the upper-arm angle.
    RightElbow,
    LeftShoulder,
    LeftElbow,
    RightHip,
    /// Knee flexion, subtracted from the thigh angle.
    RightKnee,
    LeftHip,
    LeftKnee,
}

pub const JOINT_COUNT: usize = 9;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose(pub [f64; JOINT_COUNT]);

impl Pose {
    pub fn get(&self, j: Joint) -> f64 {
        self.0[j as usize]
    }

    pub fn set(&mut self, j: Joint, value: f64) {
        self.0[j as usize] = value;
    }
}

/// `offset + amplitude * sin(2 pi f t + phase)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Track {
    pub const fn fixed(offset: f64) -> Self {
        Self {
            offset,
            amplitude: 0.0,
            phase: 0.0,
        }
    }

    pub const fn swing(offset: f64, amplitude: f64, phase: f64) -> Self {
        Self {
            offset,
            amplitude,
            phase,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionProgram {
    pub name: String,
    pub label: Label,
    /// Cycles per frame shared by every track.
    pub frequency: f64,
    /// Horizontal locomotion in source pixels per frame.
    pub speed: f64,
    pub tracks: [Track; JOINT_COUNT],
}

impl MotionProgram {
    /// Joint angles `t` frames into the program.
    pub fn pose_at(&self, t: usize) -> Pose {
        let phi = 2.0 * PI * self.frequency * t as f64;
        let mut pose = Pose::default();
        for (a, tr) in pose.0.iter_mut().zip(&self.tracks) {
            *a = tr.offset + tr.amplitude * (phi + tr.phase).sin();
        }
        pose
    }
}

fn walking_legs(amplitude: f64) -> [Track; 4] {
    [
        Track::swing(0.0, amplitude, 0.0),
        Track::swing(0.35, 0.35, -FRAC_PI_2),
        Track::swing(0.0, amplitude, PI),
        Track::swing(0.35, 0.35, FRAC_PI_2),
    ]
}

fn program(name: &str, label: Label, frequency: f64, speed: f64, upper: [Track; 5], legs: [Track; 4]) -> MotionProgram {
    let mut tracks = [Track::default(); JOINT_COUNT];
    tracks[..5].copy_from_slice(&upper);
    tracks[5..].copy_from_slice(&legs);
    MotionProgram {
        name: name.into(),
        label,
        frequency,
        speed,
        tracks,
    }
}

/// Normal: `walk`, `carry_two_hands`, `place_in_front`.
/// Abnormal: `run`, `carry_one_hand`, `throw`.
pub fn builtin_programs() -> Vec<MotionProgram> {
    let walk_f = 1.0 / 30.0;
    let carry_upper = [
        Track::fixed(0.1),
        Track::swing(0.7, 0.05, 0.0),
        Track::fixed(1.05),
        Track::swing(0.7, 0.05, 0.0),
        Track::fixed(1.05),
    ];
    let mut one_hand_upper = carry_upper;
    one_hand_upper[Joint::LeftShoulder as usize] = Track::fixed(0.0);
    one_hand_upper[Joint::LeftElbow as usize] = Track::fixed(0.0);
    let stance = [
        Track::fixed(0.15),
        Track::fixed(0.1),
        Track::fixed(-0.15),
        Track::fixed(0.1),
    ];
    vec![
        program(
            "walk",
            Label::Normal,
            walk_f,
            2.0,
            [
                Track::fixed(0.05),
                Track::swing(0.0, 0.35, PI),
                Track::swing(0.25, 0.1, PI),
                Track::swing(0.0, 0.35, 0.0),
                Track::swing(0.25, 0.1, 0.0),
            ],
            walking_legs(0.4),
        ),
        program(
            "run",
            Label::Abnormal,
            2.5 * walk_f,
            5.0,
            [
                Track::fixed(0.25),
                Track::swing(0.0, 0.8, PI),
                Track::swing(1.4, 0.2, PI),
                Track::swing(0.0, 0.8, 0.0),
                Track::swing(1.4, 0.2, 0.0),
            ],
            [
                Track::swing(0.1, 0.7, 0.0),
                Track::swing(0.8, 0.7, -FRAC_PI_2),
                Track::swing(0.1, 0.7, PI),
                Track::swing(0.8, 0.7, FRAC_PI_2),
            ],
        ),
        program("carry_two_hands", Label::Normal, walk_f, 1.5, carry_upper, walking_legs(0.3)),
        program("carry_one_hand", Label::Abnormal, walk_f, 1.5, one_hand_upper, walking_legs(0.3)),
        program(
            "place_in_front",
            Label::Normal,
            1.0 / 60.0,
            0.0,
            [
                Track::swing(0.2, 0.2, -FRAC_PI_2),
                Track::swing(0.65, 0.65, -FRAC_PI_2),
                Track::fixed(0.3),
                Track::swing(0.65, 0.65, -FRAC_PI_2),
                Track::fixed(0.3),
            ],
            stance,
        ),
        program(
            "throw",
            Label::Abnormal,
            1.0 / 20.0,
            0.0,
            [
                Track::fixed(0.05),
                Track::swing(FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2),
                Track::fixed(0.3),
                Track::fixed(0.1),
                Track::fixed(0.2),
            ],
            stance,
        ),
    ]
}

pub fn builtin_program(name: &str) -> Result<MotionProgram> {
    builtin_programs().into_iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<String> = builtin_programs().into_iter().map(|p| p.name).collect();
        Error::Config(format!("unknown motion program {name:?} (known: {})", names.join(", ")))
    })
}

/// Segment lengths of the figure in source pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub shoulder_offset: f64,
    pub hip_offset: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub trunk: f64,
    pub thigh: f64,
    pub shin: f64,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self {
            shoulder_offset: 22.0,
            hip_offset: 12.0,
            upper_arm: 50.0,
            forearm: 45.0,
            trunk: 90.0,
            thigh: 60.0,
            shin: 55.0,
        }
    }
}

fn limb(from: (f64, f64), angle: f64, length: f64) -> (f64, f64) {
    (from.0 + length * angle.sin(), from.1 + length * angle.cos())
}

impl Skeleton {
    /// Arms horizontal, one forward and one back, legs straight.
    pub fn t_pose(&self) -> Pose {
        let mut p = Pose::default();
        p.set(Joint::RightShoulder, FRAC_PI_2);
        p.set(Joint::LeftShoulder, -FRAC_PI_2);
        p
    }

    /// All 25 keypoints of `pose` with the neck at `neck`, confidence 0.9.
    pub fn place(&self, pose: &Pose, neck: (f64, f64), frame_index: u64, segment_id: &str) -> KeypointFrame {
        let at = |dx: f64, dy: f64| (neck.0 + dx, neck.1 + dy);
        let lean = pose.get(Joint::Lean);
        let mid_hip = (neck.0 - self.trunk * lean.sin(), neck.1 + self.trunk * lean.cos());
        let r_sh = at(self.shoulder_offset, 2.0);
        let l_sh = at(-self.shoulder_offset, 2.0);
        let r_el = limb(r_sh, pose.get(Joint::RightShoulder), self.upper_arm);
        let r_wr = limb(
            r_el,
            pose.get(Joint::RightShoulder) + pose.get(Joint::RightElbow),
            self.forearm,
        );
        let l_el = limb(l_sh, pose.get(Joint::LeftShoulder), self.upper_arm);
        let l_wr = limb(l_el, pose.get(Joint::LeftShoulder) + pose.get(Joint::LeftElbow), self.forearm);
        let r_hip = (mid_hip.0 + self.hip_offset, mid_hip.1);
        let l_hip = (mid_hip.0 - self.hip_offset, mid_hip.1);
        let r_knee = limb(r_hip, pose.get(Joint::RightHip), self.thigh);
        let r_ank = limb(r_knee, pose.get(Joint::RightHip) - pose.get(Joint::RightKnee), self.shin);
        let l_knee = limb(l_hip, pose.get(Joint::LeftHip), self.thigh);
        let l_ank = limb(l_knee, pose.get(Joint::LeftHip) - pose.get(Joint::LeftKnee), self.shin);
        let foot = |a: (f64, f64), dx: f64, dy: f64| (a.0 + dx, a.1 + dy);
        let points: [(f64, f64); KEYPOINT_COUNT] = [
            at(10.0, -28.0),
            neck,
            r_sh,
            r_el,
            r_wr,
            l_sh,
            l_el,
            l_wr,
            mid_hip,
            r_hip,
            r_knee,
            r_ank,
            l_hip,
            l_knee,
            l_ank,
            at(14.0, -33.0),
            at(8.0, -33.0),
            at(2.0, -31.0),
            at(-2.0, -31.0),
            foot(l_ank, 15.0, 6.0),
            foot(l_ank, 11.0, 6.0),
            foot(l_ank, -4.0, 6.0),
            foot(r_ank, 15.0, 6.0),
            foot(r_ank, 11.0, 6.0),
            foot(r_ank, -4.0, 6.0),
        ];
        let mut keypoints = [Keypoint::default(); KEYPOINT_COUNT];
        for (k, &(x, y)) in keypoints.iter_mut().zip(&points) {
            *k = Keypoint::new(x, y, 0.9);
        }
        KeypointFrame {
            frame_index,
            segment_id: segment_id.to_string(),
            keypoints,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub program: String,
    pub frames: usize,
}

impl ScheduleEntry {
    pub fn new(program: &str, frames: usize) -> Self {
        Self {
            program: program.into(),
            frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub segment_id: String,
    pub seed: u64,
    pub image_width: u32,
    pub image_height: u32,
    /// Standard deviation of the Gaussian keypoint jitter, in pixels.
    pub jitter_std: f64,
    /// Probability that a keypoint is reported undetected.
    pub dropout: f64,
    pub schedule: Vec<ScheduleEntry>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            segment_id: "synth".into(),
            seed: 0,
            image_width: 640,
            image_height: 480,
            jitter_std: 2.0,
            dropout: 0.02,
            schedule: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn total_frames(&self) -> usize {
        self.schedule.iter().map(|e| e.frames).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSegment {
    pub frames: Vec<KeypointFrame>,
    pub ranges: Vec<AbnormalRange>,
}

const NECK_HEIGHT: f64 = 150.0;
const PATH_LEFT: f64 = 120.0;
const PATH_WIDTH: f64 = 400.0;

/// Horizontal neck position after walking `distance` pixels back and forth
/// along the path.
fn path_x(distance: f64) -> f64 {
    let d = distance.rem_euclid(2.0 * PATH_WIDTH);
    PATH_LEFT + if d <= PATH_WIDTH { d } else { 2.0 * PATH_WIDTH - d }
}

/// Generates one segment: program evaluations back to back, then jitter,
/// dropout and confidences drawn from the seed. Each abnormal schedule entry
/// yields one range covering exactly its frames.
pub fn generate_segment(spec: &SynthSpec) -> Result<SyntheticSegment> {
    if spec.schedule.is_empty() {
        return Err(Error::Config("synthetic schedule is empty".into()));
    }
    if !(spec.jitter_std >= 0.0 && spec.jitter_std.is_finite()) {
        return Err(Error::Config(format!("jitter std must be non-negative, got {}", spec.jitter_std)));
    }
    if !(0.0..=1.0).contains(&spec.dropout) {
        return Err(Error::Config(format!("dropout must lie in [0, 1], got {}", spec.dropout)));
    }
    if spec.image_width == 0 || spec.image_height == 0 {
        return Err(Error::Config("image size must be non-zero".into()));
    }
    let programs: Vec<MotionProgram> = spec
        .schedule
        .iter()
        .map(|e| builtin_program(&e.program))
        .collect::<Result<_>>()?;
    let skeleton = Skeleton::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.jitter_std).expect("validated std");
    let (max_x, max_y) = (f64::from(spec.image_width - 1), f64::from(spec.image_height - 1));

    let mut frames = Vec::with_capacity(spec.total_frames());
    let mut ranges = Vec::new();
    let mut distance = 0.0;
    for (entry, prog) in spec.schedule.iter().zip(&programs) {
        let first = frames.len() as u64;
        for t in 0..entry.frames {
            let index = frames.len() as u64;
            let pose = prog.pose_at(t);
            let mut frame = skeleton.place(&pose, (path_x(distance), NECK_HEIGHT), index, &spec.segment_id);
            for k in &mut frame.keypoints {
                let (jx, jy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
                let dropped = rng.gen::<f64>() < spec.dropout;
                let confidence = rng.gen_range(0.6..0.95);
                if dropped {
                    *k = Keypoint::default();
                } else {
                    *k = Keypoint::new((k.x + jx).clamp(0.0, max_x), (k.y + jy).clamp(0.0, max_y), confidence);
                }
            }
            frames.push(frame);
            distance += prog.speed;
        }
        if prog.label == Label::Abnormal && entry.frames > 0 {
            ranges.push(AbnormalRange::new(
                spec.segment_id.clone(),
                first,
                first + entry.frames as u64 - 1,
            )?);
        }
    }
    Ok(SyntheticSegment { frames, ranges })
}

/// Several segments generated together.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub segments: Vec<SynthSpec>,
}

impl Corpus {
    pub fn generate(&self) -> Result<SyntheticSegment> {
        let mut out = SyntheticSegment {
            frames: Vec::new(),
            ranges: Vec::new(),
        };
        for spec in &self.segments {
            let seg = generate_segment(spec)?;
            out.frames.extend(seg.frames);
            out.ranges.extend(seg.ranges);
        }
        Ok(out)
    }
}

fn segment(id: &str, seed: u64, schedule: &[(&str, usize)]) -> SynthSpec {
    SynthSpec {
        segment_id: id.into(),
        seed,
        schedule: schedule.iter().map(|&(p, n)| ScheduleEntry::new(p, n)).collect(),
        ..SynthSpec::default()
    }
}

/// Normal-only training corpus: three 529-frame segments mixing `walk`,
/// `carry_two_hands` and `place_in_front`, 1500 windows at T = 30.
pub fn training_corpus(seed: u64) -> Corpus {
    Corpus {
        segments: vec![
            segment(
                "train-a",
                seed,
                &[("walk", 180), ("carry_two_hands", 180), ("place_in_front", 169)],
            ),
            segment(
                "train-b",
                seed.wrapping_add(1),
                &[("carry_two_hands", 180), ("place_in_front", 180), ("walk", 169)],
            ),
            segment(
                "train-c",
                seed.wrapping_add(2),
                &[("place_in_front", 180), ("walk", 180), ("carry_two_hands", 169)],
            ),
        ],
    }
}

/// Test corpus: each segment embeds one abnormal program between normal ones.
pub fn test_corpus(seed: u64) -> Corpus {
    let base = seed.wrapping_add(1000);
    Corpus {
        segments: vec![
            segment(
                "test-a",
                base,
                &[("walk", 200), ("run", 100), ("walk", 150), ("carry_two_hands", 150)],
            ),
            segment(
                "test-b",
                base.wrapping_add(1),
                &[
                    ("carry_two_hands", 150),
                    ("carry_one_hand", 100),
                    ("carry_two_hands", 100),
                    ("place_in_front", 150),
                ],
            ),
            segment(
                "test-c",
                base.wrapping_add(2),
                &[("place_in_front", 150), ("throw", 100), ("place_in_front", 100), ("walk", 150)],
            ),
        ],
    }
}

/// Frames as newline-delimited keypoint JSON documents.
pub fn frames_to_jsonl(frames: &[KeypointFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&frame_to_json(f));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(program: &str, frames: usize) -> SynthSpec {
        SynthSpec {
            jitter_std: 0.0,
            dropout: 0.0,
            schedule: vec![ScheduleEntry::new(program, frames)],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_frames_are_program_evaluations() {
        let seg = generate_segment(&exact("walk", 120)).unwrap();
        let prog = builtin_program("walk").unwrap();
        let skel = Skeleton::default();
        for (t, f) in seg.frames.iter().enumerate() {
            let expect = skel.place(&prog.pose_at(t), (path_x(2.0 * t as f64), NECK_HEIGHT), t as u64, "synth");
            for (a, b) in f.keypoints.iter().zip(&expect.keypoints) {
                assert_eq!((a.x, a.y), (b.x, b.y));
                assert!(a.confidence > 0.0);
            }
        }
        assert!(seg.ranges.is_empty());
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SynthSpec {
            seed: 7,
            schedule: vec![ScheduleEntry::new("throw", 50), ScheduleEntry::new("walk", 50)],
            ..SynthSpec::default()
        };
        assert_eq!(generate_segment(&spec).unwrap(), generate_segment(&spec).unwrap());
        let other = SynthSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_segment(&spec).unwrap(), generate_segment(&other).unwrap());
    }

    #[test]
    fn one_range_per_abnormal_entry() {
        let spec = SynthSpec {
            schedule: vec![
                ScheduleEntry::new("walk", 300),
                ScheduleEntry::new("run", 100),
                ScheduleEntry::new("walk", 200),
            ],
            ..SynthSpec::default()
        };
        let seg = generate_segment(&spec).unwrap();
        assert_eq!(seg.frames.len(), 600);
        assert_eq!(seg.ranges, vec![AbnormalRange::new("synth", 300, 399).unwrap()]);
    }

    #[test]
    fn one_hand_carry_changes_only_the_left_arm() {
        let two = generate_segment(&exact("carry_two_hands", 90)).unwrap();
        let one = generate_segment(&exact("carry_one_hand", 90)).unwrap();
        let mut differing = 0;
        for (a, b) in two.frames.iter().zip(&one.frames) {
            for k in 0..KEYPOINT_COUNT {
                let same = (a.keypoints[k].x, a.keypoints[k].y) == (b.keypoints[k].x, b.keypoints[k].y);
                if [6, 7].contains(&k) {
                    differing += usize::from(!same);
                } else {
                    assert!(same, "keypoint {k} frame {}", a.frame_index);
                }
            }
        }
        assert_eq!(differing, 180);
    }

    #[test]
    fn run_is_faster_than_walk() {
        let walk = builtin_program("walk").unwrap();
        let run = builtin_program("run").unwrap();
        assert!(run.frequency >= 2.5 * walk.frequency);
        assert!(run.speed >= 2.5 * walk.speed);
    }

    #[test]
    fn keypoints_stay_in_frame() {
        for p in builtin_programs() {
            let spec = SynthSpec {
                jitter_std: 5.0,
                schedule: vec![ScheduleEntry::new(&p.name, 400)],
                ..SynthSpec::default()
            };
            for f in generate_segment(&spec).unwrap().frames {
                for k in f.keypoints.iter().filter(|k| k.detected()) {
                    assert!((0.0..=639.0).contains(&k.x) && (0.0..=479.0).contains(&k.y), "{}", p.name);
                }
            }
        }
    }

    #[test]
    fn noise_statistics_match_configuration() {
        let spec = SynthSpec {
            seed: 3,
            jitter_std: 2.0,
            dropout: 0.02,
            schedule: vec![ScheduleEntry::new("place_in_front", 10_000)],
            ..SynthSpec::default()
        };
        let noisy = generate_segment(&spec).unwrap();
        let clean = generate_segment(&SynthSpec {
            jitter_std: 0.0,
            dropout: 0.0,
            ..spec.clone()
        })
        .unwrap();
        let n = (noisy.frames.len() * KEYPOINT_COUNT) as f64;
        let dropped = noisy
            .frames
            .iter()
            .flat_map(|f| f.keypoints.iter())
            .filter(|k| !k.detected())
            .count() as f64;
        let sd = (0.02 * 0.98 / n).sqrt();
        assert!((dropped / n - 0.02).abs() < 3.0 * sd, "dropout rate {}", dropped / n);

        let mut devs = Vec::new();
        for (a, b) in noisy.frames.iter().zip(&clean.frames) {
            for (p, q) in a.keypoints.iter().zip(&b.keypoints) {
                if p.detected() {
                    devs.push(p.x - q.x);
                }
            }
        }
        let m = devs.len() as f64;
        let var = devs.iter().map(|d| d * d).sum::<f64>() / m;
        // sample variance of m normals has standard error var * sqrt(2 / m)
        assert!((var - 4.0).abs() < 3.0 * 4.0 * (2.0 / m).sqrt(), "jitter variance {var}");
    }

    #[test]
    fn presets_have_expected_sizes() {
        let train = training_corpus(1).generate().unwrap();
        assert_eq!(train.frames.len(), 3 * 529);
        assert!(train.ranges.is_empty());
        let test = test_corpus(1).generate().unwrap();
        assert_eq!(test.ranges.len(), 3);
        assert!(builtin_program("dance").is_err());
    }
}
