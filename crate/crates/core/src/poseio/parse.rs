use serde_json::{json, Value};

use super::{Keypoint, KeypointFrame, KEYPOINT_COUNT};
use crate::error::{Error, Result};

/// One parsed input record.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameRecord {
    Detected(KeypointFrame),
    /// The pose estimator reported no people in this frame.
    Empty { frame_index: u64, segment_id: String },
}

impl FrameRecord {
    pub fn frame_index(&self) -> u64 {
        match self {
            FrameRecord::Detected(f) => f.frame_index,
            FrameRecord::Empty { frame_index, .. } => *frame_index,
        }
    }

    pub fn segment_id(&self) -> &str {
        match self {
            FrameRecord::Detected(f) => &f.segment_id,
            FrameRecord::Empty { segment_id, .. } => segment_id,
        }
    }
}

/// Counters gathered while parsing a stream.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub records: usize,
    pub empty: usize,
    /// Records listing more than one person; only the first was kept.
    pub multi_person: usize,
}

fn schema(context: &str, detail: impl Into<String>) -> Error {
    Error::Schema {
        context: context.to_string(),
        detail: detail.into(),
    }
}

fn record_from_value(value: &Value, context: &str, report: &mut ParseReport) -> Result<FrameRecord> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema(context, "record must be a JSON object"))?;
    let frame_index = obj
        .get("frame")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema(&format!("{context}, field `frame`"), "expected a non-negative integer"))?;
    let segment_id = obj
        .get("segment")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(&format!("{context}, field `segment`"), "expected a string"))?
        .to_string();
    let people = obj
        .get("people")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(&format!("{context}, field `people`"), "expected an array"))?;
    report.records += 1;
    let Some(first) = people.first() else {
        report.empty += 1;
        return Ok(FrameRecord::Empty {
            frame_index,
            segment_id,
        });
    };
    if people.len() > 1 {
        report.multi_person += 1;
    }
    let field = format!("{context}, field `people[0].pose_keypoints_2d`");
    let flat = first
        .get("pose_keypoints_2d")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(&field, "expected an array of numbers"))?;
    if flat.len() != KEYPOINT_COUNT * 3 {
        return Err(schema(
            &field,
            format!("expected {} values (x, y, c for 25 keypoints), found {}", KEYPOINT_COUNT * 3, flat.len()),
        ));
    }
    let mut values = [0.0; KEYPOINT_COUNT * 3];
    for (i, v) in flat.iter().enumerate() {
        values[i] = v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| schema(&field, format!("value {i} is not a finite number")))?;
    }
    let mut keypoints = [Keypoint::default(); KEYPOINT_COUNT];
    for (k, chunk) in keypoints.iter_mut().zip(values.chunks_exact(3)) {
        let c = chunk[2];
        if !(0.0..=1.0).contains(&c) {
            return Err(schema(&field, format!("confidence {c} outside [0, 1]")));
        }
        *k = Keypoint::new(chunk[0], chunk[1], c);
    }
    Ok(FrameRecord::Detected(KeypointFrame {
        frame_index,
        segment_id,
        keypoints,
    }))
}

/// Parses one JSON keypoint document:
/// `{"frame": int, "segment": string, "people": [{"pose_keypoints_2d": [75 numbers]}]}`.
pub fn parse_keypoint_record(text: &str, report: &mut ParseReport) -> Result<FrameRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("line {}, column {}", e.line(), e.column()),
        detail: e.to_string(),
    })?;
    record_from_value(&value, "record", report)
}

/// Parses a stream of keypoint documents, typically one per line.
pub fn parse_keypoint_stream(text: &str) -> Result<(Vec<FrameRecord>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    let mut stream = serde_json::Deserializer::from_str(text).into_iter::<Value>();
    loop {
        let start = stream.byte_offset();
        let next = stream.next();
        let line = 1 + text[..start.min(text.len())].bytes().filter(|&b| b == b'\n').count()
            + text[start.min(text.len())..]
                .bytes()
                .take_while(|b| b.is_ascii_whitespace())
                .filter(|&b| b == b'\n')
                .count();
        match next {
            None => break,
            Some(Err(e)) => {
                return Err(Error::Parse {
                    context: format!("line {}, column {}", e.line(), e.column()),
                    detail: e.to_string(),
                })
            }
            Some(Ok(value)) => {
                records.push(record_from_value(&value, &format!("line {line}"), &mut report)?);
            }
        }
    }
    Ok((records, report))
}

/// Serializes a frame back into the single-person keypoint document format.
pub fn frame_to_json(frame: &KeypointFrame) -> String {
    let flat: Vec<f64> = frame
        .keypoints
        .iter()
        .flat_map(|k| [k.x, k.y, k.confidence])
        .collect();
    json!({
        "frame": frame.frame_index,
        "segment": frame.segment_id,
        "people": [{"pose_keypoints_2d": flat}],
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(neck: (f64, f64, f64)) -> Vec<f64> {
        let mut v: Vec<f64> = (0..75).map(|i| i as f64 / 100.0).collect();
        v[3] = neck.0;
        v[4] = neck.1;
        v[5] = neck.2;
        v
    }

    #[test]
    fn maps_flat_array_to_keypoints() {
        let doc = json!({"frame": 12, "segment": "seg", "people": [{"pose_keypoints_2d": flat((320.0, 240.0, 0.75))}]});
        let mut rep = ParseReport::default();
        let rec = parse_keypoint_record(&doc.to_string(), &mut rep).unwrap();
        let FrameRecord::Detected(f) = rec else { panic!("expected a frame") };
        assert_eq!(f.frame_index, 12);
        assert_eq!(f.segment_id, "seg");
        assert_eq!(f.keypoints[1], Keypoint::new(320.0, 240.0, 0.75));
        assert_eq!(f.keypoints[0], Keypoint::new(0.0, 0.01, 0.02));
    }

    #[test]
    fn no_people_is_an_empty_frame() {
        let mut rep = ParseReport::default();
        let rec = parse_keypoint_record(r#"{"frame": 3, "segment": "a", "people": []}"#, &mut rep).unwrap();
        assert_eq!(
            rec,
            FrameRecord::Empty {
                frame_index: 3,
                segment_id: "a".into()
            }
        );
        assert_eq!(rep.empty, 1);
    }

    #[test]
    fn two_people_keeps_first_and_counts() {
        let doc = json!({"frame": 0, "segment": "a", "people": [
            {"pose_keypoints_2d": flat((1.0, 2.0, 0.5))},
            {"pose_keypoints_2d": flat((9.0, 9.0, 0.5))},
        ]});
        let mut rep = ParseReport::default();
        let FrameRecord::Detected(f) = parse_keypoint_record(&doc.to_string(), &mut rep).unwrap() else {
            panic!()
        };
        assert_eq!((f.keypoints[1].x, f.keypoints[1].y), (1.0, 2.0));
        assert_eq!(rep.multi_person, 1);
    }

    #[test]
    fn wrong_keypoint_count_is_a_schema_error() {
        let doc = json!({"frame": 0, "segment": "a", "people": [{"pose_keypoints_2d": vec![0.0; 54]}]});
        let err = parse_keypoint_record(&doc.to_string(), &mut ParseReport::default()).unwrap_err();
        match err {
            Error::Schema { context, detail } => {
                assert!(context.contains("pose_keypoints_2d"));
                assert!(detail.contains("54"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_stream_reports_line() {
        let good = json!({"frame": 0, "segment": "a", "people": []}).to_string();
        let text = format!("{good}\n{good}\n{{\"frame\": 2, \"segment\": \n");
        match parse_keypoint_stream(&text).unwrap_err() {
            Error::Parse { context, .. } => assert!(context.starts_with("line 4") || context.starts_with("line 3"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{good}\n{{\"frame\": -1, \"segment\": \"a\", \"people\": []}}\n");
        match parse_keypoint_stream(&text).unwrap_err() {
            Error::Schema { context, .. } => assert!(context.contains("line 2") && context.contains("frame"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let doc = json!({"frame": 7, "segment": "q", "people": [{"pose_keypoints_2d": flat((5.5, 6.25, 1.0))}]});
        let mut rep = ParseReport::default();
        let FrameRecord::Detected(f) = parse_keypoint_record(&doc.to_string(), &mut rep).unwrap() else { panic!() };
        let again = parse_keypoint_record(&frame_to_json(&f), &mut rep).unwrap();
        assert_eq!(again, FrameRecord::Detected(f));
    }
}
