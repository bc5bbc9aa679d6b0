use serde::{Deserialize, Serialize};

use super::KEYPOINT_COUNT;
use crate::error::{Error, Result};

/// The drawable limbs as keypoint-index pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct LimbTopology {
    edges: Vec<(usize, usize)>,
}

const BODY25_EDGES: [(usize, usize); 24] = [
    (1, 8),
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (1, 0),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 19),
    (19, 20),
    (14, 21),
    (11, 22),
    (22, 23),
    (11, 24),
];

impl LimbTopology {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, b) in &edges {
            if a >= KEYPOINT_COUNT || b >= KEYPOINT_COUNT {
                return Err(Error::Validation(format!(
                    "limb ({a}, {b}) references a keypoint outside 0..{KEYPOINT_COUNT}"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("limb ({a}, {b}) is a self-edge")));
            }
        }
        Ok(Self { edges })
    }

    /// The 24 limbs of the BODY_25 layout.
    pub fn body25() -> Self {
        Self {
            edges: BODY25_EDGES.to_vec(),
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Reads a JSON list of `[a, b]` pairs.
    pub fn from_json(text: &str) -> Result<Self> {
        let edges: Vec<(usize, usize)> = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("limb topology line {}, column {}", e.line(), e.column()),
            detail: e.to_string(),
        })?;
        Self::new(edges)
    }
}

impl Default for LimbTopology {
    fn default() -> Self {
        Self::body25()
    }
}

impl TryFrom<Vec<(usize, usize)>> for LimbTopology {
    type Error = Error;

    fn try_from(edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(edges)
    }
}

impl From<LimbTopology> for Vec<(usize, usize)> {
    fn from(t: LimbTopology) -> Self {
        t.edges
    }
}
