//! Parameter states grouped the way the selector features stratify them.
//!
//! On disk a state is a single compact JSON header line listing group ids and
//! lengths, followed by the concatenated group vectors as little-endian `f64`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Softmax,
    Embedding,
    Layers1,
    Layers2,
    Layers3,
    Layers4,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Softmax,
        ParamGroup::Embedding,
        ParamGroup::Layers1,
        ParamGroup::Layers2,
        ParamGroup::Layers3,
        ParamGroup::Layers4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Softmax => "softmax",
            ParamGroup::Embedding => "embedding",
            ParamGroup::Layers1 => "layers_1",
            ParamGroup::Layers2 => "layers_2",
            ParamGroup::Layers3 => "layers_3",
            ParamGroup::Layers4 => "layers_4",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    groups: Vec<(ParamGroup, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    groups: Vec<HeaderGroup>,
}

#[derive(Serialize, Deserialize)]
struct HeaderGroup {
    id: ParamGroup,
    len: usize,
}

impl ParameterState {
    /// Groups must be the six canonical groups in canonical order with finite entries.
    pub fn new(groups: Vec<(ParamGroup, Vec<f64>)>) -> Result<Self, BackendError> {
        let ids: Vec<ParamGroup> = groups.iter().map(|(g, _)| *g).collect();
        if ids != ParamGroup::ALL {
            return Err(BackendError::InvalidState(format!("group layout {ids:?}")));
        }
        if groups.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(BackendError::InvalidState("non-finite parameter".into()));
        }
        Ok(Self { groups })
    }

    /// All groups set to zero with `dim` entries each.
    pub fn zeros(dim: usize) -> Self {
        Self { groups: ParamGroup::ALL.iter().map(|&g| (g, vec![0.0; dim])).collect() }
    }

    pub fn groups(&self) -> &[(ParamGroup, Vec<f64>)] {
        &self.groups
    }

    pub fn group(&self, id: ParamGroup) -> &[f64] {
        &self.groups.iter().find(|(g, _)| *g == id).expect("canonical layout").1
    }

    pub fn same_layout(&self, other: &ParameterState) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|((ga, va), (gb, vb))| ga == gb && va.len() == vb.len())
    }

    /// Per-group `self - base`.
    pub fn delta(&self, base: &ParameterState) -> Result<Vec<(ParamGroup, Vec<f64>)>, BackendError> {
        if !self.same_layout(base) {
            return Err(BackendError::InvalidState("group layout mismatch".into()));
        }
        Ok(self
            .groups
            .iter()
            .zip(&base.groups)
            .map(|((g, a), (_, b))| (*g, a.iter().zip(b).map(|(x, y)| x - y).collect()))
            .collect())
    }

    /// Moves every entry a `fraction` of the way toward `target`.
    pub fn toward(&self, target: &ParameterState, fraction: f64) -> Result<Self, BackendError> {
        if !self.same_layout(target) {
            return Err(BackendError::InvalidState("group layout mismatch".into()));
        }
        let groups = self
            .groups
            .iter()
            .zip(&target.groups)
            .map(|((g, w), (_, t))| (*g, w.iter().zip(t).map(|(w, t)| w + (t - w) * fraction).collect()))
            .collect();
        Ok(Self { groups })
    }

    pub fn distance(&self, other: &ParameterState) -> f64 {
        self.groups
            .iter()
            .zip(&other.groups)
            .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), BackendError> {
        let header = Header {
            groups: self.groups.iter().map(|(id, v)| HeaderGroup { id: *id, len: v.len() }).collect(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (_, v) in &self.groups {
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, BackendError> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        let mut groups = Vec::with_capacity(header.groups.len());
        let mut buf = [0u8; 8];
        for g in header.groups {
            let mut v = Vec::with_capacity(g.len);
            for _ in 0..g.len {
                reader.read_exact(&mut buf)?;
                v.push(f64::from_le_bytes(buf));
            }
            groups.push((g.id, v));
        }
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(BackendError::InvalidState(format!("{} trailing bytes", rest.len())));
        }
        Self::new(groups)
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Self::read_from(fs::File::open(path)?)
    }
}
