//! Named, branch-scoped parameter storage.
//!
//! Every array lives in one flat buffer; gradients use the same layout so an
//! optimizer can walk both in lockstep. Names are dotted paths whose first
//! segment is the branch (`video`, `text`, `audio`, `shared`).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Video,
    Text,
    Audio,
    Shared,
}

impl Branch {
    pub fn of(name: &str) -> Option<Branch> {
        match name.split('.').next()? {
            "video" => Some(Branch::Video),
            "text" => Some(Branch::Text),
            "audio" => Some(Branch::Audio),
            "shared" => Some(Branch::Shared),
            _ => None,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Video => "video",
            Branch::Text => "text",
            Branch::Audio => "audio",
            Branch::Shared => "shared",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Handle to one named array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Initialization scale used by [`ParamStore::init`]; not persisted.
    #[serde(skip)]
    pub init: Init,
}

/// Equality ignores the initializer, which is not persisted.
impl PartialEq for ParamSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.shape == other.shape && self.offset == other.offset
    }
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Init {
    #[default]
    Zero,
    /// Normal with the given standard deviation.
    Normal(f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    index: BTreeMap<String, usize>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new zero-filled array. Panics on duplicate names, which
    /// would indicate a bug in the model builder.
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        assert!(Branch::of(&name).is_some(), "parameter {name} has no branch prefix");
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.data.resize(offset + len, 0.0);
        self.index.insert(name.clone(), self.specs.len());
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), offset, init });
        ParamId(self.specs.len() - 1)
    }

    /// Rebuilds a store from persisted specs and data. Arrays must be laid out
    /// back to back in registration order.
    pub fn from_parts(specs: Vec<ParamSpec>, data: Vec<f64>) -> Result<Self, String> {
        let mut index = BTreeMap::new();
        let mut offset = 0;
        for (i, s) in specs.iter().enumerate() {
            if Branch::of(&s.name).is_none() {
                return Err(format!("parameter {} has no branch prefix", s.name));
            }
            if s.offset != offset {
                return Err(format!("parameter {} at offset {}, expected {offset}", s.name, s.offset));
            }
            if index.insert(s.name.clone(), i).is_some() {
                return Err(format!("duplicate parameter {}", s.name));
            }
            offset += s.len();
        }
        if offset != data.len() {
            return Err(format!("specs cover {offset} values but data holds {}", data.len()));
        }
        Ok(Self { specs, index, data })
    }

    /// Draws every array from its registered initializer.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for spec in &self.specs {
            let slot = &mut self.data[spec.offset..spec.offset + spec.len()];
            match spec.init {
                Init::Zero => slot.fill(0.0),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    for v in slot.iter_mut() {
                        *v = dist.sample(rng);
                    }
                }
            }
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let s = &self.specs[id.0];
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = &self.specs[id.0];
        &mut self.data[s.offset..s.offset + s.len()]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let id = self.id(name)?;
        Some(self.get_mut(id))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Scalar parameter count of one branch.
    pub fn branch_count(&self, branch: Branch) -> usize {
        self.specs.iter().filter(|s| Branch::of(&s.name) == Some(branch)).map(|s| s.len()).sum()
    }

    /// Scalar parameter count of names starting with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.specs.iter().filter(|s| s.name.starts_with(prefix)).map(|s| s.len()).sum()
    }

    /// Flat range of one array, for addressing a gradient buffer.
    pub fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let s = &self.specs[id.0];
        s.offset..s.offset + s.len()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}
