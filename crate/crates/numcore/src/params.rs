//! Named parameter storage and the text checkpoint format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{NumError, NumResult};
use crate::tensor::Tensor;

/// First line of every parameter checkpoint.
pub const CHECKPOINT_MAGIC: &str = "UMAEA-PARAMS v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// All learnable tensors of a model, addressed by id or by dotted name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Panics on a duplicate name, which is
    /// always a construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> NumResult<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Sets the trainable flag on every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Serializes every parameter whose name starts with `prefix`.
    pub fn to_checkpoint_string(&self, prefix: &str) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            let _ = writeln!(out, "{} {} {}", p.name, p.value.rows(), p.value.cols());
            for r in 0..p.value.rows() {
                let row = p.value.row_slice(r);
                for (c, v) in row.iter().enumerate() {
                    if c > 0 {
                        out.push(' ');
                    }
                    // Display for f64 prints the shortest string that round-trips.
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path, prefix: &str) -> NumResult<()> {
        fs::write(path, self.to_checkpoint_string(prefix))?;
        Ok(())
    }

    /// Overwrites values of the named parameters found in `text`. Every block
    /// must name a registered parameter of the same shape. Returns how many
    /// parameters were loaded.
    pub fn load_checkpoint_str(&mut self, text: &str) -> NumResult<usize> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => {
                return Err(NumError::Checkpoint(format!(
                    "missing `{CHECKPOINT_MAGIC}` header"
                )))
            }
        }
        let mut loaded = 0;
        while let Some((lineno, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = header.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(NumError::Checkpoint(format!(
                    "line {}: expected `name rows cols`",
                    lineno + 1
                )));
            }
            let parse_dim = |s: &str| {
                s.parse::<usize>().map_err(|_| {
                    NumError::Checkpoint(format!("line {}: bad dimension `{s}`", lineno + 1))
                })
            };
            let (rows, cols) = (parse_dim(fields[1])?, parse_dim(fields[2])?);
            let id = self.id(fields[0])?;
            if self.params[id.0].value.shape() != [rows, cols] {
                return Err(NumError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint says {rows}x{cols}",
                    fields[0],
                    self.params[id.0].value.shape()
                )));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, line) = lines.next().ok_or_else(|| {
                    NumError::Checkpoint(format!("truncated block for {}", fields[0]))
                })?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| {
                        NumError::Checkpoint(format!("line {}: bad value `{tok}`", ln + 1))
                    })?);
                }
                if data.len() - before != cols {
                    return Err(NumError::Checkpoint(format!(
                        "line {}: expected {cols} values",
                        ln + 1
                    )));
                }
            }
            self.params[id.0].value = Tensor::from_vec(rows, cols, data)?;
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> NumResult<usize> {
        let text = fs::read_to_string(path)?;
        self.load_checkpoint_str(&text)
    }

    /// Snapshot of all values, in id order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}
