//! Named trainable parameters and the text checkpoint format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use super::matrix::Matrix;

/// Uniform init range for weight matrices; biases start at zero.
pub const INIT_RANGE: f64 = 0.08;

const CHECKPOINT_HEADER: &str = "LCF-ATEPC-CKPT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header: {0:?}")]
    BadHeader(String),
    #[error("checkpoint line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Matrix,
    pub trainable: bool,
}

/// Insertion-ordered parameter set; iteration order is the creation order,
/// which is fixed by the model wiring, so training is reproducible.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
    seed: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self { params: IndexMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, value: Matrix) {
        let prev = self.params.insert(name.to_string(), Param { value, trainable: true });
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.add(name, Matrix::zeros(rows, cols));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Matrix {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}")).value
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Sum of squares over every trainable parameter.
    pub fn sum_squares(&self) -> f64 {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{CHECKPOINT_HEADER}")?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "params {}", self.params.len())?;
        for (name, param) in &self.params {
            let (rows, cols) = param.value.shape();
            write!(w, "{name} {rows} {cols} ")?;
            let mut first = true;
            for v in param.value.data() {
                if !first {
                    write!(w, ",")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();

        let header = next_line(&mut lines)?;
        if header.1.trim() != CHECKPOINT_HEADER {
            return Err(CheckpointError::BadHeader(header.1));
        }
        let seed_line = next_line(&mut lines)?;
        let seed = parse_kv(&seed_line, "seed")?;
        let count_line = next_line(&mut lines)?;
        let count: u64 = parse_kv(&count_line, "params")?;

        let mut store = ParameterStore::new(seed);
        for _ in 0..count {
            let (lineno, line) = next_line(&mut lines)?;
            let bad = |reason: &str| CheckpointError::BadRecord { line: lineno + 1, reason: reason.to_string() };
            let mut fields = line.split(' ');
            let name = fields.next().ok_or_else(|| bad("missing name"))?;
            let rows: usize =
                fields.next().ok_or_else(|| bad("missing rows"))?.parse().map_err(|_| bad("bad rows"))?;
            let cols: usize =
                fields.next().ok_or_else(|| bad("missing cols"))?.parse().map_err(|_| bad("bad cols"))?;
            let values = fields.next().ok_or_else(|| bad("missing values"))?;
            let data: Vec<f64> = values
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad value"))?;
            if data.len() != rows * cols {
                return Err(bad(&format!("expected {} values, got {}", rows * cols, data.len())));
            }
            store.add(name, Matrix::from_vec(rows, cols, data));
        }
        Ok(store)
    }

    /// Check that `self` provides exactly the parameters (names and shapes)
    /// that `expected` declares.
    pub fn validate_against(&self, expected: &ParameterStore) -> Result<(), CheckpointError> {
        for (name, param) in expected.iter() {
            let Some(found) = self.params.get(name) else {
                return Err(CheckpointError::Mismatch(format!("missing parameter {name:?}")));
            };
            if found.value.shape() != param.value.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    found.value.shape(),
                    param.value.shape()
                )));
            }
        }
        if self.params.len() != expected.len() {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                expected.len()
            )));
        }
        Ok(())
    }
}

fn next_line(
    lines: &mut impl Iterator<Item = (usize, std::io::Result<String>)>,
) -> Result<(usize, String), CheckpointError> {
    match lines.next() {
        Some((n, Ok(line))) => Ok((n, line)),
        Some((n, Err(e))) => Err(CheckpointError::BadRecord { line: n + 1, reason: e.to_string() }),
        None => Err(CheckpointError::BadHeader("truncated checkpoint".to_string())),
    }
}

fn parse_kv<T: std::str::FromStr>(line: &(usize, String), key: &str) -> Result<T, CheckpointError> {
    let (n, text) = line;
    let err = || CheckpointError::BadRecord { line: n + 1, reason: format!("expected `{key} <value>`") };
    let rest = text.strip_prefix(key).ok_or_else(err)?.trim();
    rest.parse().map_err(|_| err())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParameterStore::new(7);
        store.add("a.w", Matrix::uniform(3, 4, -INIT_RANGE, INIT_RANGE, &mut rng));
        store.add("a.b", Matrix::zeros(1, 4));
        store.add("b.w", Matrix::from_vec(1, 3, vec![1.0 / 3.0, -0.0, f64::MIN_POSITIVE]));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        store.save(&path).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();

        assert_eq!(loaded.seed(), 7);
        assert_eq!(loaded.len(), 3);
        for (name, param) in store.iter() {
            assert_eq!(loaded.get(name), &param.value, "param {name} not bit-identical");
        }
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(ParameterStore::load(&path), Err(CheckpointError::BadHeader(_))));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new(0);
        store.add_zeros("w", 1, 1);
        store.add_zeros("w", 1, 1);
    }
}
