//! Tensor files: little-endian `i32` values in a `.bin` file with a JSON
//! sidecar (`<file>.json`) holding the shape and precision.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitserial::Precision;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub shape: Vec<usize>,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorFile {
    pub meta: TensorMeta,
    pub values: Vec<i64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, precision: Precision, values: Vec<i64>) -> Result<Self> {
        let t = TensorFile { meta: TensorMeta { shape, precision }, values };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let n: usize = self.meta.shape.iter().product();
        if n != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {n} values, found {}",
                self.meta.shape,
                self.values.len()
            )));
        }
        self.values.iter().try_for_each(|&v| self.meta.precision.check(v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|&v| (v as i32).to_le_bytes()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: TensorMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let bytes = std::fs::read(path)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format(format!("{} bytes is not a whole number of i32 values", bytes.len())));
        }
        let values = bytes.chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64).collect();
        let t = TensorFile { meta, values };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let t = TensorFile::new(vec![2, 3], Precision::signed(4).unwrap(), vec![-8, 7, 0, 1, -1, 3]).unwrap();
        t.write(&p).unwrap();
        assert_eq!(TensorFile::read(&p).unwrap(), t);
        assert!(sidecar_path(&p).ends_with("x.bin.json"));
    }

    #[test]
    fn rejects_out_of_range() {
        let e = TensorFile::new(vec![1], Precision::unsigned(2).unwrap(), vec![4]).unwrap_err();
        assert_eq!(e.code(), "OutOfRange");
    }
}
