//! Versioned binary containers and content hashing for pipeline artifacts.
//!
//! Matrices are stored as an 8-byte magic, `u64` rows and cols, then
//! little-endian `f64` values in row-major order. Models use their own magic,
//! a kind tag and length-prefixed sections, followed by the JSON fit report.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::{FaModel, FitReport, LatentModel, ModelKind, PcaModel, PpcaModel};

pub const MATRIX_MAGIC: &[u8; 8] = b"SBDOMAT1";
pub const MODEL_MAGIC: &[u8; 8] = b"SBDOMDL1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn matrix_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    put_matrix(&mut out, m);
    out
}

/// Hash of the serialized container, identical to the hash of the file on disk.
pub fn matrix_hash(m: &DMatrix<f64>) -> String {
    sha256_hex(&matrix_bytes(m))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<String> {
    let bytes = matrix_bytes(m);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    r.magic(MATRIX_MAGIC)?;
    let m = r.matrix()?;
    r.finish()?;
    Ok(m)
}

pub fn model_bytes(model: &LatentModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(model.kind().tag());
    let (total, noise, report) = match model {
        LatentModel::Pca(m) => (m.total_variance, m.eigenvalues.clone(), FitReport::default()),
        LatentModel::Ppca(m) => (
            m.total_variance,
            DVector::from_element(1, m.noise_variance),
            m.report.clone(),
        ),
        LatentModel::Fa(m) => (m.total_variance, m.uniquenesses.clone(), m.report.clone()),
    };
    out.extend_from_slice(&total.to_le_bytes());
    put_vector(&mut out, model.mean());
    put_matrix(&mut out, model.loadings());
    put_vector(&mut out, &noise);
    let json = serde_json::to_vec(&report)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<LatentModel> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let tag = r.take(1)?[0];
    let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown model tag {tag}")))?;
    let total = r.f64()?;
    let mean = r.vector()?;
    let loadings = r.matrix()?;
    let noise = r.vector()?;
    let len = r.u64()? as usize;
    let report: FitReport = serde_json::from_slice(r.take(len)?)?;
    r.finish()?;
    if loadings.nrows() != mean.len() {
        return Err(Error::Format("loading rows do not match mean length".into()));
    }
    Ok(match kind {
        ModelKind::Pca => LatentModel::Pca(PcaModel {
            mean,
            components: loadings,
            eigenvalues: noise,
            total_variance: total,
        }),
        ModelKind::Ppca => {
            if noise.len() != 1 {
                return Err(Error::Format("PPCA noise section must hold one value".into()));
            }
            LatentModel::Ppca(PpcaModel::new(mean, loadings, noise[0], total, report)?)
        }
        ModelKind::Fa => LatentModel::Fa(FaModel::new(mean, loadings, noise, total, report)?),
    })
}

pub fn write_model(path: &Path, model: &LatentModel) -> Result<String> {
    let bytes = model_bytes(model)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_model(path: &Path) -> Result<LatentModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn put_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        // reject lengths that cannot fit in what is left
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::Format(format!("section length {n} exceeds container")));
        }
        Ok(n)
    }

    fn vector(&mut self) -> Result<DVector<f64>> {
        let n = self.len()?;
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= (self.bytes.len() - self.pos) / 8)
            .ok_or_else(|| Error::Format(format!("matrix {rows}x{cols} exceeds container")))?;
        let data = self.take(count * 8)?;
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = DMatrix::from_fn(3, 4, |r, c| r as f64 * 0.1 - c as f64 * 1e-300);
        let h = write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
        assert_eq!(h, file_hash(&p).unwrap());
        assert_eq!(h, matrix_hash(&m));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let mut b = matrix_bytes(&m);
        b.truncate(b.len() - 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        fs::write(&p, &b).unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Format(_))));
        b = matrix_bytes(&m);
        b[0] = b'X';
        fs::write(&p, &b).unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Format(_))));
    }

    #[test]
    fn model_round_trip() {
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = DMatrix::from_row_slice(3, 1, &[0.5, -1.0, 2.0]);
        let report = FitReport {
            iterations: 3,
            log_likelihood: -1.5,
            trace: vec![-2.0, -1.5],
            floored: vec![1],
            converged: true,
        };
        let models = [
            LatentModel::Ppca(PpcaModel::new(mean.clone(), w.clone(), 0.1, 7.0, report.clone()).unwrap()),
            LatentModel::Fa(
                FaModel::new(mean.clone(), w.clone(), DVector::from_vec(vec![0.1, 0.2, 0.3]), 7.0, report).unwrap(),
            ),
            LatentModel::Pca(PcaModel {
                mean,
                components: w.normalize(),
                eigenvalues: DVector::from_element(1, 5.0),
                total_variance: 7.0,
            }),
        ];
        for m in models {
            let b = model_bytes(&m).unwrap();
            let back = model_from_bytes(&b).unwrap();
            assert_eq!(back.kind(), m.kind());
            assert_eq!(back.mean(), m.mean());
            assert_eq!(back.loadings(), m.loadings());
            assert_eq!(model_bytes(&back).unwrap(), b);
        }
    }
}
