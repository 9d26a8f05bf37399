use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

pub const MAGIC: &[u8; 8] = b"HELDTNS1";
const FIXED_HEADER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }

    fn code(self) -> u32 {
        match self {
            DType::Float32 => 0,
            DType::Float64 => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::Float32),
            1 => Ok(DType::Float64),
            other => Err(Error::Malformed(format!("unknown dtype code {other}"))),
        }
    }
}

/// An n-dimensional array as stored on disk. Values are held as `f64` in
/// memory; float32 tensors only ever contain values exactly representable
/// in `f32`, so writing them back is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dtype: DType, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Malformed(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor payload"));
        }
        let data = match dtype {
            DType::Float64 => data,
            DType::Float32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        Ok(Self { dtype, dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(m.row(i).iter().copied());
        }
        Self {
            dtype: DType::Float64,
            dims: vec![r, c],
            data,
        }
    }

    pub fn from_vector(v: &Vector) -> Self {
        Self {
            dtype: DType::Float64,
            dims: vec![v.len()],
            data: v.iter().copied().collect(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self.dims.as_slice() {
            &[r, c] => Ok(Matrix::from_row_slice(r, c, &self.data)),
            &[n] => Ok(Matrix::from_row_slice(n, 1, &self.data)),
            other => Err(Error::Malformed(format!("expected rank-2 tensor, got dims {other:?}"))),
        }
    }

    pub fn into_vector(self) -> Result<Vector> {
        match self.dims.as_slice() {
            &[_] => Ok(Vector::from_vec(self.data)),
            &[r, 1] | &[1, r] => {
                debug_assert_eq!(r, self.data.len());
                Ok(Vector::from_vec(self.data))
            }
            other => Err(Error::Malformed(format!("expected rank-1 tensor, got dims {other:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + 8 * self.dims.len() + self.dtype.width() * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self.dtype {
            DType::Float64 => {
                for v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            DType::Float32 => {
                for v in &self.data {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FIXED_HEADER {
            return Err(Error::Malformed(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let dtype = DType::from_code(u32::from_le_bytes(bytes[8..12].try_into().unwrap()))?;
        let rank = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let dims_end = rank
            .checked_mul(8)
            .and_then(|d| d.checked_add(FIXED_HEADER))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Malformed(format!("rank {rank} overruns the file")))?;
        let mut dims = Vec::with_capacity(rank);
        for chunk in bytes[FIXED_HEADER..dims_end].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().unwrap());
            dims.push(usize::try_from(d).map_err(|_| Error::Malformed(format!("dim {d} too large")))?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed("element count overflows".into()))?;
        let payload = &bytes[dims_end..];
        if Some(payload.len()) != count.checked_mul(dtype.width()) {
            return Err(Error::Malformed(format!(
                "payload has {} bytes, dims {dims:?} of {dtype:?} need {}",
                payload.len(),
                count.saturating_mul(dtype.width())
            )));
        }
        let data: Vec<f64> = match dtype {
            DType::Float64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::Float32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Ok(Self { dtype, dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&tensor.to_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    write_tensor(path, &Tensor::from_matrix(m))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    read_tensor(path)?.into_matrix()
}

pub fn write_vector(path: impl AsRef<Path>, v: &Vector) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector"));
    }
    write_tensor(path, &Tensor::from_vector(v))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vector> {
    read_tensor(path)?.into_vector()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eye.tns");
        let eye = Matrix::identity(2, 2);
        write_matrix(&p, &eye).unwrap();
        let bytes = fs::read(&p).unwrap();
        // fixed header + two dims + four f64 words
        assert_eq!(bytes.len(), 16 + 2 * 8 + 4 * 8);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(read_matrix(&p).unwrap(), eye);
    }

    #[test]
    fn empty_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.tns");
        let m = Matrix::zeros(0, 5);
        write_matrix(&p, &m).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(back.shape(), (0, 5));
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = Tensor::from_matrix(&Matrix::identity(2, 2)).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = Tensor::from_matrix(&Matrix::identity(3, 3)).to_bytes();
        let err = Tensor::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Malformed(_)));
    }

    #[test]
    fn rejects_huge_rank() {
        let mut bytes = Vec::from(&MAGIC[..]);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Malformed(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_tensor("/nonexistent/dir/x.tns").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_element(1, 1, f64::NAN);
        assert!(write_matrix(dir.path().join("nan.tns"), &m).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (prop::collection::vec(0usize..5, 0..4), any::<bool>()).prop_flat_map(|(dims, f32s)| {
            let n: usize = dims.iter().product();
            let dtype = if f32s { DType::Float32 } else { DType::Float64 };
            prop::collection::vec(-1e6f64..1e6, n).prop_map(move |data| Tensor::new(dtype, dims.clone(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn bytes_round_trip(t in arb_tensor()) {
            let bytes = t.to_bytes();
            let back = Tensor::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
