//! Dense tensors and the NPY 1.0 container used to exchange them.
//!
//! Only little-endian `f32`/`f64` payloads are accepted. Fortran-ordered
//! payloads are transposed to row-major on load; writes are always
//! row-major. Non-finite values are rejected at load time.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(DType::F32),
            "<f8" => Ok(DType::F64),
            other => Err(Error::UnsupportedDtype { descr: other.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// A validated row-major tensor: non-empty shape, every dimension at least
/// one, element count matching the shape, and only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::HeaderShapeMismatch {
                expected: expected * data.dtype().size(),
                found: data.len() * data.dtype().size(),
            });
        }
        if let Some(index) = data.first_non_finite() {
            return Err(Error::NonFiniteData { index });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec<T: Scalar>(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(values.into_iter().map(|v| v.to_f32().unwrap()).collect()),
            DType::F64 => TensorData::F64(values.into_iter().map(Scalar::as_f64).collect()),
        };
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements converted to `T` (widening or narrowing as needed).
    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "shape must have at least one dimension" });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "every dimension must be at least 1" });
    }
    Ok(())
}

/// Parsed container header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
    /// Byte offset of the payload.
    pub data_offset: usize,
}

impl TensorHeader {
    pub fn payload_len(&self) -> usize {
        self.shape.iter().product::<usize>() * self.dtype.size()
    }
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_tensor(&bytes, path)
}

/// Reads only the header; used to validate manifests without loading payloads.
pub fn read_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let path = path.as_ref();
    let mut file = fs::File::open(path)?;
    let mut preamble = [0u8; PREAMBLE_LEN];
    let got = read_up_to(&mut file, &mut preamble)?;
    let header_len = parse_preamble(&preamble[..got], path)?;
    let mut header = vec![0u8; header_len];
    let got = read_up_to(&mut file, &mut header)?;
    if got != header_len {
        return Err(malformed(path, "header truncated"));
    }
    parse_header(&header, PREAMBLE_LEN + header_len, path)
}

fn read_up_to(r: &mut impl std::io::Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let header_len = parse_preamble(bytes, path)?;
    let data_offset = PREAMBLE_LEN + header_len;
    if bytes.len() < data_offset {
        return Err(malformed(path, "header truncated"));
    }
    let header = parse_header(&bytes[PREAMBLE_LEN..data_offset], data_offset, path)?;
    let payload = &bytes[data_offset..];
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(Error::HeaderShapeMismatch { expected, found: payload.len() });
    }

    let data = match header.dtype {
        DType::F32 => TensorData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DType::F64 => TensorData::F64(
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
    };
    let data = if header.fortran_order && header.shape.len() > 1 {
        match data {
            TensorData::F32(v) => TensorData::F32(fortran_to_c(&v, &header.shape)),
            TensorData::F64(v) => TensorData::F64(fortran_to_c(&v, &header.shape)),
        }
    } else {
        data
    };
    Tensor::new(header.shape, data)
}

fn parse_preamble(bytes: &[u8], path: &Path) -> Result<usize> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(malformed(path, "truncated preamble"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::UnsupportedVersion { path: path.to_path_buf(), major, minor });
    }
    Ok(u16::from_le_bytes([bytes[8], bytes[9]]) as usize)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader { path: path.to_path_buf(), reason: reason.into() }
}

fn parse_header(raw: &[u8], data_offset: usize, path: &Path) -> Result<TensorHeader> {
    let text = std::str::from_utf8(raw).map_err(|_| malformed(path, "header is not ASCII"))?;
    let body = text.trim_end_matches(['\n', ' ', '\0']).trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| malformed(path, "header is not a dict literal"))?;

    let descr = dict_value(body, "descr").ok_or_else(|| malformed(path, "missing 'descr'"))?;
    let descr = unquote(descr).ok_or_else(|| malformed(path, "'descr' is not a string"))?;
    let dtype = DType::from_descr(descr)?;

    let fortran_order = match dict_value(body, "fortran_order") {
        Some(v) if v.starts_with("True") => true,
        Some(v) if v.starts_with("False") => false,
        _ => return Err(malformed(path, "missing or invalid 'fortran_order'")),
    };

    let shape_src = dict_value(body, "shape").ok_or_else(|| malformed(path, "missing 'shape'"))?;
    let shape = parse_shape(shape_src).ok_or_else(|| malformed(path, "invalid 'shape' tuple"))?;
    check_shape(&shape)?;

    Ok(TensorHeader { dtype, fortran_order, shape, data_offset })
}

/// Returns the text following `'key':`, left-trimmed.
fn dict_value<'a>(body: &'a str, key: &str) -> Option<&'a str> {
    for quote in ['\'', '"'] {
        let needle = format!("{quote}{key}{quote}");
        if let Some(pos) = body.find(&needle) {
            let rest = body[pos + needle.len()..].trim_start();
            return rest.strip_prefix(':').map(str::trim_start);
        }
    }
    None
}

fn unquote(s: &str) -> Option<&str> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let rest = &s[1..];
    rest.find(q).map(|end| &rest[..end])
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    let inner = s.strip_prefix('(')?;
    let inner = &inner[..inner.find(')')?];
    inner
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.trim_end_matches('L').parse().ok())
        .collect()
}

fn fortran_to_c<E: Copy>(src: &[E], shape: &[usize]) -> Vec<E> {
    let mut c_strides = vec![1usize; shape.len()];
    for k in (0..shape.len() - 1).rev() {
        c_strides[k] = c_strides[k + 1] * shape[k + 1];
    }
    let mut out = src.to_vec();
    for (f, &value) in src.iter().enumerate() {
        let mut rem = f;
        let mut c = 0;
        for (dim, stride) in shape.iter().zip(&c_strides) {
            c += (rem % dim) * stride;
            rem /= dim;
        }
        out[c] = value;
    }
    out
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let shape = match t.shape.as_slice() {
        [d] => format!("({d},)"),
        dims => format!("({})", dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}", t.dtype().descr());
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padded = unpadded.div_ceil(HEADER_ALIGN) * HEADER_ALIGN;
    header.extend(std::iter::repeat_n(' ', padded - unpadded));
    header.push('\n');

    let mut out = Vec::with_capacity(padded + t.len() * t.dtype().size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_tensor(t))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn container(descr: &str, fortran: bool, shape: &str, payload: &[u8]) -> Vec<u8> {
        let order = if fortran { "True" } else { "False" };
        let mut header = format!("{{'descr': '{descr}', 'fortran_order': {order}, 'shape': {shape}, }}");
        while !(PREAMBLE_LEN + header.len() + 1).is_multiple_of(HEADER_ALIGN) {
            header.push(' ');
        }
        header.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    fn f64_bytes(v: &[f64]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn decode(bytes: &[u8]) -> Result<Tensor> {
        decode_tensor(bytes, Path::new("mem.npy"))
    }

    #[test]
    fn identity_2x2() {
        let t = decode(&container("<f8", false, "(2, 2)", &f64_bytes(&[1., 2., 3., 4.]))).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.to_vec::<f64>(), vec![1., 2., 3., 4.]);
    }

    #[test]
    fn payload_size_mismatch() {
        let payload: Vec<u8> = (0..15).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let err = decode(&container("<f4", false, "(2, 2)", &payload)).unwrap_err();
        assert!(matches!(err, Error::HeaderShapeMismatch { expected: 16, found: 60 }), "{err}");
    }

    #[test]
    fn column_major_is_transposed() {
        let t = decode(&container("<f8", true, "(2, 3)", &f64_bytes(&[1., 4., 2., 5., 3., 6.]))).unwrap();
        assert_eq!(t.to_vec::<f64>(), vec![1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn column_major_matches_index_oracle_3d() {
        let shape = [2usize, 3, 4];
        let n: usize = shape.iter().product();
        // element at (i,j,k) carries value 100i + 10j + k
        let mut fortran = vec![0.0; n];
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    fortran[i + 2 * (j + 3 * k)] = (100 * i + 10 * j + k) as f64;
                }
            }
        }
        let t = decode(&container("<f8", true, "(2, 3, 4)", &f64_bytes(&fortran))).unwrap();
        let v = t.to_vec::<f64>();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(v[(i * 3 + j) * 4 + k], (100 * i + 10 * j + k) as f64);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(decode(b"\x93NUMPX\x01\x00"), Err(Error::BadMagic { .. })));
        assert!(matches!(decode(b""), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode(&container("<i4", false, "(1,)", &[0; 4])),
            Err(Error::UnsupportedDtype { .. })
        ));
        assert!(matches!(
            decode(&container(">f8", false, "(1,)", &[0; 8])),
            Err(Error::UnsupportedDtype { .. })
        ));
        assert!(matches!(
            decode(&container("<f8", false, "(2,)", &f64_bytes(&[1.0, f64::NAN]))),
            Err(Error::NonFiniteData { index: 1 })
        ));
        assert!(matches!(
            decode(&container("<f8", false, "(1,)", &f64_bytes(&[f64::INFINITY]))),
            Err(Error::NonFiniteData { index: 0 })
        ));
        assert!(matches!(decode(&container("<f8", false, "()", &[0; 8])), Err(Error::InvalidShape { .. })));
        assert!(matches!(decode(&container("<f8", false, "(0, 3)", &[])), Err(Error::InvalidShape { .. })));
        let mut v2 = container("<f8", false, "(1,)", &[0; 8]);
        v2[6] = 2;
        assert!(matches!(decode(&v2), Err(Error::UnsupportedVersion { major: 2, .. })));
    }

    #[test]
    fn header_is_aligned() {
        let t = Tensor::from_vec(vec![3, 1, 7], vec![0.5f32; 21]).unwrap();
        let bytes = encode_tensor(&t);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((PREAMBLE_LEN + header_len) % 64, 0);
        assert_eq!(bytes[PREAMBLE_LEN + header_len - 1], b'\n');
    }

    #[test]
    fn zero_dim_rejected_before_write() {
        let err = Tensor::new(vec![0, 3], TensorData::F64(vec![])).unwrap_err();
        assert!(matches!(err, Error::InvalidShape { .. }));
    }

    #[test]
    fn one_dim_shape_has_trailing_comma() {
        let t = Tensor::from_vec(vec![4], vec![1.0f64; 4]).unwrap();
        let bytes = encode_tensor(&t);
        let text = String::from_utf8_lossy(&bytes[PREAMBLE_LEN..]);
        assert!(text.contains("'shape': (4,)"));
        assert_eq!(decode(&bytes).unwrap(), t);
    }
}
