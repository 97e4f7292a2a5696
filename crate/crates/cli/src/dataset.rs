//! Single-file dataset container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! little-endian payload. Complex values are stored as `(re, im)` pairs of
//! `f64`.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{data, io_err, CliError, Result};

pub const MAGIC: &[u8; 8] = b"STORMDS\0";
pub const FORMAT: &str = "storm-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Images,
    Kspace,
    Trajectory,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float64,
    Complex128,
}

impl Dtype {
    pub fn element_size(self) -> usize {
        match self {
            Dtype::Float64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub kind: Kind,
    /// What the array holds, e.g. `ground_truth` or `coil_maps`.
    pub content: String,
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub endianness: String,
    pub provenance: Provenance,
    /// Kind-specific metadata.
    #[serde(default)]
    pub attributes: serde_json::Map<String, serde_json::Value>,
}

impl Header {
    pub fn new(kind: Kind, content: &str, dims: Vec<usize>, dtype: Dtype, provenance: Provenance) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            kind,
            content: content.to_string(),
            dims,
            dtype,
            endianness: "little".to_string(),
            provenance,
            attributes: serde_json::Map::new(),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.n_elements() * self.dtype.element_size()
    }

    pub fn attr_f64(&self, key: &str) -> Result<f64> {
        self.attributes
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| CliError::Data(format!("{} dataset lacks attribute `{key}`", self.content)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: Header,
    pub payload: Payload,
}

impl DatasetFile {
    pub fn real(header: Header, values: Vec<f64>) -> Result<Self> {
        let ds = Self {
            header,
            payload: Payload::Real(values),
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn complex(header: Header, values: Vec<Complex64>) -> Result<Self> {
        let ds = Self {
            header,
            payload: Payload::Complex(values),
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        let h = &self.header;
        let (len, dtype) = match &self.payload {
            Payload::Real(v) => (v.len(), Dtype::Float64),
            Payload::Complex(v) => (v.len(), Dtype::Complex128),
        };
        if dtype != h.dtype {
            return data(format!("payload is {dtype:?} but header declares {:?}", h.dtype));
        }
        if len != h.n_elements() {
            return data(format!("payload has {len} elements, dims {:?} need {}", h.dims, h.n_elements()));
        }
        Ok(())
    }

    pub fn as_real(&self) -> Result<&[f64]> {
        match &self.payload {
            Payload::Real(v) => Ok(v),
            Payload::Complex(_) => data(format!("{} dataset is complex, expected real", self.header.content)),
        }
    }

    pub fn as_complex(&self) -> Result<&[Complex64]> {
        match &self.payload {
            Payload::Complex(v) => Ok(v),
            Payload::Real(_) => data(format!("{} dataset is real, expected complex", self.header.content)),
        }
    }

    pub fn expect(&self, kind: Kind) -> Result<&Self> {
        if self.header.kind != kind {
            return data(format!("expected a {kind:?} dataset, found {:?}", self.header.kind));
        }
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.header.payload_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return data("not a dataset file (bad magic)");
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return data(format!("header length {hlen} exceeds file size"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| CliError::Data(format!("malformed header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return data(format!("unsupported format {} v{}", header.format, header.version));
        }
        if header.endianness != "little" {
            return data(format!("unsupported endianness {}", header.endianness));
        }
        let payload = &body[hlen..];
        if payload.len() != header.payload_len() {
            return data(format!(
                "payload is {} bytes, header dims {:?} of {:?} need {}",
                payload.len(),
                header.dims,
                header.dtype,
                header.payload_len()
            ));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
        match header.dtype {
            Dtype::Float64 => Self::real(header, payload.chunks_exact(8).map(f).collect()),
            Dtype::Complex128 => Self::complex(
                header,
                payload
                    .chunks_exact(16)
                    .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
                    .collect(),
            ),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            e => e,
        })
    }
}
