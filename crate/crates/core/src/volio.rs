//! Single-file NIfTI-1 reading and writing.
//!
//! Only the header fields needed to reconstruct a 3D grid are consumed:
//! `sizeof_hdr`, `dim`, `datatype`, `bitpix`, `pixdim`, `vox_offset`,
//! `scl_slope`, `scl_inter` and `magic`. Everything else is ignored on read
//! and zero-filled on write. Gzip-compressed input is detected by its magic
//! bytes and decompressed transparently; output is never compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, LabelMask, Volume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
const DEFAULT_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

/// Attenuation values outside this range are suspicious but still loaded.
pub const PLAUSIBLE_HU: (f64, f64) = (-2000.0, 10000.0);

#[derive(Debug, Error)]
pub enum VolioError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected single-file \"n+1\"")]
    BadMagic([u8; 4]),
    #[error("sizeof_hdr is not 348 in either byte order")]
    BadHeaderSize,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bitpix {bitpix} does not match datatype {datatype:?}")]
    BitpixMismatch { datatype: Datatype, bitpix: i16 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("file truncated: need {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("value {value} cannot be stored as {datatype:?}")]
    RangeOverflow { value: f64, datatype: Datatype },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, VolioError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            other => return Err(VolioError::UnsupportedDatatype(other)),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            Datatype::Uint8 => (0.0, u8::MAX as f64),
            Datatype::Int16 => (i16::MIN as f64, i16::MAX as f64),
            Datatype::Int32 => (i32::MIN as f64, i32::MAX as f64),
            Datatype::Float32 => (f32::MIN as f64, f32::MAX as f64),
        }
    }

    fn is_integer(self) -> bool {
        self != Datatype::Float32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Fixed-offset field access in either byte order.
struct Fields<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        b
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.bytes(at)),
            Endian::Big => i16::from_be_bytes(self.bytes(at)),
        }
    }

    fn i32(&self, at: usize) -> i32 {
        match self.endian {
            Endian::Little => i32::from_le_bytes(self.bytes(at)),
            Endian::Big => i32::from_be_bytes(self.bytes(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.bytes(at)),
            Endian::Big => f32::from_be_bytes(self.bytes(at)),
        }
    }
}

fn detect_endian(buf: &[u8]) -> Result<Endian> {
    let raw: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
    if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Ok(Endian::Little)
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Ok(Endian::Big)
    } else {
        Err(VolioError::BadHeaderSize)
    }
}

/// Parse an uncompressed single-file NIfTI-1 image held in memory.
pub fn decode(buf: &[u8]) -> Result<Volume> {
    if buf.len() < HEADER_SIZE {
        return Err(VolioError::TruncatedFile {
            expected: HEADER_SIZE,
            actual: buf.len(),
        });
    }
    let endian = detect_endian(buf)?;
    let h = Fields { buf, endian };

    let magic: [u8; 4] = h.bytes(344);
    if &magic != MAGIC {
        return Err(VolioError::BadMagic(magic));
    }

    let datatype = Datatype::from_code(h.i16(70))?;
    let bitpix = h.i16(72);
    if bitpix as usize != datatype.bytes() * 8 {
        return Err(VolioError::BitpixMismatch { datatype, bitpix });
    }

    let dim: Vec<i16> = (0..8).map(|i| h.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    let squeezable = ndim == 4 && dim[4] == 1;
    if ndim != 3 && !squeezable {
        return Err(VolioError::DimensionMismatch(format!(
            "expected a 3D image, dim[0] = {ndim} with dim[4] = {}",
            dim[4]
        )));
    }
    if dim[1..=3].iter().any(|&d| d <= 0) {
        return Err(VolioError::DimensionMismatch(format!(
            "non-positive extent in {:?}",
            &dim[1..=3]
        )));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let pixdim: Vec<f32> = (0..4).map(|i| h.f32(76 + 4 * i)).collect();
    let spacing = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64];
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(VolioError::InvalidHeader(format!(
            "pixdim spacing {spacing:?} must be positive"
        )));
    }

    let vox_offset = h.f32(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(VolioError::InvalidHeader(format!(
            "vox_offset {vox_offset} is not a byte offset past the header"
        )));
    }
    let offset = vox_offset as usize;

    let mut slope = h.f32(112) as f64;
    let inter = h.f32(116) as f64;
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let count = dims[0] * dims[1] * dims[2];
    let payload = count * datatype.bytes();
    let expected = offset + payload;
    if buf.len() < expected {
        return Err(VolioError::TruncatedFile {
            expected,
            actual: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(VolioError::DimensionMismatch(format!(
            "declared dims {dims:?} account for {expected} bytes but the file holds {}",
            buf.len()
        )));
    }

    let data = h.buf[offset..expected]
        .chunks_exact(datatype.bytes())
        .map(|c| {
            let f = Fields { buf: c, endian };
            let raw = match datatype {
                Datatype::Uint8 => c[0] as f64,
                Datatype::Int16 => f.i16(0) as f64,
                Datatype::Int32 => f.i32(0) as f64,
                Datatype::Float32 => f.f32(0) as f64,
            };
            slope * raw + inter
        })
        .collect();

    Ok(Volume::new(dims, spacing, data)?)
}

/// Serialize a volume as a single-file NIfTI-1 image with unit scaling.
pub fn encode(v: &Volume, datatype: Datatype, endian: Endian) -> Result<Vec<u8>> {
    let (lo, hi) = datatype.range();
    for &value in v.data() {
        let fits = value.is_finite()
            && value >= lo
            && value <= hi
            && (!datatype.is_integer() || value.fract() == 0.0);
        if !fits {
            return Err(VolioError::RangeOverflow { value, datatype });
        }
    }

    let dims = v.dims();
    for &d in &dims {
        if d > i16::MAX as usize {
            return Err(VolioError::DimensionMismatch(format!(
                "extent {d} exceeds the NIfTI-1 limit"
            )));
        }
    }

    let mut out = vec![0u8; DEFAULT_VOX_OFFSET + v.len() * datatype.bytes()];
    let put = |out: &mut [u8], at: usize, bytes: &[u8]| {
        out[at..at + bytes.len()].copy_from_slice(bytes);
    };
    macro_rules! enc {
        ($x:expr) => {
            match endian {
                Endian::Little => $x.to_le_bytes(),
                Endian::Big => $x.to_be_bytes(),
            }
        };
    }

    put(&mut out, 0, &enc!(HEADER_SIZE as i32));
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut out, 40 + 2 * i, &enc!(*d));
    }
    put(&mut out, 70, &enc!(datatype.code()));
    put(&mut out, 72, &enc!((datatype.bytes() * 8) as i16));
    let s = v.spacing();
    let pixdim: [f32; 8] = [1.0, s[0] as f32, s[1] as f32, s[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut out, 76 + 4 * i, &enc!(*p));
    }
    put(&mut out, 108, &enc!(DEFAULT_VOX_OFFSET as f32));
    put(&mut out, 112, &enc!(1.0f32));
    put(&mut out, 116, &enc!(0.0f32));
    put(&mut out, 344, MAGIC);

    let width = datatype.bytes();
    for (i, &value) in v.data().iter().enumerate() {
        let at = DEFAULT_VOX_OFFSET + i * width;
        match datatype {
            Datatype::Uint8 => out[at] = value as u8,
            Datatype::Int16 => put(&mut out, at, &enc!(value as i16)),
            Datatype::Int32 => put(&mut out, at, &enc!(value as i32)),
            Datatype::Float32 => put(&mut out, at, &enc!(value as f32)),
        }
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolioError + '_ {
    move |source| VolioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a `.nii` or `.nii.gz` file.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(io_err(path))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        out
    } else {
        raw
    };
    let v = decode(&bytes)?;
    let (lo, hi) = PLAUSIBLE_HU;
    let implausible = v.data().iter().filter(|x| **x < lo || **x > hi).count();
    if implausible > 0 {
        log::warn!(
            "{}: {implausible} voxels outside the plausible range [{lo}, {hi}]",
            path.display()
        );
    }
    Ok(v)
}

/// Read a file and interpret its voxels as non-negative integer labels.
pub fn read_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    to_label_mask(&v)
}

pub fn to_label_mask(v: &Volume) -> Result<LabelMask> {
    if let Some(bad) = v
        .data()
        .iter()
        .find(|x| x.fract() != 0.0 || **x < 0.0 || **x > u32::MAX as f64)
    {
        return Err(VolioError::InvalidHeader(format!(
            "label volume holds non-label value {bad}"
        )));
    }
    Ok(v.map(|&x| x as u32))
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v, datatype, Endian::Little)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_label_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let max = mask.data().iter().copied().max().unwrap_or(0);
    let datatype = if max <= u8::MAX as u32 {
        Datatype::Uint8
    } else if max <= i16::MAX as u32 {
        Datatype::Int16
    } else {
        Datatype::Int32
    };
    write_volume(&mask.map(|&l| l as f64), path, datatype)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(datatype: Datatype, slope: f32, inter: f32, payload: &[u8]) -> Vec<u8> {
        let mut buf = vec![0u8; DEFAULT_VOX_OFFSET];
        buf[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
            buf[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        buf[70..72].copy_from_slice(&datatype.code().to_le_bytes());
        buf[72..74].copy_from_slice(&((datatype.bytes() * 8) as i16).to_le_bytes());
        for (i, p) in [1.0f32, 1.0, 1.0, 1.0].iter().enumerate() {
            buf[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        buf[108..112].copy_from_slice(&352f32.to_le_bytes());
        buf[112..116].copy_from_slice(&slope.to_le_bytes());
        buf[116..120].copy_from_slice(&inter.to_le_bytes());
        buf[344..348].copy_from_slice(MAGIC);
        buf.extend_from_slice(payload);
        buf
    }

    #[test]
    fn reads_uint8_fixture_in_x_fastest_order() {
        let buf = fixture(Datatype::Uint8, 0.0, 0.0, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let v = decode(&buf).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(*v.get(1, 0, 1), 5.0);
    }

    #[test]
    fn applies_slope_and_intercept() {
        let payload: Vec<u8> = std::iter::repeat(3i16.to_le_bytes())
            .take(8)
            .flatten()
            .collect();
        let v = decode(&fixture(Datatype::Int16, 2.0, -1.0, &payload)).unwrap();
        assert!(v.data().iter().all(|&x| x == 5.0));
    }

    #[test]
    fn rejects_two_file_magic() {
        let mut buf = fixture(Datatype::Uint8, 0.0, 0.0, &[0; 8]);
        buf[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode(&buf), Err(VolioError::BadMagic(_))));
    }

    #[test]
    fn rejects_unsupported_datatype() {
        let mut buf = fixture(Datatype::Uint8, 0.0, 0.0, &[0; 8]);
        buf[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(
            decode(&buf),
            Err(VolioError::UnsupportedDatatype(64))
        ));
    }

    #[test]
    fn size_checks() {
        let buf = fixture(Datatype::Uint8, 0.0, 0.0, &[0; 7]);
        assert!(matches!(
            decode(&buf),
            Err(VolioError::TruncatedFile { .. })
        ));
        let buf = fixture(Datatype::Uint8, 0.0, 0.0, &[0; 9]);
        assert!(matches!(
            decode(&buf),
            Err(VolioError::DimensionMismatch(_))
        ));
        assert!(matches!(
            decode(&[0u8; 100]),
            Err(VolioError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn squeezes_singleton_fourth_dimension() {
        let mut buf = fixture(Datatype::Uint8, 0.0, 0.0, &[1; 8]);
        buf[40..42].copy_from_slice(&4i16.to_le_bytes());
        assert_eq!(decode(&buf).unwrap().dims(), [2, 2, 2]);
        buf[48..50].copy_from_slice(&2i16.to_le_bytes());
        assert!(matches!(
            decode(&buf),
            Err(VolioError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn uint8_overflow_is_an_error() {
        let v = Volume::new([2, 1, 1], [1.0; 3], vec![1.0, 300.0]).unwrap();
        assert!(matches!(
            encode(&v, Datatype::Uint8, Endian::Little),
            Err(VolioError::RangeOverflow { value, .. }) if value == 300.0
        ));
        let v = Volume::new([1, 1, 1], [1.0; 3], vec![1.5]).unwrap();
        assert!(encode(&v, Datatype::Int16, Endian::Little).is_err());
    }

    #[test]
    fn round_trip_of_fixture_is_bit_identical() {
        let buf = fixture(Datatype::Uint8, 0.0, 0.0, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let v = decode(&buf).unwrap();
        let again = encode(&v, Datatype::Uint8, Endian::Little).unwrap();
        assert_eq!(&again[DEFAULT_VOX_OFFSET..], &buf[DEFAULT_VOX_OFFSET..]);
        assert_eq!(decode(&again).unwrap(), v);
    }

    #[test]
    fn gzip_input_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let v = Volume::new([2, 2, 2], [0.5, 0.75, 2.0], (0..8).map(f64::from).collect())
            .unwrap();
        let raw = encode(&v, Datatype::Int16, Endian::Little).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(&raw).unwrap();
        fs::write(&path, gz.finish().unwrap()).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn label_mask_rejects_fractional_values() {
        let v = Volume::new([1, 1, 2], [1.0; 3], vec![1.0, 2.5]).unwrap();
        assert!(to_label_mask(&v).is_err());
    }
}
