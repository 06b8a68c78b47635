//! NIfTI-1 reading and writing.
//!
//! Only 3D volumes are supported. The on-disk fastest axis (`dim[1]`) maps to
//! W, `dim[3]` to D; spacing is carried as (sz, sy, sx) = (pixdim[3], pixdim[2],
//! pixdim[1]). Endianness is detected from `sizeof_hdr`.

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::volume::{Dims, ImageVolume, LabelVolume, Volume, NUM_CLASSES};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DEFAULT_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const QOFFSET_X: usize = 268;
    pub const MAGIC: usize = 344;
}

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIRED: &[u8; 4] = b"ni1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Int8,
    UInt8,
    Int16,
    UInt16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            256 => DataType::Int8,
            2 => DataType::UInt8,
            4 => DataType::Int16,
            512 => DataType::UInt16,
            8 => DataType::Int32,
            16 => DataType::Float32,
            64 => DataType::Float64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            DataType::Int8 => 256,
            DataType::UInt8 => 2,
            DataType::Int16 => 4,
            DataType::UInt16 => 512,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::Int8 | DataType::UInt8 => 1,
            DataType::Int16 | DataType::UInt16 => 2,
            DataType::Int32 | DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

/// The header fields this crate consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qoffset: [f32; 3],
    pub magic: [u8; 4],
    pub endianness: Endianness,
}

impl NiftiHeader {
    /// Parses and validates the first 348 bytes.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::TruncatedFile {
                needed: HEADER_SIZE,
                available: bytes.len(),
            });
        }
        let endianness = if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
            Endianness::Little
        } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
            Endianness::Big
        } else {
            return Err(Error::BadMagic);
        };
        match endianness {
            Endianness::Little => Self::parse_with::<LittleEndian>(bytes, endianness),
            Endianness::Big => Self::parse_with::<BigEndian>(bytes, endianness),
        }
    }

    fn parse_with<E: ByteOrder>(b: &[u8], endianness: Endianness) -> Result<Self> {
        use offsets::*;
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&b[MAGIC..MAGIC + 4]);
        if &magic != MAGIC_SINGLE && &magic != MAGIC_PAIRED {
            return Err(Error::BadMagic);
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = E::read_i16(&b[DIM + 2 * i..]);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = E::read_f32(&b[PIXDIM + 4 * i..]);
        }
        let qoffset = [
            E::read_f32(&b[QOFFSET_X..]),
            E::read_f32(&b[QOFFSET_X + 4..]),
            E::read_f32(&b[QOFFSET_X + 8..]),
        ];
        Ok(NiftiHeader {
            sizeof_hdr: E::read_i32(&b[SIZEOF_HDR..]),
            dim,
            datatype: E::read_i16(&b[DATATYPE..]),
            bitpix: E::read_i16(&b[BITPIX..]),
            pixdim,
            vox_offset: E::read_f32(&b[VOX_OFFSET..]),
            scl_slope: E::read_f32(&b[SCL_SLOPE..]),
            scl_inter: E::read_f32(&b[SCL_INTER..]),
            qoffset,
            magic,
            endianness,
        })
    }

    pub fn is_single_file(&self) -> bool {
        &self.magic == MAGIC_SINGLE
    }

    /// Validated (D, H, W). Higher dimensions are accepted only when they are 1.
    pub fn dims(&self) -> Result<Dims> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::UnsupportedDimensions(format!("dim[0] = {ndim}")));
        }
        let ndim = ndim as usize;
        if ndim > 3 && self.dim[4..=ndim].iter().any(|&d| d != 1) {
            return Err(Error::UnsupportedDimensions(format!(
                "only 3D volumes are supported, dim = {:?}",
                &self.dim[..=ndim]
            )));
        }
        let extent = |axis: usize| -> Result<usize> {
            if axis > ndim {
                return Ok(1);
            }
            let d = self.dim[axis];
            if d < 1 {
                return Err(Error::UnsupportedDimensions(format!("dim[{axis}] = {d}")));
            }
            Ok(d as usize)
        };
        Ok(Dims::new(extent(3)?, extent(2)?, extent(1)?))
    }

    /// (sz, sy, sx) in mm.
    pub fn spacing(&self) -> Result<[f64; 3]> {
        let s = [self.pixdim[3] as f64, self.pixdim[2] as f64, self.pixdim[1] as f64];
        super::volume::check_spacing(s)?;
        Ok(s)
    }

    pub fn datatype(&self) -> Result<DataType> {
        DataType::from_code(self.datatype)
    }

    fn data_offset(&self) -> Result<usize> {
        let off = self.vox_offset;
        if !off.is_finite() || off < 0.0 || off.fract() != 0.0 || off > u32::MAX as f32 {
            return Err(Error::format("NIfTI header", format!("vox_offset = {off}")));
        }
        let off = off as usize;
        if self.is_single_file() && off < DEFAULT_VOX_OFFSET {
            return Err(Error::format("NIfTI header", format!("vox_offset {off} inside header")));
        }
        Ok(off)
    }
}

struct Decoded {
    dims: Dims,
    spacing: [f64; 3],
    origin: [f64; 3],
    values: Vec<f64>,
}

fn decode(header: &NiftiHeader, data: &[u8], offset: usize) -> Result<Decoded> {
    let dims = header.dims()?;
    let spacing = header.spacing()?;
    let datatype = header.datatype()?;
    let n = dims.len();
    let needed = n
        .checked_mul(datatype.size())
        .and_then(|b| b.checked_add(offset))
        .ok_or(Error::TruncatedFile {
            needed: usize::MAX,
            available: data.len(),
        })?;
    if data.len() < needed {
        return Err(Error::TruncatedFile {
            needed,
            available: data.len(),
        });
    }
    let body = &data[offset..needed];
    let values = match header.endianness {
        Endianness::Little => read_values::<LittleEndian>(body, datatype, n),
        Endianness::Big => read_values::<BigEndian>(body, datatype, n),
    };
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    let values = if slope != 0.0 && slope.is_finite() {
        values.into_iter().map(|v| v * slope + inter).collect()
    } else {
        values
    };
    let q = header.qoffset;
    Ok(Decoded {
        dims,
        spacing,
        origin: [q[2] as f64, q[1] as f64, q[0] as f64],
        values,
    })
}

fn read_values<E: ByteOrder>(body: &[u8], dt: DataType, n: usize) -> Vec<f64> {
    let sz = dt.size();
    (0..n)
        .map(|i| {
            let b = &body[i * sz..(i + 1) * sz];
            match dt {
                DataType::Int8 => b[0] as i8 as f64,
                DataType::UInt8 => b[0] as f64,
                DataType::Int16 => E::read_i16(b) as f64,
                DataType::UInt16 => E::read_u16(b) as f64,
                DataType::Int32 => E::read_i32(b) as f64,
                DataType::Float32 => E::read_f32(b) as f64,
                DataType::Float64 => E::read_f64(b),
            }
        })
        .collect()
}

fn decode_single(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < DEFAULT_VOX_OFFSET {
        return Err(Error::TruncatedFile {
            needed: DEFAULT_VOX_OFFSET,
            available: bytes.len(),
        });
    }
    let header = NiftiHeader::parse(bytes)?;
    if !header.is_single_file() {
        return Err(Error::format(
            "NIfTI header",
            "paired header (ni1); read it together with its .img data",
        ));
    }
    let offset = header.data_offset()?;
    decode(&header, bytes, offset)
}

fn to_image(d: Decoded) -> Result<ImageVolume> {
    let data = d.values.into_iter().map(|v| v as f32).collect();
    Volume::with_origin(d.dims, d.spacing, d.origin, data)
}

fn to_labels(d: Decoded) -> Result<LabelVolume> {
    let data = d
        .values
        .into_iter()
        .map(|v| {
            if v.fract() == 0.0 && (0.0..NUM_CLASSES as f64).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::InvalidLabel(v))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Volume::with_origin(d.dims, d.spacing, d.origin, data)
}

/// Reads a single-file (`n+1`) NIfTI-1 volume as intensities.
pub fn read_nifti(bytes: &[u8]) -> Result<ImageVolume> {
    to_image(decode_single(bytes)?)
}

/// Reads a single-file NIfTI-1 volume as class labels; every voxel must hold an
/// integer in 0..=9 after scaling.
pub fn read_nifti_labels(bytes: &[u8]) -> Result<LabelVolume> {
    to_labels(decode_single(bytes)?)
}

/// Reads a paired (`ni1`) header with its separate image bytes.
pub fn read_nifti_pair(header_bytes: &[u8], image_bytes: &[u8]) -> Result<ImageVolume> {
    let header = NiftiHeader::parse(header_bytes)?;
    if header.is_single_file() {
        return read_nifti(header_bytes);
    }
    let offset = header.data_offset()?;
    to_image(decode(&header, image_bytes, offset)?)
}

/// Datatype of a single-file volume, for callers that want to pick a reader.
pub fn peek_datatype(bytes: &[u8]) -> Result<DataType> {
    NiftiHeader::parse(bytes)?.datatype()
}

fn write_header(dims: Dims, spacing: [f64; 3], origin: [f64; 3], dt: DataType) -> Vec<u8> {
    use offsets::*;
    type E = LittleEndian;
    let mut b = vec![0u8; DEFAULT_VOX_OFFSET];
    E::write_i32(&mut b[SIZEOF_HDR..], HEADER_SIZE as i32);
    let dim: [i16; 8] = [3, dims.w as i16, dims.h as i16, dims.d as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        E::write_i16(&mut b[DIM + 2 * i..], *d);
    }
    E::write_i16(&mut b[DATATYPE..], dt.code());
    E::write_i16(&mut b[BITPIX..], (dt.size() * 8) as i16);
    let pixdim: [f32; 8] = [
        1.0,
        spacing[2] as f32,
        spacing[1] as f32,
        spacing[0] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut b[PIXDIM + 4 * i..], *p);
    }
    E::write_f32(&mut b[VOX_OFFSET..], DEFAULT_VOX_OFFSET as f32);
    E::write_f32(&mut b[SCL_SLOPE..], 0.0);
    E::write_f32(&mut b[SCL_INTER..], 0.0);
    // mm
    b[XYZT_UNITS] = 2;
    E::write_i16(&mut b[QFORM_CODE..], 1);
    for (i, o) in [origin[2], origin[1], origin[0]].iter().enumerate() {
        E::write_f32(&mut b[QOFFSET_X + 4 * i..], *o as f32);
    }
    b[MAGIC..MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    b
}

fn check_writable(dims: Dims) -> Result<()> {
    if dims.as_array().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::UnsupportedDimensions(format!(
            "{:?} exceeds the NIfTI-1 extent limit",
            dims.as_array()
        )));
    }
    Ok(())
}

/// Single-file little-endian float32 NIfTI-1.
pub fn write_nifti(volume: &ImageVolume) -> Result<Vec<u8>> {
    check_writable(volume.dims())?;
    let mut out = write_header(volume.dims(), volume.spacing(), volume.origin(), DataType::Float32);
    out.reserve(volume.data().len() * 4);
    for &v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Single-file uint8 NIfTI-1.
pub fn write_nifti_labels(volume: &LabelVolume) -> Result<Vec<u8>> {
    check_writable(volume.dims())?;
    let mut out = write_header(volume.dims(), volume.spacing(), volume.origin(), DataType::UInt8);
    out.extend_from_slice(volume.data());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a NIfTI-1 file byte by byte from the standard layout, independent
    /// of `write_header`.
    fn hand_built_u8_2x2x2() -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&2i16.to_le_bytes());
        b[72..74].copy_from_slice(&8i16.to_le_bytes());
        for (i, p) in [1f32, 1.0, 1.0, 1.0].iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_le_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend(0u8..8);
        b
    }

    #[test]
    fn reads_hand_built_file() {
        let bytes = hand_built_u8_2x2x2();
        assert_eq!(bytes.len(), 360);
        let v = read_nifti(&bytes).unwrap();
        assert_eq!(v.dims(), Dims::new(2, 2, 2));
        assert_eq!(v.spacing(), [1.0; 3]);
        assert_eq!(v.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        // fastest on-disk axis is W
        assert_eq!(v.get(0, 0, 1), 1.0);
        assert_eq!(v.get(0, 1, 0), 2.0);
        assert_eq!(v.get(1, 0, 0), 4.0);
    }

    #[test]
    fn big_endian_is_detected() {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 1, 1, 2, 1, 1, 1, 1].iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_be_bytes());
        for (i, p) in [1f32, 0.5, 0.5, 2.0].iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_be_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_be_bytes());
        b[112..116].copy_from_slice(&2f32.to_be_bytes());
        b[116..120].copy_from_slice(&(-1f32).to_be_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(&(-300i16).to_be_bytes());
        b.extend_from_slice(&7i16.to_be_bytes());
        let v = read_nifti(&b).unwrap();
        assert_eq!(v.dims(), Dims::new(2, 1, 1));
        assert_eq!(v.spacing(), [2.0, 0.5, 0.5]);
        assert_eq!(v.data(), &[-601.0, 13.0]);
    }

    #[test]
    fn bad_magic() {
        let mut b = hand_built_u8_2x2x2();
        b[344..348].copy_from_slice(b"XXXX");
        assert!(matches!(read_nifti(&b), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_body() {
        let b = hand_built_u8_2x2x2();
        assert!(matches!(
            read_nifti(&b[..359]),
            Err(Error::TruncatedFile { needed: 360, available: 359 })
        ));
        assert!(matches!(read_nifti(&b[..100]), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn unsupported_datatype_and_dims() {
        let mut b = hand_built_u8_2x2x2();
        b[70..72].copy_from_slice(&128i16.to_le_bytes());
        assert!(matches!(read_nifti(&b), Err(Error::UnsupportedDatatype(128))));

        let mut b = hand_built_u8_2x2x2();
        for (i, d) in [4i16, 2, 2, 1, 2].iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        assert!(matches!(read_nifti(&b), Err(Error::UnsupportedDimensions(_))));
    }

    #[test]
    fn non_positive_spacing() {
        let mut b = hand_built_u8_2x2x2();
        b[84..88].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(read_nifti(&b), Err(Error::NonPositiveSpacing(_))));
    }

    #[test]
    fn minimal_float_image() {
        let v = ImageVolume::new(Dims::new(1, 1, 1), [1.0; 3], vec![5.0]).unwrap();
        let bytes = write_nifti(&v).unwrap();
        assert_eq!(bytes.len(), 352 + 4);
        let h = NiftiHeader::parse(&bytes).unwrap();
        assert_eq!(h.dim, [3, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(h.datatype, 16);
        assert_eq!(h.bitpix, 32);
        assert_eq!(h.vox_offset, 352.0);
        assert_eq!(h.scl_slope, 0.0);
        assert_eq!(&bytes[352..], &5f32.to_le_bytes());
    }

    #[test]
    fn labels_written_as_uint8() {
        let v = LabelVolume::new(Dims::new(1, 1, 2), [1.0; 3], vec![0, 9]).unwrap();
        let bytes = write_nifti_labels(&v).unwrap();
        assert_eq!(NiftiHeader::parse(&bytes).unwrap().datatype, 2);
        assert_eq!(&bytes[352..], &[0, 9]);
        assert_eq!(read_nifti_labels(&bytes).unwrap(), v);
    }

    #[test]
    fn float_file_round_trips_bit_exactly() {
        let data: Vec<f32> = vec![1.5, -0.0, 3.25e-7, 1e30, -2.0, 0.1];
        let v = ImageVolume::with_origin(Dims::new(1, 2, 3), [2.5, 0.7, 0.7], [1.0, -2.0, 3.5], data)
            .unwrap();
        let bytes = write_nifti(&v).unwrap();
        let back = read_nifti(&bytes).unwrap();
        assert_eq!(write_nifti(&back).unwrap(), bytes);
        for (a, b) in back.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.origin(), v.origin());
    }

    #[test]
    fn paired_header_reads_with_image() {
        let mut hdr = hand_built_u8_2x2x2()[..348].to_vec();
        hdr[344..348].copy_from_slice(b"ni1\0");
        hdr[108..112].copy_from_slice(&0f32.to_le_bytes());
        let img: Vec<u8> = (10..18).collect();
        assert!(read_nifti(&[hdr.clone(), vec![0; 4]].concat()).is_err());
        let v = read_nifti_pair(&hdr, &img).unwrap();
        assert_eq!(v.data()[7], 17.0);
    }
}
