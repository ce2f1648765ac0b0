//! Minimal single-file NIfTI-1 (`.nii`) support.
//!
//! Little-endian only, 348-byte header followed by a 4-byte empty extension
//! block, so data starts at offset 352. Scalar volumes are 3-D; vector fields
//! are 4-D with `dim[4] = 3`, stored as three consecutive component volumes
//! (the NIfTI axis order, x fastest and component slowest). Files are written
//! as 32-bit float; reading also accepts 16-bit signed integers.

use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::volume::{Dims, Volume};

const HEADER_SIZE: i32 = 348;
const VOX_OFFSET: usize = 352;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const INTENT_DISPVECT: i16 = 1006;

/// Header fields this crate reads or writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub pixdim: [f32; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub intent_code: i16,
}

impl NiftiHeader {
    fn new(dims: Dims, components: usize, spacing: [f64; 3]) -> Self {
        let mut dim = [1i16; 8];
        dim[0] = if components == 1 { 3 } else { 4 };
        for a in 0..3 {
            dim[a + 1] = dims[a] as i16;
        }
        dim[4] = components as i16;
        let mut pixdim = [1.0f32; 8];
        pixdim[0] = 1.0;
        for a in 0..3 {
            pixdim[a + 1] = spacing[a] as f32;
        }
        NiftiHeader {
            dim,
            pixdim,
            datatype: DT_FLOAT32,
            bitpix: 32,
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            intent_code: if components == 1 { 0 } else { INTENT_DISPVECT },
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut buf = vec![0u8; VOX_OFFSET];
        let mut w = Cursor::new(&mut buf[..]);
        w.write_i32::<LittleEndian>(HEADER_SIZE).unwrap();
        w.set_position(38);
        w.write_u8(b'r').unwrap();
        w.set_position(40);
        for d in self.dim {
            w.write_i16::<LittleEndian>(d).unwrap();
        }
        w.set_position(68);
        w.write_i16::<LittleEndian>(self.intent_code).unwrap();
        w.write_i16::<LittleEndian>(self.datatype).unwrap();
        w.write_i16::<LittleEndian>(self.bitpix).unwrap();
        w.set_position(76);
        for p in self.pixdim {
            w.write_f32::<LittleEndian>(p).unwrap();
        }
        w.write_f32::<LittleEndian>(self.vox_offset).unwrap();
        w.write_f32::<LittleEndian>(self.scl_slope).unwrap();
        w.write_f32::<LittleEndian>(self.scl_inter).unwrap();
        w.set_position(123);
        w.write_u8(2).unwrap(); // xyzt_units: mm
        w.set_position(254);
        w.write_i16::<LittleEndian>(1).unwrap(); // sform_code: scanner
        w.set_position(280);
        for row in 0..3 {
            for col in 0..4 {
                let v = if row == col { self.pixdim[row + 1] } else { 0.0 };
                w.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        buf[344..348].copy_from_slice(b"n+1\0");
        buf
    }

    fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_SIZE as usize {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                needed: HEADER_SIZE as usize,
                found: bytes.len(),
            });
        }
        let mut r = Cursor::new(bytes);
        let sizeof_hdr = r.read_i32::<LittleEndian>().unwrap();
        if sizeof_hdr != HEADER_SIZE {
            if sizeof_hdr.swap_bytes() == HEADER_SIZE {
                return Err(Error::BigEndian(path.to_path_buf()));
            }
            return Err(Error::InvalidInput(format!(
                "{}: sizeof_hdr is {sizeof_hdr}, expected 348",
                path.display()
            )));
        }
        if &bytes[344..348] != b"n+1\0" {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        r.set_position(40);
        let mut dim = [0i16; 8];
        for d in &mut dim {
            *d = r.read_i16::<LittleEndian>().unwrap();
        }
        r.set_position(68);
        let intent_code = r.read_i16::<LittleEndian>().unwrap();
        let datatype = r.read_i16::<LittleEndian>().unwrap();
        let bitpix = r.read_i16::<LittleEndian>().unwrap();
        r.set_position(76);
        let mut pixdim = [0f32; 8];
        for p in &mut pixdim {
            *p = r.read_f32::<LittleEndian>().unwrap();
        }
        let vox_offset = r.read_f32::<LittleEndian>().unwrap();
        let scl_slope = r.read_f32::<LittleEndian>().unwrap();
        let scl_inter = r.read_f32::<LittleEndian>().unwrap();
        Ok(NiftiHeader {
            dim,
            pixdim,
            datatype,
            bitpix,
            vox_offset,
            scl_slope,
            scl_inter,
            intent_code,
        })
    }
}

fn encode(header: &NiftiHeader, values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut bytes = header.to_bytes();
    for v in values {
        bytes.write_f32::<LittleEndian>(v as f32).unwrap();
    }
    bytes
}

/// Parses a header and decodes `count` scaled values.
fn decode(path: &Path) -> Result<(NiftiHeader, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = NiftiHeader::parse(&bytes, path)?;
    let width = match header.datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        code => {
            return Err(Error::UnsupportedDatatype {
                path: path.to_path_buf(),
                code,
            })
        }
    };
    let ndim = header.dim[0];
    if !(1..=7).contains(&ndim) || header.dim[1..=ndim as usize].iter().any(|&d| d < 1) {
        return Err(Error::InvalidInput(format!("{}: bad dim {:?}", path.display(), header.dim)));
    }
    let count: usize = header.dim[1..=ndim as usize].iter().map(|&d| d as usize).product();
    let offset = header.vox_offset as usize;
    let needed = offset.max(HEADER_SIZE as usize) + count * width;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    let mut r = Cursor::new(&bytes[offset..]);
    let raw: Vec<f64> = match header.datatype {
        DT_INT16 => (0..count).map(|_| r.read_i16::<LittleEndian>().unwrap() as f64).collect(),
        _ => (0..count).map(|_| r.read_f32::<LittleEndian>().unwrap() as f64).collect(),
    };
    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    let scaled = if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        raw.into_iter().map(|v| slope * v + inter).collect()
    } else {
        raw
    };
    Ok((header, scaled))
}

fn header_dims(h: &NiftiHeader) -> Dims {
    [h.dim[1] as usize, h.dim[2] as usize, h.dim[3] as usize]
}

fn header_spacing(h: &NiftiHeader) -> [f64; 3] {
    std::array::from_fn(|a| {
        let s = h.pixdim[a + 1].abs() as f64;
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    })
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (h, data) = decode(path)?;
    let scalar = h.dim[0] == 3 || (h.dim[0] == 4 && h.dim[4] == 1);
    if !scalar {
        return Err(Error::InvalidInput(format!(
            "{}: expected a 3-D volume, got dim {:?}",
            path.display(),
            h.dim
        )));
    }
    Volume::new(header_dims(&h), header_spacing(&h), data)
}

pub fn write_volume(vol: &Volume, path: &Path) -> Result<()> {
    let header = NiftiHeader::new(vol.dims(), 1, vol.spacing());
    crate::io::write_atomic(path, &encode(&header, vol.data().iter().copied()))
}

/// Writes a displacement (or velocity) field in voxel units.
pub fn write_field(field: &VectorField, path: &Path, spacing: [f64; 3]) -> Result<()> {
    let header = NiftiHeader::new(field.dims(), 3, spacing);
    let data = field.data();
    let n = field.voxels();
    let planar = (0..3).flat_map(|c| (0..n).map(move |i| data[3 * i + c]));
    crate::io::write_atomic(path, &encode(&header, planar))
}

pub fn read_field(path: &Path) -> Result<VectorField> {
    let (h, data) = decode(path)?;
    if h.dim[0] != 4 || h.dim[4] != 3 {
        return Err(Error::InvalidField {
            path: path.to_path_buf(),
            reason: format!("expected dim[0] = 4 and dim[4] = 3, got {:?}", h.dim),
        });
    }
    let dims = header_dims(&h);
    let n = dims[0] * dims[1] * dims[2];
    let mut interleaved = vec![0.0; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            interleaved[3 * i + c] = data[c * n + i];
        }
    }
    VectorField::new(dims, interleaved)
}
