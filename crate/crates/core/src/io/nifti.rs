//! Minimal NIfTI-1 single-file reader and writer (`.nii`, `.nii.gz`).
//!
//! Scalar volumes are 3D; displacement fields are 4D with the vector index as
//! the fourth dimension. Axis 0 of the in-memory grid is NIfTI `i` (fastest on
//! disk). For fields, `pixdim` holds node spacing and `intent_p1` the grid scale.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::grid::{lin, numel, DisplacementField, LabelVolume, Shape, Volume};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const INTENT_VECTOR: i16 = 1007;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        MultiGzDecoder::new(BufReader::new(file))
            .read_to_end(&mut buf)
            .map_err(|e| Error::format(path, format!("gzip stream: {e}")))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if is_gz(path) {
        let mut enc = GzEncoder::new(w, Compression::new(6));
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        w = enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Decoded header fields this crate uses.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub dims: Vec<usize>,
    pub pixdim: [f64; 3],
    pub datatype: i16,
    pub intent_code: i16,
    pub intent_p1: f64,
    pub scl_slope: f64,
    pub scl_inter: f64,
    vox_offset: usize,
    big_endian: bool,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl Cursor<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.big {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().expect("4 bytes");
        if self.big {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(path, "file shorter than a NIfTI-1 header"));
    }
    let big = match (
        i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")),
        i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")),
    ) {
        (348, _) => false,
        (_, 348) => true,
        _ => {
            return Err(Error::format(
                path,
                "not a NIfTI-1 file (sizeof_hdr != 348)",
            ))
        }
    };
    if &bytes[344..347] != b"n+1" {
        return Err(Error::format(
            path,
            "only single-file NIfTI-1 (magic n+1) is supported",
        ));
    }
    let c = Cursor { bytes, big };
    let ndim = c.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(
            path,
            format!("invalid dimension count {ndim}"),
        ));
    }
    let dims: Vec<usize> = (1..=ndim as usize)
        .map(|i| c.i16(40 + 2 * i).max(1) as usize)
        .collect();
    let pixdim = [c.f32(80) as f64, c.f32(84) as f64, c.f32(88) as f64];
    let vox_offset = c.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::format(
            path,
            format!("invalid vox_offset {vox_offset}"),
        ));
    }
    Ok(Header {
        dims,
        pixdim,
        datatype: c.i16(70),
        intent_code: c.i16(68),
        intent_p1: c.f32(56) as f64,
        scl_slope: c.f32(112) as f64,
        scl_inter: c.f32(116) as f64,
        vox_offset: vox_offset as usize,
        big_endian: big,
    })
}

fn bytes_per_voxel(path: &Path, datatype: i16) -> Result<usize> {
    Ok(match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::format(path, format!("unsupported datatype {other}"))),
    })
}

/// Header plus voxel values in file order, as f64 with scaling applied.
fn read_values(path: &Path) -> Result<(Header, Vec<f64>)> {
    let bytes = read_all(path)?;
    let h = parse_header(path, &bytes)?;
    let count: usize = h.dims.iter().product();
    let bpv = bytes_per_voxel(path, h.datatype)?;
    let end = h.vox_offset + count * bpv;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            format!("truncated data: need {end} bytes, file has {}", bytes.len()),
        ));
    }
    let data = &bytes[h.vox_offset..end];
    let big = h.big_endian;
    let mut out = Vec::with_capacity(count);
    for chunk in data.chunks_exact(bpv) {
        let v = match (h.datatype, big) {
            (DT_UINT8, _) => chunk[0] as f64,
            (DT_INT8, _) => chunk[0] as i8 as f64,
            (DT_INT16, false) => i16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            (DT_INT16, true) => i16::from_be_bytes([chunk[0], chunk[1]]) as f64,
            (DT_UINT16, false) => u16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            (DT_UINT16, true) => u16::from_be_bytes([chunk[0], chunk[1]]) as f64,
            (DT_INT32, false) => i32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
            (DT_INT32, true) => i32::from_be_bytes(chunk.try_into().expect("4 bytes")) as f64,
            (DT_FLOAT32, false) => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
            (DT_FLOAT32, true) => f32::from_be_bytes(chunk.try_into().expect("4 bytes")) as f64,
            (DT_FLOAT64, false) => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
            (DT_FLOAT64, true) => f64::from_be_bytes(chunk.try_into().expect("8 bytes")),
            _ => unreachable!("datatype checked above"),
        };
        out.push(v);
    }
    if h.scl_slope != 0.0 && h.scl_slope.is_finite() && (h.scl_slope != 1.0 || h.scl_inter != 0.0) {
        out.iter_mut()
            .for_each(|v| *v = *v * h.scl_slope + h.scl_inter);
    }
    Ok((h, out))
}

fn header_bytes(
    dims: &[usize],
    pixdim: [f64; 3],
    datatype: i16,
    bitpix: i16,
    intent_code: i16,
    intent_p1: f32,
) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 = |h: &mut [u8], at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    put_i16(&mut h, 40, dims.len() as i16);
    for (i, &d) in dims.iter().enumerate() {
        put_i16(&mut h, 42 + 2 * i, d as i16);
    }
    for i in dims.len()..7 {
        put_i16(&mut h, 42 + 2 * i, 1);
    }
    put_f32(&mut h, 56, intent_p1);
    put_i16(&mut h, 68, intent_code);
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    put_f32(&mut h, 76, 1.0);
    for (a, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 80 + 4 * a, *p as f32);
    }
    for a in 3..7 {
        put_f32(&mut h, 80 + 4 * a, 1.0);
    }
    put_f32(&mut h, 108, DATA_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    // xyzt_units: millimetres
    h[123] = 2;
    // sform = diag(pixdim) so viewers place voxels in mm
    put_i16(&mut h, 254, 1);
    for (row, at) in [280usize, 296, 312].into_iter().enumerate() {
        put_f32(&mut h, at + 4 * row, pixdim[row] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// File order (axis 0 fastest) of a C-ordered grid.
fn file_order(shape: Shape) -> impl Iterator<Item = usize> {
    (0..shape[2]).flat_map(move |k| {
        (0..shape[1]).flat_map(move |j| (0..shape[0]).map(move |i| lin(shape, i, j, k)))
    })
}

fn grid_shape(path: &Path, h: &Header, ndim: usize) -> Result<Shape> {
    let extra: usize = h.dims.iter().skip(3).product();
    if h.dims.len() < 3.min(ndim) || (ndim == 3 && extra != 1) {
        return Err(Error::format(
            path,
            format!("expected a 3D volume, found dims {:?}", h.dims),
        ));
    }
    let mut shape = [1; 3];
    for (a, s) in shape.iter_mut().enumerate() {
        *s = h.dims.get(a).copied().unwrap_or(1);
    }
    Ok(shape)
}

fn spacing_of(path: &Path, pixdim: [f64; 3]) -> Result<[f64; 3]> {
    let s = pixdim.map(f64::abs);
    if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("invalid voxel spacing {pixdim:?}"),
        ));
    }
    Ok(s)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (h, values) = read_values(path)?;
    let shape = grid_shape(path, &h, 3)?;
    let spacing = spacing_of(path, h.pixdim)?;
    let mut data = vec![0f32; numel(shape)];
    for (dst, v) in file_order(shape).zip(values) {
        data[dst] = v as f32;
    }
    Volume::new(shape, spacing, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let shape = vol.shape();
    let mut bytes = header_bytes(&shape, vol.spacing(), DT_FLOAT32, 32, 0, 0.0);
    let data = vol.data();
    for i in file_order(shape) {
        bytes.extend_from_slice(&data[i].to_le_bytes());
    }
    write_all(path, &bytes)
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let (h, values) = read_values(path)?;
    let shape = grid_shape(path, &h, 3)?;
    let spacing = spacing_of(path, h.pixdim)?;
    let mut data = vec![0u16; numel(shape)];
    for (dst, v) in file_order(shape).zip(values) {
        if !(0.0..=u16::MAX as f64).contains(&v) || v.fract() != 0.0 {
            return Err(Error::format(
                path,
                format!("label value {v} is not a class index"),
            ));
        }
        data[dst] = v as u16;
    }
    LabelVolume::new(shape, spacing, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_labels(path: &Path, lab: &LabelVolume) -> Result<()> {
    let shape = lab.shape();
    let mut bytes = header_bytes(&shape, lab.spacing(), DT_UINT16, 16, 0, 0.0);
    let data = lab.data();
    for i in file_order(shape) {
        bytes.extend_from_slice(&data[i].to_le_bytes());
    }
    write_all(path, &bytes)
}

/// Fields are stored as 64-bit floats so stored labels reload bit-exactly.
pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    let shape = field.shape();
    let s = field.grid_scale();
    let node = field.spacing().map(|v| v * s as f64);
    let dims = [shape[0], shape[1], shape[2], 3];
    let mut bytes = header_bytes(&dims, node, DT_FLOAT64, 64, INTENT_VECTOR, s as f32);
    for c in 0..3 {
        let comp = field.component(c);
        for i in file_order(shape) {
            bytes.extend_from_slice(&comp[i].to_le_bytes());
        }
    }
    write_all(path, &bytes)
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let (h, values) = read_values(path)?;
    if h.dims.len() < 4 || h.dims[3] != 3 || h.dims.iter().skip(4).product::<usize>() != 1 {
        return Err(Error::format(
            path,
            format!("expected a (d, h, w, 3) field, found dims {:?}", h.dims),
        ));
    }
    let shape = grid_shape(path, &h, 4)?;
    let scale = if h.intent_p1 >= 1.0 {
        h.intent_p1.round() as usize
    } else {
        1
    };
    let node = spacing_of(path, h.pixdim)?;
    let spacing = node.map(|v| v / scale as f64);
    let n = numel(shape);
    let mut data = vec![0.0; 3 * n];
    let mut it = values.into_iter();
    for c in 0..3 {
        for i in file_order(shape) {
            data[c * n + i] = it.next().expect("value count checked");
        }
    }
    DisplacementField::new(shape, spacing, scale, data)
        .map_err(|e| Error::format(path, e.to_string()))
}
