//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) for uint8, int16 and float32
//! volumes of up to three spatial dimensions.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

const HEADER_SIZE: usize = 348;
const WRITE_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Datatype {
    U8,
    I16,
    F32,
}

impl Datatype {
    fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            16 => Some(Datatype::F32),
            _ => None,
        }
    }

    fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::F32 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Voxels in file order (x fastest, then y, then z) after intensity scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiVolume {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    pub voxels: Vec<f64>,
}

impl NiftiVolume {
    pub fn new(dims: [usize; 3], datatype: Datatype, voxels: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != voxels.len() || dims.contains(&0) {
            return Err(Error::Shape(format!(
                "volume dims {dims:?} do not match {} voxels",
                voxels.len()
            )));
        }
        Ok(NiftiVolume { dims, datatype, voxels })
    }

    /// Voxel at `(x, y, z)`.
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.voxels[(z * self.dims[1] + y) * self.dims[0] + x]
    }

    pub fn range(&self) -> (f64, f64) {
        self.voxels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

pub fn read_nifti(path: &Path) -> Result<NiftiVolume> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if is_gzip(&raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip stream: {e}")))?;
        out
    } else {
        raw
    };
    parse(&bytes, path)
}

pub fn parse(bytes: &[u8], path: &Path) -> Result<NiftiVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(path, format!("{} bytes is shorter than a NIfTI-1 header", bytes.len())));
    }
    match (LittleEndian::read_i32(&bytes[0..4]), BigEndian::read_i32(&bytes[0..4])) {
        (348, _) => parse_with::<LittleEndian>(bytes, path),
        (_, 348) => parse_with::<BigEndian>(bytes, path),
        _ => Err(Error::format(path, "sizeof_hdr is not 348 in either byte order")),
    }
}

fn parse_with<B: ByteOrder>(bytes: &[u8], path: &Path) -> Result<NiftiVolume> {
    if &bytes[344..348] != MAGIC {
        return Err(Error::format(path, "missing \"n+1\" magic at offset 344"));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&bytes[40 + 2 * i..]);
    }
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::format(path, format!("dim[0] = {rank}")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=rank as usize {
        let d = dim[i];
        if d < 1 {
            return Err(Error::format(path, format!("dim[{i}] = {d}")));
        }
        if i <= 3 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::Unsupported(format!(
                "{}: only 3-D volumes are supported (dim[{i}] = {d})",
                path.display()
            )));
        }
    }
    let code = B::read_i16(&bytes[70..]);
    let datatype = Datatype::from_code(code)
        .ok_or_else(|| Error::Unsupported(format!("{}: NIfTI datatype {code}", path.display())))?;
    let vox_offset = B::read_f32(&bytes[108..]);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::format(path, format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let count: usize = dims.iter().product();
    let end = start + count * datatype.bytes();
    if bytes.len() < end {
        return Err(Error::format(
            path,
            format!("payload needs {end} bytes, file has {}", bytes.len()),
        ));
    }
    let payload = &bytes[start..end];
    let mut voxels: Vec<f64> = match datatype {
        Datatype::U8 => payload.iter().map(|&b| f64::from(b)).collect(),
        Datatype::I16 => payload.chunks_exact(2).map(|c| f64::from(B::read_i16(c))).collect(),
        Datatype::F32 => payload.chunks_exact(4).map(|c| f64::from(B::read_f32(c))).collect(),
    };
    let slope = B::read_f32(&bytes[112..]);
    let inter = B::read_f32(&bytes[116..]);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() {
        let (s, i) = (f64::from(slope), f64::from(inter));
        for v in &mut voxels {
            *v = *v * s + i;
        }
    }
    NiftiVolume::new(dims, datatype, voxels)
}

/// Encodes with unit scaling. Values are converted to the volume's datatype;
/// callers are responsible for them being representable.
pub fn encode(volume: &NiftiVolume, endian: Endian) -> Vec<u8> {
    match endian {
        Endian::Little => encode_with::<LittleEndian>(volume, 0.0, 0.0),
        Endian::Big => encode_with::<BigEndian>(volume, 0.0, 0.0),
    }
}

/// Encodes `volume.voxels` as stored values alongside the given
/// `scl_slope`/`scl_inter`, so readers see `stored · slope + inter`.
pub fn encode_scaled(volume: &NiftiVolume, endian: Endian, slope: f32, inter: f32) -> Vec<u8> {
    match endian {
        Endian::Little => encode_with::<LittleEndian>(volume, slope, inter),
        Endian::Big => encode_with::<BigEndian>(volume, slope, inter),
    }
}

fn encode_with<B: ByteOrder>(volume: &NiftiVolume, slope: f32, inter: f32) -> Vec<u8> {
    let dt = volume.datatype;
    let mut out = vec![0u8; WRITE_VOX_OFFSET + volume.voxels.len() * dt.bytes()];
    B::write_i32(&mut out[0..], HEADER_SIZE as i32);
    let dim = [3, volume.dims[0], volume.dims[1], volume.dims[2], 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        B::write_i16(&mut out[40 + 2 * i..], *d as i16);
    }
    B::write_i16(&mut out[70..], dt.code());
    B::write_i16(&mut out[72..], (dt.bytes() * 8) as i16);
    for i in 0..8 {
        B::write_f32(&mut out[76 + 4 * i..], 1.0);
    }
    B::write_f32(&mut out[108..], WRITE_VOX_OFFSET as f32);
    B::write_f32(&mut out[112..], slope);
    B::write_f32(&mut out[116..], inter);
    out[344..348].copy_from_slice(MAGIC);
    let payload = &mut out[WRITE_VOX_OFFSET..];
    match dt {
        Datatype::U8 => {
            for (b, v) in payload.iter_mut().zip(&volume.voxels) {
                *b = *v as u8;
            }
        }
        Datatype::I16 => {
            for (c, v) in payload.chunks_exact_mut(2).zip(&volume.voxels) {
                B::write_i16(c, *v as i16);
            }
        }
        Datatype::F32 => {
            for (c, v) in payload.chunks_exact_mut(4).zip(&volume.voxels) {
                B::write_f32(c, *v as f32);
            }
        }
    }
    out
}

/// Writes a little-endian volume, gzip-compressed when the name ends in
/// `.gz`.
pub fn write_nifti(path: &Path, volume: &NiftiVolume) -> Result<()> {
    let bytes = encode(volume, Endian::Little);
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        gzip(&bytes).map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    write_atomic(path, &bytes)
}

pub fn gzip(bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes)?;
    enc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.nii")
    }

    fn ramp(dt: Datatype) -> NiftiVolume {
        let voxels = (0..32)
            .map(|i| match dt {
                Datatype::U8 => (i * 7 % 256) as f64,
                Datatype::I16 => (i as f64 - 16.0) * 1000.0,
                Datatype::F32 => f64::from((i as f32).sin() * 1e3),
            })
            .collect();
        NiftiVolume::new([4, 4, 2], dt, voxels).unwrap()
    }

    #[test]
    fn round_trips_every_datatype_in_both_byte_orders() {
        for dt in [Datatype::U8, Datatype::I16, Datatype::F32] {
            let v = ramp(dt);
            for e in [Endian::Little, Endian::Big] {
                let back = parse(&encode(&v, e), p()).unwrap();
                assert_eq!(back.dims, v.dims);
                assert!(back.voxels.iter().zip(&v.voxels).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn gzip_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        let v = ramp(Datatype::F32);
        write_nifti(&path, &v).unwrap();
        assert!(is_gzip(&std::fs::read(&path).unwrap()));
        assert_eq!(read_nifti(&path).unwrap(), v);
    }

    #[test]
    fn scaling_is_applied() {
        let v = NiftiVolume::new([1, 1, 1], Datatype::I16, vec![3.0]).unwrap();
        let back = parse(&encode_scaled(&v, Endian::Little, 2.0, 1.0), p()).unwrap();
        assert_eq!(back.voxels, vec![7.0]);
    }

    #[test]
    fn rejects_bad_magic_and_datatype() {
        let mut b = encode(&ramp(Datatype::U8), Endian::Little);
        b[345] = b'x';
        assert!(matches!(parse(&b, p()), Err(Error::Format { .. })));
        let mut b = encode(&ramp(Datatype::U8), Endian::Little);
        LittleEndian::write_i16(&mut b[70..], 64);
        assert!(matches!(parse(&b, p()), Err(Error::Unsupported(_))));
    }
}
