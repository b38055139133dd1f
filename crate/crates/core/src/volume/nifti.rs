//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) subset: 3D, one frame, five
//! scalar datatypes. Byte order is detected from `sizeof_hdr`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Geometry, Grid, IntensityVolume, Orientation, VolumeError, VoxelGrid};

const HEADER_SIZE: usize = 348;
const WRITE_VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Cursor<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[off..off + N]);
        out
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.bytes(off)),
            Endian::Big => i16::from_be_bytes(self.bytes(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.bytes(off)),
            Endian::Big => f32::from_be_bytes(self.bytes(off)),
        }
    }
}

struct Header {
    geometry: Geometry,
    datatype: i16,
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    orientation: Orientation,
    endian: Endian,
}

fn load_bytes(path: &Path) -> Result<Vec<u8>, VolumeError> {
    let raw = fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::with_capacity(raw.len() * 4);
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_header(buf: &[u8]) -> Result<Header, VolumeError> {
    if buf.len() < HEADER_SIZE {
        return Err(VolumeError::TruncatedPayload {
            expected: HEADER_SIZE,
            found: buf.len(),
        });
    }
    let endian = if i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(VolumeError::BadMagic(
            "sizeof_hdr is not 348 (NIfTI-2 and non-NIfTI files are not supported)".into(),
        ));
    };
    if &buf[344..348] != b"n+1\0" {
        return Err(VolumeError::BadMagic(format!(
            "expected \"n+1\\0\" at offset 344, found {:?}",
            String::from_utf8_lossy(&buf[344..348])
        )));
    }
    let c = Cursor { buf, endian };

    let dim: Vec<i16> = (0..8).map(|i| c.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    let single_frame_4d = ndim == 4 && dim[4] == 1;
    if ndim != 3 && !single_frame_4d {
        return Err(VolumeError::DimensionMismatch(format!(
            "only 3D volumes are supported (dim[0]={ndim}, dim[4]={})",
            dim[4]
        )));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(VolumeError::DimensionMismatch(format!(
            "non-positive spatial dims {:?}",
            &dim[1..4]
        )));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let pixdim: Vec<f32> = (0..8).map(|i| c.f32(76 + 4 * i)).collect();
    let spacing = [
        pixdim[1].abs() as f64,
        pixdim[2].abs() as f64,
        pixdim[3].abs() as f64,
    ];
    let geometry = Geometry::new(dims, spacing)?;

    let datatype = c.i16(70);
    if !matches!(
        datatype,
        DT_UINT8 | DT_INT16 | DT_UINT16 | DT_FLOAT32 | DT_FLOAT64
    ) {
        return Err(VolumeError::UnsupportedDatatype(datatype));
    }
    let vox_offset = c.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(VolumeError::DimensionMismatch(format!(
            "vox_offset {vox_offset} lies inside the header"
        )));
    }

    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = c.f32(280 + 16 * r + 4 * k);
        }
    }
    let orientation = Orientation {
        qfac: if pixdim[0] == -1.0 { -1.0 } else { 1.0 },
        qform_code: c.i16(252),
        sform_code: c.i16(254),
        quatern: [c.f32(256), c.f32(260), c.f32(264)],
        qoffset: [c.f32(268), c.f32(272), c.f32(276)],
        srow,
    };

    Ok(Header {
        geometry,
        datatype,
        vox_offset: vox_offset as usize,
        scl_slope: c.f32(112),
        scl_inter: c.f32(116),
        orientation,
        endian,
    })
}

fn bytes_per_voxel(datatype: i16) -> usize {
    match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        _ => unreachable!("datatype validated in parse_header"),
    }
}

fn decode_payload(header: &Header, payload: &[u8]) -> Vec<f64> {
    let bpv = bytes_per_voxel(header.datatype);
    let le = matches!(header.endian, Endian::Little);
    payload
        .chunks_exact(bpv)
        .map(|b| match header.datatype {
            DT_UINT8 => b[0] as f64,
            DT_INT16 => {
                let a = [b[0], b[1]];
                (if le {
                    i16::from_le_bytes(a)
                } else {
                    i16::from_be_bytes(a)
                }) as f64
            }
            DT_UINT16 => {
                let a = [b[0], b[1]];
                (if le {
                    u16::from_le_bytes(a)
                } else {
                    u16::from_be_bytes(a)
                }) as f64
            }
            DT_FLOAT32 => {
                let a = [b[0], b[1], b[2], b[3]];
                (if le {
                    f32::from_le_bytes(a)
                } else {
                    f32::from_be_bytes(a)
                }) as f64
            }
            DT_FLOAT64 => {
                let a: [u8; 8] = b.try_into().expect("chunk of 8");
                if le {
                    f64::from_le_bytes(a)
                } else {
                    f64::from_be_bytes(a)
                }
            }
            _ => unreachable!(),
        })
        .collect()
}

fn parse_volume(buf: &[u8]) -> Result<IntensityVolume, VolumeError> {
    let header = parse_header(buf)?;
    let n = header.geometry.len();
    let expected = n * bytes_per_voxel(header.datatype);
    let available = buf.len().saturating_sub(header.vox_offset);
    if available < expected {
        return Err(VolumeError::TruncatedPayload {
            expected,
            found: available,
        });
    }
    if available > expected {
        return Err(VolumeError::DimensionMismatch(format!(
            "payload holds {available} bytes but header dims need {expected}"
        )));
    }
    let mut data = decode_payload(&header, &buf[header.vox_offset..]);
    if header.scl_slope != 0.0 && header.scl_slope.is_finite() {
        let slope = header.scl_slope as f64;
        let inter = if header.scl_inter.is_finite() {
            header.scl_inter as f64
        } else {
            0.0
        };
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    let vol = Grid::from_parts(header.geometry, data, header.orientation);
    vol.check_finite()?;
    Ok(vol)
}

/// Reads a scalar volume; values are rescaled by `scl_slope`/`scl_inter`
/// when the slope is non-zero.
pub fn read_volume(path: impl AsRef<Path>) -> Result<IntensityVolume, VolumeError> {
    parse_volume(&load_bytes(path.as_ref())?)
}

/// Reads a binary mask, thresholding at `> 0.5`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<VoxelGrid, VolumeError> {
    let vol = read_volume(path)?;
    let data = vol.data().iter().map(|&v| v > 0.5).collect();
    Ok(vol.with_data(data))
}

fn encode_header(
    geometry: &Geometry,
    orientation: &Orientation,
    datatype: i16,
    bitpix: i16,
) -> Vec<u8> {
    let mut h = vec![0u8; WRITE_VOX_OFFSET];
    let put_i16 =
        |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 =
        |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, geometry.dims[a] as i16);
    }
    for a in 3..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    let qfac = if orientation.qfac == -1.0 { -1.0 } else { 1.0 };
    put_f32(&mut h, 76, qfac);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, geometry.spacing[a] as f32);
    }
    put_f32(&mut h, 108, WRITE_VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // mm + seconds
    h[123] = 2 | 8;
    put_i16(&mut h, 252, orientation.qform_code);
    put_i16(&mut h, 254, orientation.sform_code);
    for k in 0..3 {
        put_f32(&mut h, 256 + 4 * k, orientation.quatern[k]);
        put_f32(&mut h, 268 + 4 * k, orientation.qoffset[k]);
    }
    for (r, row) in orientation.srow.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * r + 4 * k, v);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    // bytes 348..352: empty extension flag
    h
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), VolumeError> {
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    if gz {
        let file = fs::File::create(path)?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.sync_all()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Writes a mask as uint8 NIfTI-1; a `.gz` suffix selects gzip.
pub fn write_mask(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let mut bytes = encode_header(grid.geometry(), grid.orientation(), DT_UINT8, 8);
    bytes.extend(grid.data().iter().map(|&v| v as u8));
    write_bytes(path.as_ref(), &bytes)
}

/// Writes an intensity volume as float32 NIfTI-1.
pub fn write_volume(vol: &IntensityVolume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let mut bytes = encode_header(vol.geometry(), vol.orientation(), DT_FLOAT32, 32);
    bytes.reserve(vol.data().len() * 4);
    for &v in vol.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_bytes(path.as_ref(), &bytes)
}
