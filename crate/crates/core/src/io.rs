//! The VVOL1 container: one or more named f32 channels on a shared grid.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       5     magic "VVOL1"
//! 5       1     dtype tag, 1 = f32
//! 6       24    dims nx, ny, nz as u64
//! 30      24    spacing sx, sy, sz as f64
//! 54      4     channel count C as u32
//! 58      ...   C names, each a u16 byte length followed by UTF-8 bytes
//! ...     ...   payload: C channels in order, each nx*ny*nz f32, x fastest
//! ```
//!
//! Writes go to `<path>.partial` first and are renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::transform::DisplacementField;
use crate::volume::{Dims, LabelVolume, Volume3};

pub const MAGIC: &[u8; 5] = b"VVOL1";
pub const DTYPE_F32: u8 = 1;
const HEADER_FIXED: usize = 58;

/// Channel names used for displacement fields.
pub const DISPLACEMENT_CHANNELS: [&str; 3] = ["ux", "uy", "uz"];
/// Channel name of single-image files.
pub const IMAGE_CHANNEL: &str = "image";

/// Decoded file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub names: Vec<String>,
    pub channels: Vec<Vec<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::Truncated {
            offset: self.pos,
            expected: self.pos.saturating_add(n),
            actual: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

impl VolumeFile {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.voxel_count();
        let names_len: usize = self.names.iter().map(|s| 2 + s.len()).sum();
        let mut out = Vec::with_capacity(HEADER_FIXED + names_len + 4 * n * self.channels.len());
        out.extend_from_slice(MAGIC);
        out.push(DTYPE_F32);
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        for name in &self.names {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for c in &self.channels {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(5).map_err(|_| FormatError::BadMagic {
            found: bytes[..bytes.len().min(5)].to_vec(),
        })?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic { found: magic.to_vec() });
        }
        let tag = r.array::<1>()?[0];
        if tag != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype { tag, offset: 5 });
        }
        let dims_offset = r.pos;
        let mut raw = [0u64; 3];
        for d in raw.iter_mut() {
            *d = u64::from_le_bytes(r.array()?);
        }
        let mut spacing = [0.0; 3];
        for s in spacing.iter_mut() {
            *s = f64::from_le_bytes(r.array()?);
        }
        let count = u32::from_le_bytes(r.array()?);
        if raw.contains(&0) {
            return Err(FormatError::ZeroDim {
                offset: dims_offset,
                dims: raw,
            });
        }
        let overflow = FormatError::DimOverflow {
            offset: dims_offset,
            dims: raw,
            channels: count,
        };
        let voxels = raw
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&v| usize::try_from(v).is_ok())
            .ok_or(overflow.clone())? as usize;
        let payload = voxels
            .checked_mul(count as usize)
            .and_then(|v| v.checked_mul(4))
            .ok_or(overflow)?;
        let dims = raw.map(|d| d as usize);

        let mut names = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let offset = r.pos;
            let raw_name = r.take(len)?;
            let name = std::str::from_utf8(raw_name).map_err(|_| FormatError::InvalidName { offset })?;
            names.push(name.to_string());
        }
        let data = r.take(payload)?;
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes {
                offset: r.pos,
                extra: bytes.len() - r.pos,
            });
        }
        let channels = data
            .chunks_exact(4 * voxels)
            .map(|c| c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
            .collect();
        Ok(Self {
            dims,
            spacing,
            names,
            channels,
        })
    }

    pub fn from_volume(v: &Volume3) -> Self {
        Self {
            dims: v.dims(),
            spacing: v.spacing(),
            names: vec![IMAGE_CHANNEL.into()],
            channels: vec![v.data().to_vec()],
        }
    }

    pub fn from_labels(l: &LabelVolume) -> Self {
        Self {
            dims: l.dims(),
            spacing: l.channels()[0].spacing(),
            names: l.names().to_vec(),
            channels: l.channels().iter().map(|c| c.data().to_vec()).collect(),
        }
    }

    /// Stored at f32 precision.
    pub fn from_displacement(d: &DisplacementField) -> Self {
        Self {
            dims: d.dims(),
            spacing: [1.0; 3],
            names: DISPLACEMENT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            channels: d.components().iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect(),
        }
    }

    /// The first channel as an image; errors on multi-channel files.
    pub fn into_volume(self) -> Result<Volume3> {
        if self.channels.len() != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                found: self.channels.len(),
            });
        }
        let spacing = self.spacing;
        Ok(Volume3::new(self.dims, self.channels.into_iter().next().unwrap())?.with_spacing(spacing))
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        let spacing = self.spacing;
        let channels = self
            .channels
            .into_iter()
            .map(|c| Ok(Volume3::new(self.dims, c)?.with_spacing(spacing)))
            .collect::<Result<Vec<_>>>()?;
        LabelVolume::new(channels, self.names)
    }

    pub fn into_displacement(self) -> Result<DisplacementField> {
        if self.channels.len() != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                found: self.channels.len(),
            });
        }
        let mut it = self.channels.into_iter().map(|c| c.into_iter().map(f64::from).collect::<Vec<_>>());
        let comps = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
        DisplacementField::from_components(self.dims, comps)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `<path>.partial`, the temporary name used while writing.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

/// Writes to `<path>.partial`, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<VolumeFile> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(VolumeFile::decode(&bytes)?)
}

pub fn write_file(path: &Path, file: &VolumeFile) -> Result<()> {
    write_atomic(path, &file.encode())
}

pub fn read_volume(path: &Path) -> Result<Volume3> {
    read_file(path)?.into_volume()
}

pub fn write_volume(path: &Path, v: &Volume3) -> Result<()> {
    write_file(path, &VolumeFile::from_volume(v))
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    read_file(path)?.into_labels()
}

pub fn write_labels(path: &Path, l: &LabelVolume) -> Result<()> {
    write_file(path, &VolumeFile::from_labels(l))
}

pub fn read_displacement(path: &Path) -> Result<DisplacementField> {
    read_file(path)?.into_displacement()
}

pub fn write_displacement(path: &Path, d: &DisplacementField) -> Result<()> {
    write_file(path, &VolumeFile::from_displacement(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_file(dims: Dims, names: &[&str], seed: u64) -> VolumeFile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product::<usize>();
        VolumeFile {
            dims,
            spacing: [0.9, 1.1, 2.5],
            names: names.iter().map(|s| s.to_string()).collect(),
            channels: names.iter().map(|_| (0..n).map(|_| rng.random::<f32>() * 200.0 - 100.0).collect()).collect(),
        }
    }

    #[test]
    fn round_trip_bitwise() {
        let f = random_file([16, 16, 16], &["image"], 3);
        let bytes = f.encode();
        assert_eq!(bytes.len(), 58 + 2 + 5 + 4 * 4096);
        let back = VolumeFile::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        let a: Vec<u32> = f.channels[0].iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.channels[0].iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn many_channels_keep_names_and_order() {
        let names: Vec<String> = (0..36).map(|i| format!("oar_{i:02}_ü")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let f = random_file([4, 3, 2], &refs, 1);
        let back = VolumeFile::decode(&f.encode()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn header_layout() {
        let f = random_file([2, 3, 4], &["ab"], 0);
        let b = f.encode();
        assert_eq!(&b[..5], b"VVOL1");
        assert_eq!(b[5], 1);
        assert_eq!(u64::from_le_bytes(b[14..22].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(b[46..54].try_into().unwrap()), 2.5);
        assert_eq!(u32::from_le_bytes(b[54..58].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(b[58..60].try_into().unwrap()), 2);
        assert_eq!(&b[60..62], b"ab");
    }

    #[test]
    fn error_variants() {
        let good = random_file([4, 4, 4], &["x"], 2).encode();

        let mut bad = good.clone();
        bad[0] = b'W';
        assert!(matches!(VolumeFile::decode(&bad), Err(FormatError::BadMagic { .. })));
        assert!(matches!(VolumeFile::decode(b"VV"), Err(FormatError::BadMagic { .. })));

        let mut dtype = good.clone();
        dtype[5] = 7;
        assert_eq!(VolumeFile::decode(&dtype), Err(FormatError::UnsupportedDtype { tag: 7, offset: 5 }));

        let cut = &good[..good.len() - 10];
        assert_eq!(
            VolumeFile::decode(cut),
            Err(FormatError::Truncated {
                offset: 61,
                expected: good.len(),
                actual: good.len() - 10
            })
        );

        let mut huge = good.clone();
        huge[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(VolumeFile::decode(&huge), Err(FormatError::DimOverflow { offset: 6, .. })));

        let mut zero = good.clone();
        zero[22..30].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(VolumeFile::decode(&zero), Err(FormatError::ZeroDim { offset: 6, .. })));

        let mut name = good.clone();
        name[60] = 0xff;
        assert_eq!(VolumeFile::decode(&name), Err(FormatError::InvalidName { offset: 60 }));

        let mut long = good.clone();
        long.extend_from_slice(&[0, 0]);
        assert_eq!(
            VolumeFile::decode(&long),
            Err(FormatError::TrailingBytes {
                offset: good.len(),
                extra: 2
            })
        );
    }

    #[test]
    fn atomic_write_and_typed_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3::from_fn([5, 4, 3], |g| (g[0] * 7 + g[2]) as f32 * 0.5).unwrap().with_spacing([1.0, 2.0, 3.0]);
        let p = dir.path().join("v.vvol");
        write_volume(&p, &v).unwrap();
        assert!(!partial_path(&p).exists());
        assert_eq!(read_volume(&p).unwrap(), v);

        let d = DisplacementField::from_fn([5, 4, 3], |g| [g[0] as f64 * 0.25, -1.5, g[1] as f64]).unwrap();
        let q = dir.path().join("d.vvol");
        write_displacement(&q, &d).unwrap();
        assert_eq!(read_displacement(&q).unwrap(), d);

        let l = LabelVolume::new(vec![v.clone(), v.clone()], vec!["a".into(), "b".into()]).unwrap();
        let r = dir.path().join("l.vvol");
        write_labels(&r, &l).unwrap();
        assert_eq!(read_labels(&r).unwrap(), l);
        assert!(matches!(read_volume(&r), Err(Error::ChannelMismatch { .. })));
        assert!(matches!(read_volume(&dir.path().join("missing.vvol")), Err(Error::Io { .. })));
    }
}
