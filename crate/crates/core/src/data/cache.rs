use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::audio::Spectrogram;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"MELF";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

/// Serializes `spec` as `MELF`, five little-endian u32 header fields
/// (version, n_mels, n_frames, sample_rate, hop), then f32 LE values.
pub fn write_entry(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * spec.values.len());
    out.extend_from_slice(&CACHE_MAGIC);
    for v in [
        CACHE_VERSION,
        spec.n_mels as u32,
        spec.n_frames as u32,
        spec.sample_rate,
        spec.hop as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &spec.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_entry(bytes: &[u8], what: &str) -> Result<Spectrogram> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::LengthMismatch {
            what: what.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != CACHE_MAGIC {
        return Err(Error::BadMagic {
            what: what.into(),
            found: magic,
        });
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = field(0);
    if version != CACHE_VERSION {
        return Err(Error::UnsupportedVersion {
            what: what.into(),
            version,
        });
    }
    let (n_mels, n_frames) = (field(1) as usize, field(2) as usize);
    let expected = n_mels
        .checked_mul(n_frames)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::invalid(format!("{what}: header dimensions overflow")))?;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            what: what.into(),
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Spectrogram::new(n_mels, n_frames, field(3), field(4) as usize, values)
}

/// File for example `id` inside `dir`. Ids are sanitized to
/// `[A-Za-z0-9._-]`; when that changes the id, a short digest of the original
/// keeps distinct ids on distinct files.
pub fn cache_path(dir: &Path, id: &str) -> PathBuf {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    let name = if clean == id && !id.starts_with('.') {
        format!("{clean}.melf")
    } else {
        let digest = Sha256::digest(id.as_bytes());
        let tag: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        format!("{clean}-{tag}.melf")
    };
    dir.join(name)
}

/// Writes through a temporary file and a rename so readers never see a
/// partial entry.
pub fn cache_write(dir: &Path, id: &str, spec: &Spectrogram) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = cache_path(dir, id);
    let tmp = path.with_extension("melf.tmp");
    fs::write(&tmp, write_entry(spec)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn cache_read(dir: &Path, id: &str) -> Result<Spectrogram> {
    let path = cache_path(dir, id);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    read_entry(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Spectrogram {
        let values = (0..12).map(|i| i as f32 * -0.37 + 1e-30).collect();
        Spectrogram::new(3, 4, 12_000, 256, values).unwrap()
    }

    #[test]
    fn layout() {
        let b = write_entry(&grid());
        assert_eq!(&b[..4], b"MELF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 12_000);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 256);
        assert_eq!(b.len(), 24 + 48);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid();
        let p = cache_write(dir.path(), "song/1:a", &g).unwrap();
        assert!(p.exists());
        assert_eq!(cache_read(dir.path(), "song/1:a").unwrap(), g);
    }

    #[test]
    fn truncated_payload() {
        let mut b = write_entry(&grid());
        b.truncate(b.len() - 3);
        assert!(matches!(read_entry(&b, "x"), Err(Error::LengthMismatch { expected: 72, found: 69, .. })));
        assert!(matches!(read_entry(&b[..10], "x"), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut b = write_entry(&grid());
        b[0] = b'X';
        assert!(matches!(read_entry(&b, "x"), Err(Error::BadMagic { found, .. }) if &found == b"XELF"));
        let mut b = write_entry(&grid());
        b[4] = 9;
        assert!(matches!(read_entry(&b, "x"), Err(Error::UnsupportedVersion { version: 9, .. })));
    }

    #[test]
    fn names_are_distinct_and_safe() {
        let d = Path::new("/c");
        assert_eq!(cache_path(d, "abc_1.x"), PathBuf::from("/c/abc_1.x.melf"));
        let a = cache_path(d, "a/b");
        let b = cache_path(d, "a_b");
        let c = cache_path(d, "a:b");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert!(a.file_name().unwrap().to_str().unwrap().starts_with("a_b-"));
        assert_eq!(cache_path(d, "..").parent(), Some(d));
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(m in 1usize..6, n in 1usize..20, bits in prop::collection::vec(any::<u32>(), 120)) {
            let values: Vec<f32> = (0..m * n)
                .map(|i| f32::from_bits(bits[i % bits.len()]))
                .map(|v| if v.is_finite() { v } else { 0.5 })
                .collect();
            let s = Spectrogram::new(m, n, 44_100, 441, values).unwrap();
            let back = read_entry(&write_entry(&s), "p").unwrap();
            prop_assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            s.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!((back.n_mels, back.n_frames, back.sample_rate, back.hop), (m, n, 44_100, 441));
        }
    }
}
