//! On-disk artifacts: feature files, checkpoints, retrieval indexes and
//! dataset manifests. Every binary format is little-endian and starts with a
//! four-byte magic and a u16 version.

pub mod checkpoint;
pub mod features_file;
pub mod index;
pub mod manifest;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use checkpoint::{fingerprint, read_checkpoint, write_checkpoint, Checkpoint};
pub use features_file::{read_features, write_features};
pub use index::{build_index, search, RetrievalIndex, SearchOutcome};
pub use manifest::{build_manifest, DatasetManifest, ManifestEntry, Split, SplitMode};

use crate::error::{Error, Result};

/// Write to a sibling temp file, fsync, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u16(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub fn str16(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len()).map_err(|_| Error::invalid(format!("string too long: {} bytes", s.len())))?;
        self.u16(n);
        self.bytes(s.as_bytes());
        Ok(())
    }

    pub fn len32(&mut self, n: usize, what: &str) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::invalid(format!("{what} count {n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Check magic and version; returns the reader positioned after them.
    pub fn open(buf: &'a [u8], magic: &[u8; 4], version: u16, what: &'static str) -> Result<Self> {
        if buf.len() < 6 || &buf[..4] != magic {
            return Err(Error::format(format!(
                "not a {what} file (expected magic {:?})",
                String::from_utf8_lossy(magic)
            )));
        }
        let v = u16::from_le_bytes([buf[4], buf[5]]);
        if v != version {
            return Err(Error::Format(format!(
                "{what} file version {v} is not supported (this build reads version {version}); \
                 regenerate it with this version of the tool"
            )));
        }
        Ok(Reader { buf, pos: 6, what })
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("{} file truncated at byte {}", self.what, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("{}: id is not UTF-8", self.what)))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    /// Upper bound check before allocating `n` items of `size` bytes.
    pub fn ensure(&self, n: usize, size: usize) -> Result<()> {
        if n.saturating_mul(size) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("{} file truncated (declares {n} items)", self.what)));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} file has {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.bin");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(read_file(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn reader_errors() {
        assert!(Reader::open(b"XXXX\x01\x00", b"EVFT", 1, "feature").is_err());
        let e = Reader::open(b"EVFT\x02\x00", b"EVFT", 1, "feature").err().unwrap();
        assert!(e.to_string().contains("version 2"));
        let mut r = Reader::open(b"EVFT\x01\x00\x05", b"EVFT", 1, "feature").unwrap();
        assert!(r.u32().is_err());
    }
}
