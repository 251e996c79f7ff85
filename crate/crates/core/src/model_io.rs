//! Little-endian binary model files: 4-byte magic, u32 format version,
//! u64 shape header, then f32 payload matrices row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub struct ModelWriter<W: Write> {
    inner: W,
}

impl ModelWriter<BufWriter<File>> {
    pub fn create(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = ModelWriter {
            inner: BufWriter::new(file),
        };
        w.inner
            .write_all(magic)
            .and_then(|_| w.inner.write_u32::<LittleEndian>(FORMAT_VERSION))
            .map_err(|e| Error::io(path, e))?;
        Ok(w)
    }
}

impl<W: Write> ModelWriter<W> {
    pub fn write_dims(&mut self, path: &Path, dims: &[u64]) -> Result<()> {
        for &d in dims {
            self.inner
                .write_u64::<LittleEndian>(d)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Values must already sit on the f32 grid; the cast is lossless.
    pub fn write_matrix(&mut self, path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
        for v in values {
            self.inner
                .write_f32::<LittleEndian>(v as f32)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct ModelReader<R: Read> {
    inner: R,
}

impl ModelReader<BufReader<File>> {
    pub fn open(path: &Path, magic: &[u8; 4], kind: &str) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = ModelReader {
            inner: BufReader::new(file),
        };
        let mut found = [0u8; 4];
        r.inner
            .read_exact(&mut found)
            .map_err(|e| Error::io(path, e))?;
        if &found != magic {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                message: format!(
                    "not a {kind} file: magic {:?} (expected {:?})",
                    String::from_utf8_lossy(&found),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        let version = r
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(path, e))?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported format version {version} (expected {FORMAT_VERSION})"
                ),
            });
        }
        Ok(r)
    }
}

impl<R: Read> ModelReader<R> {
    pub fn read_dim(&mut self, path: &Path) -> Result<u64> {
        self.inner
            .read_u64::<LittleEndian>()
            .map_err(|e| Error::io(path, e))
    }

    /// Read `len` f32 values as f64. A short read is reported as a shape
    /// mismatch rather than a bare IO error.
    pub fn read_matrix(&mut self, path: &Path, len: usize, name: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let v = self.inner.read_f32::<LittleEndian>().map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::ModelFormat {
                        path: path.to_path_buf(),
                        message: format!("truncated file: {name} has {i} of {len} expected values"),
                    }
                } else {
                    Error::io(path, e)
                }
            })?;
            out.push(v as f64);
        }
        Ok(out)
    }

    /// The payload must end exactly at the declared shapes.
    pub fn expect_eof(&mut self, path: &Path) -> Result<()> {
        let mut byte = [0u8; 1];
        match self.inner.read(&mut byte) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::ModelFormat {
                path: path.to_path_buf(),
                message: "trailing bytes after declared shapes".to_string(),
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}
