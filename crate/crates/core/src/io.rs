//! Binary containers (HSC1, FST1, PSF1), CSV tables, and PPM output.
//!
//! All binary formats are little-endian. Sample data are stored as `f32`,
//! wavelengths and lens positions as `f64`.
//!
//! ```text
//! HSC1  magic | u32 H, W, C | u32 meta_len | meta | f64 × C wavelengths | f32 data
//! FST1  magic | u32 H, W, N | u32 meta_len | meta | f64 × N positions   | f32 data
//! PSF1  magic | u32 N, C, K | f64 × N positions | f64 × C wavelengths  | f32 kernels (i, j, row, col)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::RgbImage;
use crate::optics::LensDispersion;
use crate::types::{FocalStack, HyperspectralCube, PsfStack, SpectralBasis, SpectralResponse};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const STACK_MAGIC: &[u8; 4] = b"FST1";
pub const PSF_MAGIC: &[u8; 4] = b"PSF1";

/// Ordered `key=value` lines carried in HSC1 and FST1 headers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(out, "{k}={}", v.replace('\n', " "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metadata line without '=': {line:?}")))?;
            out.push(k, v);
        }
        Ok(out)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, offset: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.offset;
        if n > left {
            return Err(Error::Truncated {
                offset: self.bytes.len(),
                needed: n - left,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn metadata(&mut self) -> Result<Metadata> {
        let len = self.u32()?;
        let raw = self.take(len)?;
        let text = std::str::from_utf8(raw).map_err(|e| Error::Format(format!("metadata is not UTF-8: {e}")))?;
        Metadata::parse(text)
    }

    fn finish(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after offset {}",
                self.bytes.len() - self.offset,
                self.offset
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

fn put_meta(out: &mut Vec<u8>, meta: &Metadata) -> Result<()> {
    let text = meta.to_text();
    put_u32(out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    Ok(())
}

fn dims(r: &mut Reader) -> Result<(usize, usize, usize)> {
    Ok((r.u32()?, r.u32()?, r.u32()?))
}

fn count(a: usize, b: usize, c: usize) -> Result<usize> {
    a.checked_mul(b)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))
}

pub fn encode_cube(cube: &HyperspectralCube, meta: &Metadata) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + cube.data().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    put_u32(&mut out, cube.height())?;
    put_u32(&mut out, cube.width())?;
    put_u32(&mut out, cube.channels())?;
    put_meta(&mut out, meta)?;
    put_f64s(&mut out, cube.wavelengths_nm());
    put_f32s(&mut out, cube.data());
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<(HyperspectralCube, Metadata)> {
    let mut r = Reader::new(bytes);
    r.magic(CUBE_MAGIC)?;
    let (h, w, c) = dims(&mut r)?;
    let meta = r.metadata()?;
    let wl = r.f64s(c)?;
    let data = r.f32s(count(h, w, c)?)?;
    r.finish()?;
    Ok((HyperspectralCube::new(h, w, wl, data)?, meta))
}

pub fn encode_stack(stack: &FocalStack, meta: &Metadata) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + stack.data().len() * 4);
    out.extend_from_slice(STACK_MAGIC);
    put_u32(&mut out, stack.height())?;
    put_u32(&mut out, stack.width())?;
    put_u32(&mut out, stack.count())?;
    put_meta(&mut out, meta)?;
    put_f64s(&mut out, stack.lens_positions_mm());
    put_f32s(&mut out, stack.data());
    Ok(out)
}

pub fn decode_stack(bytes: &[u8]) -> Result<(FocalStack, Metadata)> {
    let mut r = Reader::new(bytes);
    r.magic(STACK_MAGIC)?;
    let (h, w, n) = dims(&mut r)?;
    let meta = r.metadata()?;
    let pos = r.f64s(n)?;
    let data = r.f32s(count(h, w, n)?)?;
    r.finish()?;
    Ok((FocalStack::new(h, w, pos, data)?, meta))
}

pub fn encode_psfs(psfs: &PsfStack) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + psfs.kernels().len() * 4);
    out.extend_from_slice(PSF_MAGIC);
    put_u32(&mut out, psfs.count())?;
    put_u32(&mut out, psfs.channels())?;
    put_u32(&mut out, psfs.kernel_size())?;
    put_f64s(&mut out, psfs.lens_positions_mm());
    put_f64s(&mut out, psfs.wavelengths_nm());
    put_f32s(&mut out, psfs.kernels());
    Ok(out)
}

/// Kernels are renormalized after widening, since `f32` storage cannot hold
/// a unit sum to the container's tolerance.
pub fn decode_psfs(bytes: &[u8]) -> Result<PsfStack> {
    let mut r = Reader::new(bytes);
    r.magic(PSF_MAGIC)?;
    let (n, c, k) = dims(&mut r)?;
    let pos = r.f64s(n)?;
    let wl = r.f64s(c)?;
    let kernels = r.f32s(count(n, c, k * k)?)?;
    r.finish()?;
    if let Some(i) = kernels.iter().position(|v| *v < 0.0) {
        return Err(Error::Format(format!("negative kernel value at index {i}")));
    }
    PsfStack::from_measured(k, pos, wl, kernels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn load_cube(path: &Path) -> Result<(HyperspectralCube, Metadata)> {
    decode_cube(&read_file(path)?)
}

pub fn save_cube(path: &Path, cube: &HyperspectralCube, meta: &Metadata) -> Result<()> {
    write_file(path, &encode_cube(cube, meta)?)
}

pub fn load_stack(path: &Path) -> Result<(FocalStack, Metadata)> {
    decode_stack(&read_file(path)?)
}

pub fn save_stack(path: &Path, stack: &FocalStack, meta: &Metadata) -> Result<()> {
    write_file(path, &encode_stack(stack, meta)?)
}

pub fn load_psfs(path: &Path) -> Result<PsfStack> {
    decode_psfs(&read_file(path)?)
}

pub fn save_psfs(path: &Path, psfs: &PsfStack) -> Result<()> {
    write_file(path, &encode_psfs(psfs)?)
}

pub fn load_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn save_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file(path, bytes)
}

/// First line `v,C`, then one row per basis vector.
pub fn basis_to_csv(basis: &SpectralBasis) -> String {
    let mut out = format!("{},{}\n", basis.dim(), basis.channels());
    for k in 0..basis.dim() {
        let row: Vec<String> = basis.row(k).iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn basis_from_csv(text: &str) -> Result<SpectralBasis> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| Error::Format("empty basis file".into()))?;
    let parse_usize = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("bad basis header {head:?}: {e}")))
    };
    let (v, c) = head
        .split_once(',')
        .ok_or_else(|| Error::Format(format!("bad basis header {head:?}")))?;
    let (v, c) = (parse_usize(v)?, parse_usize(c)?);
    let mut rows = Vec::with_capacity(v * c);
    for (k, line) in lines.enumerate() {
        let vals = parse_floats(line)?;
        if vals.len() != c {
            return Err(Error::Format(format!("basis row {k} has {} values, expected {c}", vals.len())));
        }
        rows.extend(vals);
    }
    if rows.len() != v * c {
        return Err(Error::Format(format!("basis has {} rows, header says {v}", rows.len() / c.max(1))));
    }
    SpectralBasis::new(c, rows)
}

fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
        })
        .collect()
}

/// Two numeric columns after a required header line.
pub fn two_column_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("csv: {e}")))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("row {} has {} columns, expected 2", i + 1, rec.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("row {}: {s:?}: {e}", i + 1)));
        xs.push(num(&rec[0])?);
        ys.push(num(&rec[1])?);
    }
    if xs.is_empty() {
        return Err(Error::Format("table has no data rows".into()));
    }
    Ok((xs, ys))
}

/// `wavelength_nm,focal_length_mm`.
pub fn dispersion_from_csv(text: &str) -> Result<LensDispersion> {
    let (wl, f) = two_column_csv(text)?;
    LensDispersion::new(wl, f)
}

/// `wavelength_nm,response`.
pub fn response_from_csv(text: &str) -> Result<SpectralResponse> {
    let (wl, r) = two_column_csv(text)?;
    SpectralResponse::new(wl, r)
}

/// Binary PPM (P6), 8 bits per channel.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.to_bytes());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Cube,
    Stack,
    Psf,
}

pub fn sniff(bytes: &[u8]) -> Result<FileKind> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    match magic {
        m if m == CUBE_MAGIC => Ok(FileKind::Cube),
        m if m == STACK_MAGIC => Ok(FileKind::Stack),
        m if m == PSF_MAGIC => Ok(FileKind::Psf),
        m => Err(Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(m)))),
    }
}
