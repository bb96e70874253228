//! File formats.
//!
//! Cube files (`.lmsc`), little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `LMSC` |
//! | 4 | `u32` version = 1 |
//! | 12 | `u32` width, height, channels |
//! | 16 | `f64` start_nm, step_nm |
//! | ... | `f32` values, row-major `(y, x, channel)` |
//!
//! Coded frame files (`.lmcf`) use the same discipline: magic `LMCF`, `u32`
//! version = 1, `u32` width, height, `f64` noise_sigma_frac, `u64` seed, `u64`
//! frame index, then `f32` values in row-major `(y, x)` order.
//!
//! Sub-image sets (`.lmsi`): magic `LMSI`, `u32` version = 1, `u32` width,
//! height, LED count, `u64` frame index, then per LED a `u32` name length,
//! the UTF-8 name, `f64` timestamp and a `u8` aligned flag, followed by the
//! `f32` images in LED order.
//!
//! Spectral curves are CSV with header `wavelength_nm,value` on a uniform
//! wavelength grid.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::demosaic::SubImageSet;
use crate::forward::CodedFrame;
use crate::spectral::{HyperCube, SpectralCurve, WavelengthGrid};

pub const CUBE_MAGIC: &[u8; 4] = b"LMSC";
pub const FRAME_MAGIC: &[u8; 4] = b"LMCF";
pub const SUBIMAGE_MAGIC: &[u8; 4] = b"LMSI";
pub const FORMAT_VERSION: u32 = 1;

const CUBE_HEADER_LEN: usize = 4 + 4 + 12 + 16;
const FRAME_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8;

pub fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(CUBE_HEADER_LEN + cube.data().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(cube.width() as u32).unwrap();
    out.write_u32::<LittleEndian>(cube.height() as u32).unwrap();
    out.write_u32::<LittleEndian>(cube.channels() as u32).unwrap();
    out.write_f64::<LittleEndian>(cube.grid().start_nm()).unwrap();
    out.write_f64::<LittleEndian>(cube.grid().step_nm()).unwrap();
    for &v in cube.data() {
        out.write_f32::<LittleEndian>(v as f32).unwrap();
    }
    out
}

pub fn decode_cube(bytes: &[u8], origin: &Path) -> Result<HyperCube> {
    let mut rd = Cursor::new(bytes);
    read_magic(&mut rd, CUBE_MAGIC, origin)?;
    let trunc = |_| Error::format(origin, "truncated header");
    let width = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let height = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let channels = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let start = rd.read_f64::<LittleEndian>().map_err(trunc)?;
    let step = rd.read_f64::<LittleEndian>().map_err(trunc)?;
    let grid = WavelengthGrid::new(start, step, channels)
        .map_err(|e| Error::format(origin, e.to_string()))?;
    let count = checked_count(&[width, height, channels], origin)?;
    let data = read_f32_payload(&mut rd, count, bytes.len() - CUBE_HEADER_LEN, origin)?;
    HyperCube::new(width, height, grid, data).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save_cube(path: impl AsRef<Path>, cube: &HyperCube) -> Result<()> {
    write_bytes(path.as_ref(), &encode_cube(cube))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes, path)
}

pub fn encode_frame(frame: &CodedFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.values().len() * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(frame.width() as u32).unwrap();
    out.write_u32::<LittleEndian>(frame.height() as u32).unwrap();
    out.write_f64::<LittleEndian>(frame.noise_sigma_frac()).unwrap();
    out.write_u64::<LittleEndian>(frame.seed()).unwrap();
    out.write_u64::<LittleEndian>(frame.frame_index()).unwrap();
    for &v in frame.values() {
        out.write_f32::<LittleEndian>(v as f32).unwrap();
    }
    out
}

pub fn decode_frame(bytes: &[u8], origin: &Path) -> Result<CodedFrame> {
    let mut rd = Cursor::new(bytes);
    read_magic(&mut rd, FRAME_MAGIC, origin)?;
    let trunc = |_| Error::format(origin, "truncated header");
    let width = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let height = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let sigma = rd.read_f64::<LittleEndian>().map_err(trunc)?;
    let seed = rd.read_u64::<LittleEndian>().map_err(trunc)?;
    let frame_index = rd.read_u64::<LittleEndian>().map_err(trunc)?;
    let count = checked_count(&[width, height], origin)?;
    let values = read_f32_payload(&mut rd, count, bytes.len() - FRAME_HEADER_LEN, origin)?;
    CodedFrame::new(width, height, values, sigma, seed, frame_index)
        .map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save_frame(path: impl AsRef<Path>, frame: &CodedFrame) -> Result<()> {
    write_bytes(path.as_ref(), &encode_frame(frame))
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<CodedFrame> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes, path)
}

pub fn encode_subimages(set: &SubImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + set.images.iter().map(|i| 4 * i.len() + 32).sum::<usize>());
    out.extend_from_slice(SUBIMAGE_MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(set.width as u32).unwrap();
    out.write_u32::<LittleEndian>(set.height as u32).unwrap();
    out.write_u32::<LittleEndian>(set.num_leds() as u32).unwrap();
    out.write_u64::<LittleEndian>(set.frame_index).unwrap();
    for l in 0..set.num_leds() {
        let name = set.led_names[l].as_bytes();
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name);
        out.write_f64::<LittleEndian>(set.timestamps[l]).unwrap();
        out.push(set.aligned[l] as u8);
    }
    for img in &set.images {
        for &v in img {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out
}

pub fn decode_subimages(bytes: &[u8], origin: &Path) -> Result<SubImageSet> {
    let mut rd = Cursor::new(bytes);
    read_magic(&mut rd, SUBIMAGE_MAGIC, origin)?;
    let trunc = |_| Error::format(origin, "truncated header");
    let width = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let height = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let leds = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let frame_index = rd.read_u64::<LittleEndian>().map_err(trunc)?;
    let count = checked_count(&[width, height, leds], origin)?;
    let (mut led_names, mut timestamps, mut aligned) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..leds {
        let len = rd.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let start = rd.position() as usize;
        let name = bytes
            .get(start..start + len)
            .ok_or_else(|| Error::format(origin, "truncated LED name"))?;
        led_names.push(
            String::from_utf8(name.to_vec()).map_err(|_| Error::format(origin, "LED name is not UTF-8"))?,
        );
        rd.set_position((start + len) as u64);
        timestamps.push(rd.read_f64::<LittleEndian>().map_err(trunc)?);
        aligned.push(rd.read_u8().map_err(trunc)? != 0);
    }
    let available = bytes.len() - rd.position() as usize;
    let data = read_f32_payload(&mut rd, count, available, origin)?;
    let images = data.chunks_exact(width * height).map(<[f64]>::to_vec).collect();
    Ok(SubImageSet {
        width,
        height,
        images,
        led_names,
        timestamps,
        aligned,
        frame_index,
    })
}

pub fn save_subimages(path: impl AsRef<Path>, set: &SubImageSet) -> Result<()> {
    write_bytes(path.as_ref(), &encode_subimages(set))
}

pub fn load_subimages(path: impl AsRef<Path>) -> Result<SubImageSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_subimages(&bytes, path)
}

fn read_magic(rd: &mut Cursor<&[u8]>, magic: &[u8; 4], origin: &Path) -> Result<()> {
    let mut found = [0u8; 4];
    rd.read_exact(&mut found)
        .map_err(|_| Error::format(origin, "file shorter than its magic"))?;
    if &found != magic {
        return Err(Error::format(
            origin,
            format!(
                "magic mismatch: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&found)
            ),
        ));
    }
    let version = rd
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format(origin, "truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported version {version}"),
        ));
    }
    Ok(())
}

fn checked_count(dims: &[usize], origin: &Path) -> Result<usize> {
    let mut n: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::format(origin, "zero dimension"));
        }
        n = n
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::format(origin, "dimension overflow"))?;
    }
    Ok(n)
}

fn read_f32_payload(
    rd: &mut Cursor<&[u8]>,
    count: usize,
    available: usize,
    origin: &Path,
) -> Result<Vec<f64>> {
    if available < count * 4 {
        return Err(Error::format(
            origin,
            format!(
                "truncated payload: {} of {} bytes",
                available,
                count * 4
            ),
        ));
    }
    if available > count * 4 {
        return Err(Error::format(origin, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(rd.read_f32::<LittleEndian>().expect("length checked") as f64);
    }
    Ok(data)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A wavelength-indexed table with one or more named columns.
#[derive(Clone, Debug)]
pub struct SpectralTable {
    pub grid: WavelengthGrid,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl SpectralTable {
    pub fn curve(&self, i: usize) -> SpectralCurve {
        SpectralCurve::new(self.grid, self.columns[i].clone()).expect("column length matches grid")
    }

    pub fn curves(&self) -> Vec<SpectralCurve> {
        (0..self.columns.len()).map(|i| self.curve(i)).collect()
    }
}

pub fn parse_table(text: &str, origin: &Path) -> Result<SpectralTable> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let csv_err = |source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let headers = rd.headers().map_err(csv_err)?.clone();
    if headers.len() < 2 || &headers[0] != "wavelength_nm" {
        return Err(Error::format(
            origin,
            "expected a `wavelength_nm` column followed by value columns",
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut wavelengths = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::format(origin, format!("line {}: bad number in column {}", line + 2, i + 1))
                })
        };
        wavelengths.push(parse(0)?);
        for (i, col) in columns.iter_mut().enumerate() {
            col.push(parse(i + 1)?);
        }
    }
    if wavelengths.is_empty() {
        return Err(Error::format(origin, "no data rows"));
    }
    let step = if wavelengths.len() > 1 {
        wavelengths[1] - wavelengths[0]
    } else {
        1.0
    };
    for (i, pair) in wavelengths.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - step).abs() > 1e-6 * step.abs().max(1.0) {
            return Err(Error::format(
                origin,
                format!("non-uniform wavelength spacing at line {}", i + 3),
            ));
        }
    }
    let grid = WavelengthGrid::new(wavelengths[0], step, wavelengths.len())
        .map_err(|e| Error::format(origin, e.to_string()))?;
    Ok(SpectralTable {
        grid,
        names,
        columns,
    })
}

pub fn load_table(path: impl AsRef<Path>) -> Result<SpectralTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, path)
}

pub fn load_curve(path: impl AsRef<Path>) -> Result<SpectralCurve> {
    let path = path.as_ref();
    let table = load_table(path)?;
    if table.columns.len() != 1 {
        return Err(Error::format(
            path,
            format!("expected one value column, found {}", table.columns.len()),
        ));
    }
    Ok(table.curve(0))
}

pub fn curve_to_csv(curve: &SpectralCurve) -> String {
    let mut s = String::from("wavelength_nm,value\n");
    for (nm, v) in curve.grid().centers().zip(curve.values()) {
        s.push_str(&format!("{nm},{v}\n"));
    }
    s
}

pub fn save_curve(path: impl AsRef<Path>, curve: &SpectralCurve) -> Result<()> {
    write_bytes(path.as_ref(), curve_to_csv(curve).as_bytes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PngKind {
    Gray8,
    Gray16,
    Rgb8,
}

/// Encodes raw samples (big-endian for 16-bit) as a PNG.
pub fn encode_png(width: usize, height: usize, kind: PngKind, samples: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        let (color, depth) = match kind {
            PngKind::Gray8 => (png::ColorType::Grayscale, png::BitDepth::Eight),
            PngKind::Gray16 => (png::ColorType::Grayscale, png::BitDepth::Sixteen),
            PngKind::Rgb8 => (png::ColorType::Rgb, png::BitDepth::Eight),
        };
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header()?;
        w.write_image_data(samples)?;
    }
    Ok(out)
}

pub fn save_png(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    kind: PngKind,
    samples: &[u8],
) -> Result<()> {
    write_bytes(path.as_ref(), &encode_png(width, height, kind, samples)?)
}

/// 16-bit grayscale preview of a coded frame, scaled so the frame maximum maps to 65535.
pub fn frame_preview_png(frame: &CodedFrame) -> Result<Vec<u8>> {
    let max = frame
        .values()
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut samples = Vec::with_capacity(frame.values().len() * 2);
    for &v in frame.values() {
        let q = ((v / max).clamp(0.0, 1.0) * 65535.0).round() as u16;
        samples.extend_from_slice(&q.to_be_bytes());
    }
    encode_png(frame.width(), frame.height(), PngKind::Gray16, &samples)
}
