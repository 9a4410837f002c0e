//! Binary PPM (P6) and PGM (P5) with maxval 255.
//!
//! Readers consume exactly one image from the stream, so they can be used on
//! a pipe carrying several images back to back.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{BinaryMask, ColorImage, GrayImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_byte<R: BufRead>(r: &mut R) -> std::io::Result<Option<u8>> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(None),
        _ => Ok(Some(b[0])),
    }
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
/// Consumes the single whitespace byte that terminates the token.
fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = String::new();
    loop {
        let b = read_byte(r).map_err(|e| format_err(format!("header read failed: {e}")))?;
        match b {
            None => {
                if token.is_empty() {
                    return Err(format_err("unexpected end of stream in header"));
                }
                return Ok(token);
            }
            Some(b'#') if token.is_empty() => loop {
                match read_byte(r).map_err(|e| format_err(e.to_string()))? {
                    None | Some(b'\n') | Some(b'\r') => break,
                    _ => {}
                }
            },
            Some(c) if c.is_ascii_whitespace() => {
                if !token.is_empty() {
                    return Ok(token);
                }
            }
            Some(c) => token.push(c as char),
        }
    }
}

fn parse_dim(tok: &str, what: &str) -> Result<usize> {
    let v: usize = tok
        .parse()
        .map_err(|_| format_err(format!("invalid {what} '{tok}'")))?;
    if v == 0 {
        return Err(format_err(format!("{what} must be positive")));
    }
    Ok(v)
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let magic = read_token(r)?;
    let magic: [u8; 2] = match magic.as_bytes() {
        [b'P', d @ (b'5' | b'6')] => [b'P', *d],
        _ => return Err(format_err(format!("unsupported magic '{magic}'"))),
    };
    let width = parse_dim(&read_token(r)?, "width")?;
    let height = parse_dim(&read_token(r)?, "height")?;
    let maxval = read_token(r)?;
    if maxval != "255" {
        return Err(format_err(format!("maxval must be 255, got '{maxval}'")));
    }
    Ok(Header {
        magic,
        width,
        height,
    })
}

/// Returns `Ok(None)` on a clean end of stream before any header byte.
fn peek_eof<R: BufRead>(r: &mut R) -> Result<bool> {
    let buf = r
        .fill_buf()
        .map_err(|e| format_err(format!("read failed: {e}")))?;
    Ok(buf.is_empty())
}

fn read_payload<R: BufRead>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut data = vec![0u8; len];
    r.read_exact(&mut data)
        .map_err(|e| format_err(format!("truncated pixel data ({len} bytes expected): {e}")))?;
    Ok(data)
}

pub fn read_ppm<R: BufRead>(r: &mut R) -> Result<ColorImage> {
    let h = read_header(r)?;
    if h.magic != *b"P6" {
        return Err(format_err("expected P6 (binary PPM)"));
    }
    let data = read_payload(r, h.width * h.height * 3)?;
    ColorImage::new(h.width, h.height, data)
}

pub fn read_pgm<R: BufRead>(r: &mut R) -> Result<GrayImage> {
    let h = read_header(r)?;
    if h.magic != *b"P5" {
        return Err(format_err("expected P5 (binary PGM)"));
    }
    let data = read_payload(r, h.width * h.height)?;
    GrayImage::new(h.width, h.height, data)
}

/// Like [`read_ppm`] but returns `None` when the stream ends cleanly.
pub fn read_ppm_opt<R: BufRead>(r: &mut R) -> Result<Option<ColorImage>> {
    if peek_eof(r)? {
        return Ok(None);
    }
    read_ppm(r).map(Some)
}

/// A mask is a P5 image whose values are all 0 or 255.
pub fn read_mask<R: BufRead>(r: &mut R) -> Result<BinaryMask> {
    let g = read_pgm(r)?;
    mask_from_gray(&g)
}

pub fn mask_from_gray(g: &GrayImage) -> Result<BinaryMask> {
    let labels = g
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(format_err(format!(
                "mask value {other} at pixel ({}, {}) is neither 0 nor 255",
                i % g.width(),
                i / g.width()
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryMask::new(g.width(), g.height(), labels)
}

pub fn write_ppm<W: Write>(w: &mut W, img: &ColorImage) -> std::io::Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(img.data())
}

pub fn write_pgm<W: Write>(w: &mut W, img: &GrayImage) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(img.data())
}

pub fn write_mask<W: Write>(w: &mut W, mask: &BinaryMask) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let data: Vec<u8> = mask.labels().iter().map(|&f| if f { 255 } else { 0 }).collect();
    w.write_all(&data)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_ppm(path: &Path) -> Result<ColorImage> {
    with_path(path, read_ppm(&mut open(path)?))
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    with_path(path, read_pgm(&mut open(path)?))
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    with_path(path, read_mask(&mut open(path)?))
}

fn save_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn save_ppm(path: &Path, img: &ColorImage) -> Result<()> {
    save_with(path, |w| write_ppm(w, img))
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    save_with(path, |w| write_pgm(w, img))
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    save_with(path, |w| write_mask(w, mask))
}
