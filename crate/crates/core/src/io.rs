//! File formats: photon traces (CSV and binary) and field images (CSV,
//! 16-bit PGM and PNG with a range sidecar).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scan::{FieldImage, Pixel};
use crate::simulator::PhotonTrace;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {:?}", path.display(), other)),
    }
}

/// Columns `t_start_s,counts`, one row per bin.
pub fn write_trace_csv(path: &Path, trace: &PhotonTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t_start_s", "counts"]).map_err(|e| csv_error(path, e))?;
    for (k, c) in trace.counts.iter().enumerate() {
        w.write_record([trace.bin_start(k).to_string(), c.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV. The bin width is inferred from the time column unless
/// given; a single-bin file needs it given.
pub fn read_trace_csv(path: &Path, dwell: Option<f64>) -> Result<PhotonTrace> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut times = Vec::new();
    let mut counts = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| Error::Parse(format!("{}: missing column {i}", path.display())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        };
        times.push(field(0)?);
        let c = field(1)?;
        if !(c >= 0.0) {
            return Err(Error::Parse(format!("{}: negative count {c}", path.display())));
        }
        counts.push(c);
    }
    let dwell = match dwell {
        Some(d) => d,
        None if times.len() >= 2 => (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64,
        None => {
            return Err(Error::Parse(format!(
                "{}: cannot infer the bin width from fewer than two rows",
                path.display()
            )))
        }
    };
    Ok(PhotonTrace::new(dwell, times.first().copied().unwrap_or(0.0), counts))
}

/// Little-endian framing: u64 bin count, f64 dwell, then one u32 per bin.
/// Counts must be whole numbers; the start time is not stored.
pub fn write_trace_binary(path: &Path, trace: &PhotonTrace) -> Result<()> {
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(16 + 4 * trace.len());
    buf.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    buf.extend_from_slice(&trace.dwell.to_le_bytes());
    for &c in &trace.counts {
        if c.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&c) {
            return Err(Error::InvalidParams(format!(
                "binary traces hold whole counts only, got {c}"
            )));
        }
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_trace_binary(path: &Path) -> Result<PhotonTrace> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Parse(format!("{}: truncated header", path.display())));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let dwell = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if body.len() != 4 * n {
        return Err(Error::Parse(format!(
            "{}: header declares {n} bins but {} bytes follow",
            path.display(),
            body.len()
        )));
    }
    let counts = body
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(PhotonTrace::new(dwell, 0.0, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Csv,
    Pgm16,
    Png,
}

impl std::str::FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ImageFormat::Csv),
            "pgm" | "pgm16" => Ok(ImageFormat::Pgm16),
            "png" => Ok(ImageFormat::Png),
            other => Err(Error::InvalidParams(format!("unknown image format {other:?}"))),
        }
    }
}

/// Linear map from field to 16-bit grey levels. Locked pixels span
/// 1…65535, unlocked pixels are 0. A flat image is mid-grey.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreyMapping {
    pub min: f64,
    pub max: f64,
}

pub const UNLOCKED_GREY: u16 = 0;
pub const FLAT_GREY: u16 = 32768;

impl GreyMapping {
    pub fn for_image(img: &FieldImage) -> Self {
        let (min, max) = img
            .pixels
            .iter()
            .filter(|p| p.lock)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.b), hi.max(p.b)));
        if min.is_finite() {
            GreyMapping { min, max }
        } else {
            GreyMapping { min: 0.0, max: 0.0 }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    pub fn grey(&self, px: &Pixel) -> u16 {
        if !px.lock {
            UNLOCKED_GREY
        } else if self.is_degenerate() {
            FLAT_GREY
        } else {
            let u = ((px.b - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
            1 + (u * 65534.0).round() as u16
        }
    }
}

/// Path of the range sidecar written next to a rendered image.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

fn write_sidecar(path: &Path, img: &FieldImage, m: &GreyMapping, format: &str) -> Result<()> {
    let side = sidecar_path(path);
    let text = format!(
        "format = \"{format}\"\nwidth = {}\nheight = {}\nmin_t = {:?}\nmax_t = {:?}\n\
         degenerate = {}\nflat_grey = {FLAT_GREY}\nunlocked_grey = {UNLOCKED_GREY}\n\
         locked_grey_range = [1, 65535]\nrow0_y_m = {:?}\npitch_m = {:?}\n",
        img.nx,
        img.ny,
        m.min,
        m.max,
        m.is_degenerate(),
        img.origin[1],
        img.pitch,
    );
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

fn greys(img: &FieldImage, m: &GreyMapping) -> Vec<u16> {
    img.pixels.iter().map(|p| m.grey(p)).collect()
}

pub fn export_image(img: &FieldImage, format: ImageFormat, path: &Path) -> Result<()> {
    match format {
        ImageFormat::Csv => write_image_csv(path, img),
        ImageFormat::Pgm16 => {
            let m = GreyMapping::for_image(img);
            let mut w = create(path)?;
            let mut buf = format!("P5\n{} {}\n65535\n", img.nx, img.ny).into_bytes();
            for g in greys(img, &m) {
                buf.extend_from_slice(&g.to_be_bytes());
            }
            w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
            write_sidecar(path, img, &m, "pgm16")
        }
        ImageFormat::Png => {
            let m = GreyMapping::for_image(img);
            let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                image::ImageBuffer::from_raw(img.nx as u32, img.ny as u32, greys(img, &m))
                    .ok_or_else(|| Error::InvalidParams("image dimensions do not match pixel count".into()))?;
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::Image {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
            write_sidecar(path, img, &m, "png16")
        }
    }
}

/// Columns `x_m,y_m,b_T,db_T,lock`, row-major with x fastest.
pub fn write_image_csv(path: &Path, img: &FieldImage) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["x_m", "y_m", "b_T", "db_T", "lock"])
        .map_err(|e| csv_error(path, e))?;
    for j in 0..img.ny {
        for i in 0..img.nx {
            let p = img.at(i, j);
            w.write_record([
                img.x(i).to_string(),
                img.y(j).to_string(),
                p.b.to_string(),
                p.db.to_string(),
                (p.lock as u8).to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_image_csv(path: &Path) -> Result<FieldImage> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut locks = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = row
                .get(k)
                .ok_or_else(|| Error::Parse(format!("{}: missing column {k}", path.display())))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        }
        let lock = match row.get(4).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(Error::Parse(format!("{}: bad lock value {other:?}", path.display()))),
        };
        rows.push(vals);
        locks.push(lock);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: empty image", path.display())));
    }
    let y0 = rows[0][1];
    let nx = rows.iter().take_while(|r| r[1] == y0).count();
    if rows.len() % nx != 0 {
        return Err(Error::Parse(format!("{}: ragged grid", path.display())));
    }
    let ny = rows.len() / nx;
    let pitch = if nx > 1 {
        rows[1][0] - rows[0][0]
    } else if ny > 1 {
        rows[nx][1] - y0
    } else {
        0.0
    };
    let pixels = rows
        .iter()
        .zip(&locks)
        .map(|(r, &lock)| Pixel { b: r[2], db: r[3], lock })
        .collect();
    Ok(FieldImage {
        nx,
        ny,
        origin: [rows[0][0], y0],
        pitch,
        pixels,
        config: None,
        wall_time: 0.0,
    })
}
