//! Labeled complex constellations, Gray-mapped square QAM and the text
//! file format used to exchange them.
//!
//! Labels are stored as integers; bit 0 of an m-bit label is its most
//! significant bit, i.e. the first bit `b_1` of the transmitted pattern.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_BITS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits: usize,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    /// `index_of[label]` is the point carrying `label`.
    index_of: Vec<u32>,
}

impl Constellation {
    /// Builds a constellation from points and their labels, checking that the
    /// labels are a permutation of all `bits`-bit patterns.
    pub fn new(bits: usize, points: Vec<Complex64>, labels: Vec<u32>) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::Validation(format!(
                "bits per symbol must be in 1..={MAX_BITS}, got {bits}"
            )));
        }
        let order = 1usize << bits;
        if points.len() != order || labels.len() != order {
            return Err(Error::Validation(format!(
                "expected {order} points and labels, got {} points and {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(Error::Validation(format!("non-finite point {p}")));
        }
        let mut index_of = vec![u32::MAX; order];
        for (i, &label) in labels.iter().enumerate() {
            let slot = index_of.get_mut(label as usize).ok_or_else(|| {
                Error::Validation(format!("label {label} does not fit in {bits} bits"))
            })?;
            if *slot != u32::MAX {
                return Err(Error::Validation(format!(
                    "duplicate label {}",
                    format_label(label, bits)
                )));
            }
            *slot = i as u32;
        }
        Ok(Self {
            bits,
            points,
            labels,
            index_of,
        })
    }

    /// Point `i` carries label `i`.
    pub fn with_identity_labels(bits: usize, points: Vec<Complex64>) -> Result<Self> {
        let labels = (0..points.len() as u32).collect();
        Self::new(bits, points, labels)
    }

    /// Gray-mapped square QAM with unit mean power.
    ///
    /// The first `m/2` label bits select the in-phase level and the last
    /// `m/2` the quadrature level, each through a reflected binary Gray code.
    /// Point `i` carries label `i`.
    pub fn square_qam(bits: usize) -> Result<Self> {
        if bits % 2 != 0 || !(2..=10).contains(&bits) {
            return Err(Error::InvalidArgument(format!(
                "square QAM needs an even number of bits in 2..=10, got {bits}"
            )));
        }
        let half = bits / 2;
        let side = 1usize << half;
        // level index whose Gray code is g
        let mut level_of_gray = vec![0usize; side];
        for level in 0..side {
            level_of_gray[level ^ (level >> 1)] = level;
        }
        let amplitude = |level: usize| (2 * level) as f64 - (side - 1) as f64;
        let points = (0..1usize << bits)
            .map(|label| {
                let gi = label >> half;
                let gq = label & (side - 1);
                Complex64::new(amplitude(level_of_gray[gi]), amplitude(level_of_gray[gq]))
            })
            .collect();
        Self::with_identity_labels(bits, points)?.normalize()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Index of the point carrying `label`.
    pub fn index_of_label(&self, label: u32) -> usize {
        self.index_of[label as usize] as usize
    }

    pub fn point_for_label(&self, label: u32) -> Complex64 {
        self.points[self.index_of_label(label)]
    }

    /// Bit `bit` (0 = MSB) of the label of point `index`.
    pub fn label_bit(&self, index: usize, bit: usize) -> u8 {
        ((self.labels[index] >> (self.bits - 1 - bit)) & 1) as u8
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Scales all points by one positive real so the mean energy is 1.
    pub fn normalize(&self) -> Result<Self> {
        let power = self.mean_power();
        if power == 0.0 {
            return Err(Error::DegenerateConstellation);
        }
        let scale = power.sqrt().recip();
        Ok(Self {
            points: self.points.iter().map(|p| p * scale).collect(),
            ..self.clone()
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p * factor).collect(),
            ..self.clone()
        }
    }

    /// Writes the tab-separated text format (`# m=<m>` header, one
    /// `<label bits>\t<Re>\t<Im>` row per point).
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# m={}\n", self.bits);
        for (p, &label) in self.points.iter().zip(&self.labels) {
            let _ = writeln!(out, "{}\t{:.16e}\t{:.16e}", format_label(label, self.bits), p.re, p.im);
        }
        out
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut bits = None;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line_no == 1 {
                let m = line
                    .strip_prefix("# m=")
                    .ok_or_else(|| parse_err(line_no, "expected header `# m=<m>`"))?;
                let m: usize = m
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, "bits per symbol is not an integer"))?;
                if !(1..=MAX_BITS).contains(&m) {
                    return Err(parse_err(line_no, "bits per symbol out of range"));
                }
                bits = Some(m);
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let m = bits.expect("header parsed on line 1");
            let mut fields = line.split('\t');
            let (Some(label), Some(re), Some(im), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err(line_no, "expected three tab-separated fields"));
            };
            if label.len() != m || !label.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(parse_err(line_no, "label must be a string of m binary digits"));
            }
            let label = u32::from_str_radix(label, 2).expect("checked binary digits");
            let re: f64 = re
                .parse()
                .map_err(|_| parse_err(line_no, "real part is not a number"))?;
            let im: f64 = im
                .parse()
                .map_err(|_| parse_err(line_no, "imaginary part is not a number"))?;
            labels.push(label);
            points.push(Complex64::new(re, im));
        }
        let bits = bits.ok_or_else(|| parse_err(1, "empty file"))?;
        Self::new(bits, points, labels)
    }
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn format_label(label: u32, bits: usize) -> String {
    format!("{:0width$b}", label, width = bits)
}
