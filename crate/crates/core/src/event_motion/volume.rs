use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use vfi_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// A brightness-change event at column `x`, row `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: usize,
    pub y: usize,
    pub t: f64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: usize, y: usize, t: f64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x, self.y, self.t, self.p.sign())
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed event line {line:?}, expected \"x y t p\""));
        let mut it = line.split_whitespace();
        let x = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let y = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let t: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let p = match it.next().ok_or_else(bad)? {
            "1" | "+1" => Polarity::Positive,
            "-1" => Polarity::Negative,
            _ => return Err(bad()),
        };
        if it.next().is_some() || !t.is_finite() {
            return Err(bad());
        }
        Ok(Event { x, y, t, p })
    }
}

/// Reads one `x y t p` event per line; blank lines and `#` comments are skipped.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(trimmed.parse()?);
    }
    Ok(out)
}

pub fn write_events<W: Write>(mut writer: W, events: &[Event]) -> Result<()> {
    for e in events {
        writeln!(writer, "{e}")?;
    }
    Ok(())
}

/// Non-negative `[2B, H, W]` scatter of events: channels `0..B` hold positive
/// events, `B..2B` negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVolume<S> {
    bins: usize,
    data: Tensor<S>,
}

impl<S: Scalar> EventVolume<S> {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self { bins, data: Tensor::zeros(&[2 * bins, height, width]) }
    }

    pub fn from_tensor(bins: usize, data: Tensor<S>) -> Result<Self> {
        let s = data.shape();
        if s.len() != 3 || s[0] != 2 * bins {
            return Err(Error::Shape(format!("expected [{}, H, W] volume, got {s:?}", 2 * bins)));
        }
        Ok(Self { bins, data })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Value at pixel `(y, x)`, channel `c` in `0..2B`.
    pub fn at(&self, y: usize, x: usize, c: usize) -> S {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.data
    }

    pub fn total_mass(&self) -> S {
        self.data.sum()
    }

    pub fn polarity_mass(&self, p: Polarity) -> S {
        let plane = self.height() * self.width();
        let start = match p {
            Polarity::Positive => 0,
            Polarity::Negative => self.bins * plane,
        };
        self.data.data()[start..start + self.bins * plane].iter().copied().sum()
    }

    /// The same volume with the two polarity blocks exchanged.
    pub fn swap_polarity(&self) -> Self {
        let half = self.bins * self.height() * self.width();
        let mut data = self.data.data()[half..].to_vec();
        data.extend_from_slice(&self.data.data()[..half]);
        Self { bins: self.bins, data: Tensor::from_vec(self.data.shape(), data).expect("same size") }
    }
}

/// Scatters events with a linear temporal kernel into `bins` channels per polarity.
///
/// Timestamps are normalised by the min/max over the whole list; a degenerate
/// range maps every event to channel 0.
pub fn build_event_volume<S: Scalar>(events: &[Event], bins: usize, height: usize, width: usize) -> Result<EventVolume<S>> {
    if bins < 2 {
        return Err(Error::Config(format!("event volumes need at least 2 temporal bins, got {bins}")));
    }
    if let Some((index, e)) = events.iter().enumerate().find(|(_, e)| e.x >= width || e.y >= height) {
        return Err(Error::EventOutOfBounds { index, x: e.x, y: e.y, width, height });
    }
    let mut vol = EventVolume::zeros(bins, height, width);
    if events.is_empty() {
        return Ok(vol);
    }
    let (t1, tn) = events.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.t), hi.max(e.t)));
    let span = tn - t1;
    let last = (bins - 1) as f64;
    let plane = height * width;
    let data = vol.data.data_mut();
    for e in events {
        let ts = if span > 0.0 { last * (e.t - t1) / span } else { 0.0 };
        let base = match e.p {
            Polarity::Positive => 0,
            Polarity::Negative => bins,
        };
        let lo = ts.floor();
        for c in [lo, lo + 1.0] {
            if c < 0.0 || c > last {
                continue;
            }
            let w = 1.0 - (c - ts).abs();
            if w > 0.0 {
                data[(base + c as usize) * plane + e.y * width + e.x] += S::of(w);
            }
        }
    }
    Ok(vol)
}
