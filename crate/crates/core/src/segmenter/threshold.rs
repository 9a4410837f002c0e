use std::fmt;
use std::str::FromStr;

use super::SegmentBackend;
use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, ColorImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Red,
    Green,
    Blue,
    Luma,
}

impl Channel {
    #[inline]
    fn eval(self, [r, g, b]: [u8; 3]) -> f64 {
        match self {
            Channel::Red => f64::from(r),
            Channel::Green => f64::from(g),
            Channel::Blue => f64::from(b),
            Channel::Luma => 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "r" => Some(Channel::Red),
            "g" => Some(Channel::Green),
            "b" => Some(Channel::Blue),
            "luma" => Some(Channel::Luma),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Channel::Red => "r",
            Channel::Green => "g",
            Channel::Blue => "b",
            Channel::Luma => "luma",
        }
    }
}

/// A channel, or the difference of two channels, e.g. `luma` or `b-r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelExpr {
    pub plus: Channel,
    pub minus: Option<Channel>,
}

impl Default for ChannelExpr {
    fn default() -> Self {
        Self {
            plus: Channel::Luma,
            minus: None,
        }
    }
}

impl ChannelExpr {
    #[inline]
    pub fn eval(&self, px: [u8; 3]) -> f64 {
        self.plus.eval(px) - self.minus.map_or(0.0, |c| c.eval(px))
    }
}

impl FromStr for ChannelExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("segmenter.channel: cannot parse '{s}' (use r, g, b, luma or X-Y)"));
        let (plus, minus) = match s.split_once('-') {
            Some((a, b)) => (Channel::parse(a).ok_or_else(bad)?, Some(Channel::parse(b).ok_or_else(bad)?)),
            None => (Channel::parse(s).ok_or_else(bad)?, None),
        };
        Ok(Self { plus, minus })
    }
}

impl fmt::Display for ChannelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.minus {
            Some(m) => write!(f, "{}-{}", self.plus.name(), m.name()),
            None => f.write_str(self.plus.name()),
        }
    }
}

/// Foreground where the channel expression exceeds the threshold.
pub struct ThresholdSegmenter {
    expr: ChannelExpr,
    threshold: f64,
}

impl ThresholdSegmenter {
    pub fn new(expr: ChannelExpr, threshold: f64) -> Self {
        Self { expr, threshold }
    }

    pub fn apply(&self, frame: &ColorImage) -> BinaryMask {
        let labels = frame.pixels().map(|px| self.expr.eval(px) > self.threshold).collect();
        BinaryMask::new(frame.width(), frame.height(), labels).expect("same dimensions as frame")
    }
}

impl SegmentBackend for ThresholdSegmenter {
    fn segment(&mut self, _frame_id: u64, frame: &ColorImage) -> Result<BinaryMask> {
        Ok(self.apply(frame))
    }
}
