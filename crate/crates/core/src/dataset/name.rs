use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Capture site code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Location {
    /// Confined indoor space.
    CC,
    /// Open indoor space.
    CM,
    /// Open outdoor space.
    CL,
}

impl Location {
    pub const ALL: [Location; 3] = [Location::CC, Location::CM, Location::CL];

    pub fn code(self) -> &'static str {
        match self {
            Location::CC => "CC",
            Location::CM => "CM",
            Location::CL => "CL",
        }
    }
}

/// Parsed `LLIISS_t1_t2` sample identifier. The timestamp text is kept
/// verbatim so rendering reproduces the original string exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleName {
    pub location: Location,
    pub interaction: u8,
    pub pair: u8,
    pub t_start: f64,
    pub t_end: f64,
    t_start_text: String,
    t_end_text: String,
}

fn err(name: &str, field: &'static str, reason: impl Into<String>) -> CoreError {
    CoreError::SampleName { name: name.to_string(), field, reason: reason.into() }
}

fn parse_two_digits(name: &str, s: &str, field: &'static str) -> Result<u8> {
    if s.len() != 2 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err(name, field, format!("expected two digits, found '{s}'")));
    }
    Ok(s.parse().expect("two ascii digits"))
}

fn parse_decimal(name: &str, s: &str, field: &'static str) -> Result<f64> {
    let mut parts = s.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return Err(err(name, field, format!("expected a decimal number, found '{s}'")));
    }
    s.parse().map_err(|_| err(name, field, format!("not a number: '{s}'")))
}

impl SampleName {
    pub fn parse(name: &str) -> Result<Self> {
        if !name.is_ascii() {
            return Err(err(name, "format", "non-ASCII characters"));
        }
        let parts: Vec<&str> = name.split('_').collect();
        if parts.len() != 3 {
            return Err(err(name, "format", "expected LLIISS_t1_t2"));
        }
        let head = parts[0];
        if head.len() != 6 {
            return Err(err(name, "format", format!("prefix '{head}' is not six characters")));
        }
        let location = match &head[0..2] {
            "CC" => Location::CC,
            "CM" => Location::CM,
            "CL" => Location::CL,
            other => return Err(err(name, "location", format!("unknown location code '{other}'"))),
        };
        let interaction = parse_two_digits(name, &head[2..4], "interaction")?;
        if interaction > 11 {
            return Err(err(name, "interaction", format!("{interaction} not in 0..=11")));
        }
        let pair = parse_two_digits(name, &head[4..6], "pair")?;
        if !(1..=10).contains(&pair) {
            return Err(err(name, "pair", format!("{pair} not in 1..=10")));
        }
        let t_start = parse_decimal(name, parts[1], "t_start")?;
        let t_end = parse_decimal(name, parts[2], "t_end")?;
        if t_start >= t_end {
            return Err(err(name, "t_end", format!("end {t_end} not after start {t_start}")));
        }
        Ok(Self {
            location,
            interaction,
            pair,
            t_start,
            t_end,
            t_start_text: parts[1].to_string(),
            t_end_text: parts[2].to_string(),
        })
    }

    /// Build from numeric parts; timestamps render with one decimal place.
    pub fn new(location: Location, interaction: u8, pair: u8, t_start: f64, t_end: f64) -> Result<Self> {
        let text = format!("{}{:02}{:02}_{:.1}_{:.1}", location.code(), interaction, pair, t_start, t_end);
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        format!(
            "{}{:02}{:02}_{}_{}",
            self.location.code(),
            self.interaction,
            self.pair,
            self.t_start_text,
            self.t_end_text
        )
    }
}

impl fmt::Display for SampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for SampleName {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_examples() {
        let n = SampleName::parse("CC0503_12.0_45.5").unwrap();
        assert_eq!((n.location, n.interaction, n.pair), (Location::CC, 5, 3));
        assert_eq!((n.t_start, n.t_end), (12.0, 45.5));

        let n = SampleName::parse("CL1110_0.0_8.2").unwrap();
        assert_eq!((n.location, n.interaction, n.pair), (Location::CL, 11, 10));
        assert_eq!((n.t_start, n.t_end), (0.0, 8.2));
    }

    #[test]
    fn unknown_location_names_the_field() {
        match SampleName::parse("XX0101_1_2") {
            Err(CoreError::SampleName { field, .. }) => assert_eq!(field, "location"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let field = |s: &str| match SampleName::parse(s) {
            Err(CoreError::SampleName { field, .. }) => field,
            other => panic!("{s}: unexpected {other:?}"),
        };
        assert_eq!(field("CC1201_0_1"), "interaction");
        assert_eq!(field("CC0000_0_1"), "pair");
        assert_eq!(field("CC0011_0_1"), "pair");
        assert_eq!(field("CC0001_2_1"), "t_end");
        assert_eq!(field("CC0001_a_1"), "t_start");
        assert_eq!(field("CC0001_0"), "format");
        assert_eq!(field("CC001_0_1"), "format");
    }

    #[test]
    fn integer_timestamps_round_trip() {
        assert_eq!(SampleName::parse("CC0001_0_1").unwrap().render(), "CC0001_0_1");
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            loc in 0usize..3, ii in 0u8..12, ss in 1u8..11,
            a in 0u32..5000, b in 1u32..5000, fa in proptest::option::of(0u32..100), fb in proptest::option::of(0u32..100)
        ) {
            let t1 = match fa { Some(f) => format!("{a}.{f}"), None => a.to_string() };
            let end = a + b;
            let t2 = match fb { Some(f) => format!("{end}.{f}"), None => end.to_string() };
            let name = format!("{}{:02}{:02}_{}_{}", Location::ALL[loc].code(), ii, ss, t1, t2);
            let parsed = SampleName::parse(&name).unwrap();
            prop_assert_eq!(parsed.render(), name);
        }
    }
}
