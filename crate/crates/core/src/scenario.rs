//! Context space of the eco-driving task family, procedural sampling, and
//! the plain-text corpus format.
//!
//! A corpus file starts with the header line `eco-mrtl-corpus v1` followed by
//! one record per line. Each record is a whitespace-separated list of
//! `key=value` pairs with the keys
//! `lane_length_m inflow_vph speed_limit_mps lane_count green_s red_s phase_offset_s penetration seed`
//! in that order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CORPUS_HEADER: &str = "eco-mrtl-corpus v1";

const KEYS: [&str; 9] = [
    "lane_length_m",
    "inflow_vph",
    "speed_limit_mps",
    "lane_count",
    "green_s",
    "red_s",
    "phase_offset_s",
    "penetration",
    "seed",
];

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: PartialOrd + Copy> Interval<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub const fn point(x: T) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn is_ordered(&self) -> bool {
        self.lo <= self.hi
    }
}

impl Interval<f64> {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Always consume one draw so point intervals keep the stream aligned.
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

/// Ranges of the intersection-approach features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSpace {
    pub lane_length: Interval<f64>,
    pub inflow: Interval<f64>,
    pub speed_limit: Interval<f64>,
    pub lane_count: Interval<u32>,
    pub green: Interval<f64>,
    pub red: Interval<f64>,
    pub penetration_levels: Vec<f64>,
}

impl Default for ContextSpace {
    fn default() -> Self {
        Self {
            lane_length: Interval::new(75.0, 400.0),
            inflow: Interval::new(675.0, 900.0),
            speed_limit: Interval::new(10.0, 15.0),
            lane_count: Interval::new(1, 3),
            green: Interval::new(25.0, 30.0),
            red: Interval::new(25.0, 30.0),
            penetration_levels: vec![0.2, 1.0],
        }
    }
}

impl ContextSpace {
    /// Default ranges with a single penetration level.
    pub fn with_penetration(level: f64) -> Self {
        Self {
            penetration_levels: vec![level],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let real = [
            ("lane_length", self.lane_length),
            ("inflow", self.inflow),
            ("speed_limit", self.speed_limit),
            ("green", self.green),
            ("red", self.red),
        ];
        for (name, iv) in real {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || !iv.is_ordered() {
                return Err(Error::InvalidSpace(format!(
                    "{name} interval [{}, {}] is not a finite ordered range",
                    iv.lo, iv.hi
                )));
            }
        }
        if self.lane_length.lo <= 0.0 || self.speed_limit.lo <= 0.0 {
            return Err(Error::InvalidSpace(
                "lane length and speed limit must be positive".into(),
            ));
        }
        if self.inflow.lo < 0.0 {
            return Err(Error::InvalidSpace("inflow must be non-negative".into()));
        }
        if self.green.lo <= 0.0 || self.red.lo <= 0.0 {
            return Err(Error::InvalidSpace("phase durations must be positive".into()));
        }
        if !self.lane_count.is_ordered() || self.lane_count.lo == 0 {
            return Err(Error::InvalidSpace(format!(
                "lane_count interval [{}, {}] must be ordered and start at 1 or more",
                self.lane_count.lo, self.lane_count.hi
            )));
        }
        if self.penetration_levels.is_empty() {
            return Err(Error::InvalidSpace("no penetration levels".into()));
        }
        if let Some(p) = self
            .penetration_levels
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidSpace(format!("penetration level {p} outside [0, 1]")));
        }
        Ok(())
    }

    /// Checks every field of `ctx` against this space.
    pub fn check(&self, ctx: &Context) -> Result<()> {
        let real = [
            ("lane_length_m", ctx.lane_length, self.lane_length),
            ("inflow_vph", ctx.inflow, self.inflow),
            ("speed_limit_mps", ctx.speed_limit, self.speed_limit),
            ("green_s", ctx.green_s, self.green),
            ("red_s", ctx.red_s, self.red),
        ];
        for (field, value, iv) in real {
            if !iv.contains(value) {
                return Err(Error::OutOfSpace { field, value, lo: iv.lo, hi: iv.hi });
            }
        }
        if !self.lane_count.contains(ctx.lane_count) {
            return Err(Error::OutOfSpace {
                field: "lane_count",
                value: ctx.lane_count.into(),
                lo: self.lane_count.lo.into(),
                hi: self.lane_count.hi.into(),
            });
        }
        let cycle = ctx.green_s + ctx.red_s;
        if !(0.0..cycle).contains(&ctx.phase_offset) {
            return Err(Error::OutOfSpace {
                field: "phase_offset_s",
                value: ctx.phase_offset,
                lo: 0.0,
                hi: cycle,
            });
        }
        if !self.penetration_levels.iter().any(|&p| p == ctx.penetration) {
            let lo = self.penetration_levels.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = self.penetration_levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::OutOfSpace { field: "penetration", value: ctx.penetration, lo, hi });
        }
        Ok(())
    }
}

/// One intersection approach: a single member of the task family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub lane_length: f64,
    pub inflow: f64,
    pub speed_limit: f64,
    pub lane_count: u32,
    pub green_s: f64,
    pub red_s: f64,
    pub phase_offset: f64,
    pub penetration: f64,
    pub seed: u64,
}

impl Context {
    pub fn cycle_s(&self) -> f64 {
        self.green_s + self.red_s
    }

    /// The same approach with a different AV share.
    pub fn with_penetration(&self, penetration: f64) -> Self {
        Self { penetration, ..self.clone() }
    }

    fn to_record(&self) -> String {
        format!(
            "lane_length_m={} inflow_vph={} speed_limit_mps={} lane_count={} green_s={} red_s={} phase_offset_s={} penetration={} seed={}",
            self.lane_length,
            self.inflow,
            self.speed_limit,
            self.lane_count,
            self.green_s,
            self.red_s,
            self.phase_offset,
            self.penetration,
            self.seed
        )
    }

    fn parse_record(line_no: usize, line: &str) -> Result<Self> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != KEYS.len() {
            return Err(Error::Parse {
                line: line_no,
                field: None,
                msg: format!("expected {} key=value pairs, found {}", KEYS.len(), tokens.len()),
            });
        }
        let mut values = [""; 9];
        for (i, (tok, key)) in tokens.iter().zip(KEYS).enumerate() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                field: Some(key.to_string()),
                msg: format!("`{tok}` is not a key=value pair"),
            })?;
            if k != key {
                return Err(Error::Parse {
                    line: line_no,
                    field: Some(key.to_string()),
                    msg: format!("expected key `{key}`, found `{k}`"),
                });
            }
            values[i] = v;
        }
        let real = |i: usize| -> Result<f64> {
            values[i]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    field: Some(KEYS[i].to_string()),
                    msg: format!("`{}` is not a finite number", values[i]),
                })
        };
        let int_err = |i: usize| Error::Parse {
            line: line_no,
            field: Some(KEYS[i].to_string()),
            msg: format!("`{}` is not an unsigned integer", values[i]),
        };
        Ok(Self {
            lane_length: real(0)?,
            inflow: real(1)?,
            speed_limit: real(2)?,
            lane_count: values[3].parse().map_err(|_| int_err(3))?,
            green_s: real(4)?,
            red_s: real(5)?,
            phase_offset: real(6)?,
            penetration: real(7)?,
            seed: values[8].parse().map_err(|_| int_err(8))?,
        })
    }
}

/// splitmix64 finalizer; used to split child seeds from a parent seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one context; every feature is an independent uniform draw.
pub fn sample_context<R: Rng + ?Sized>(space: &ContextSpace, rng: &mut R) -> Context {
    debug_assert!(space.validate().is_ok());
    let lane_length = space.lane_length.sample(rng);
    let inflow = space.inflow.sample(rng);
    let speed_limit = space.speed_limit.sample(rng);
    let lane_count = rng.random_range(space.lane_count.lo..=space.lane_count.hi);
    let green_s = space.green.sample(rng);
    let red_s = space.red.sample(rng);
    let u: f64 = rng.random();
    // u < 1 but the product can round up to the cycle length.
    let phase_offset = (u * (green_s + red_s)).min((green_s + red_s).next_down());
    let penetration = space.penetration_levels[rng.random_range(0..space.penetration_levels.len())];
    let seed = rng.random();
    Context {
        lane_length,
        inflow,
        speed_limit,
        lane_count,
        green_s,
        red_s,
        phase_offset,
        penetration,
        seed,
    }
}

/// `n` contexts, each drawn from its own generator split from `seed`.
pub fn generate_corpus(space: &ContextSpace, n: usize, seed: u64) -> Result<Vec<Context>> {
    space.validate()?;
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok((0..n as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i));
            sample_context(space, &mut rng)
        })
        .collect())
}

pub fn corpus_to_string(corpus: &[Context]) -> String {
    let mut out = String::with_capacity(128 * (corpus.len() + 1));
    out.push_str(CORPUS_HEADER);
    out.push('\n');
    for ctx in corpus {
        let _ = writeln!(out, "{}", ctx.to_record());
    }
    out
}

/// Parses corpus text and validates every record against `space`.
pub fn parse_corpus(text: &str, space: &ContextSpace) -> Result<Vec<Context>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CORPUS_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                field: None,
                msg: format!("expected header `{CORPUS_HEADER}`, found `{header}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                field: None,
                msg: format!("empty file, expected header `{CORPUS_HEADER}`"),
            })
        }
    }
    let mut corpus = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ctx = Context::parse_record(idx + 1, line)?;
        space.check(&ctx).map_err(|e| Error::Parse {
            line: idx + 1,
            field: None,
            msg: e.to_string(),
        })?;
        corpus.push(ctx);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

pub fn save_corpus(corpus: &[Context], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, corpus_to_string(corpus))?;
    Ok(())
}

/// Loads a corpus validated against the default space.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Context>> {
    load_corpus_in(path, &ContextSpace::default())
}

pub fn load_corpus_in(path: impl AsRef<Path>, space: &ContextSpace) -> Result<Vec<Context>> {
    parse_corpus(&fs::read_to_string(path)?, space)
}

/// Hex SHA-256 of the serialized corpus.
pub fn corpus_hash(corpus: &[Context]) -> String {
    hex::encode(Sha256::digest(corpus_to_string(corpus).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_space_matches_published_ranges() {
        let s = ContextSpace::default();
        assert_eq!(s.lane_length, Interval::new(75.0, 400.0));
        assert_eq!(s.inflow, Interval::new(675.0, 900.0));
        assert_eq!(s.speed_limit, Interval::new(10.0, 15.0));
        assert_eq!(s.lane_count, Interval::new(1, 3));
        assert_eq!(s.green, Interval::new(25.0, 30.0));
        assert_eq!(s.red, Interval::new(25.0, 30.0));
        assert_eq!(s.penetration_levels, vec![0.2, 1.0]);
        s.validate().unwrap();
    }

    #[test]
    fn sampled_context_is_inside_default_space() {
        let space = ContextSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let ctx = sample_context(&space, &mut rng);
            space.check(&ctx).unwrap();
        }
    }

    #[test]
    fn point_space_yields_that_context() {
        let space = ContextSpace {
            lane_length: Interval::point(200.0),
            inflow: Interval::point(800.0),
            speed_limit: Interval::point(12.0),
            lane_count: Interval::point(2),
            green: Interval::point(27.0),
            red: Interval::point(28.0),
            penetration_levels: vec![1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = sample_context(&space, &mut rng);
        assert_eq!(ctx.lane_length, 200.0);
        assert_eq!(ctx.inflow, 800.0);
        assert_eq!(ctx.speed_limit, 12.0);
        assert_eq!(ctx.lane_count, 2);
        assert_eq!(ctx.green_s, 27.0);
        assert_eq!(ctx.red_s, 28.0);
        assert_eq!(ctx.penetration, 1.0);
        assert!(ctx.phase_offset >= 0.0 && ctx.phase_offset < 55.0);
    }

    #[test]
    fn same_seed_same_context() {
        let space = ContextSpace::default();
        let a = sample_context(&space, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_context(&space, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_sizes_and_distinctness() {
        let space = ContextSpace::default();
        let corpus = generate_corpus(&space, 600, 7).unwrap();
        assert_eq!(corpus.len(), 600);
        let mut seeds: Vec<u64> = corpus.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 600);
        let mut lengths: Vec<u64> = corpus.iter().map(|c| c.lane_length.to_bits()).collect();
        lengths.sort_unstable();
        lengths.dedup();
        assert_eq!(lengths.len(), 600);

        assert_eq!(generate_corpus(&space, 1, 7).unwrap().len(), 1);
        assert!(matches!(generate_corpus(&space, 0, 7), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn corpus_text_is_reproducible() {
        let space = ContextSpace::default();
        let a = corpus_to_string(&generate_corpus(&space, 16, 11).unwrap());
        let b = corpus_to_string(&generate_corpus(&space, 16, 11).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("eco-mrtl-corpus v1\nlane_length_m="));
    }

    #[test]
    fn out_of_space_inflow_is_rejected() {
        let space = ContextSpace::default();
        let mut corpus = generate_corpus(&space, 2, 1).unwrap();
        corpus[1].inflow = 5000.0;
        let err = parse_corpus(&corpus_to_string(&corpus), &space).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("inflow_vph"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_files_report_location() {
        let space = ContextSpace::default();
        assert!(matches!(parse_corpus("", &space), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_corpus("eco-mrtl-corpus v1\n", &space),
            Err(Error::EmptyCorpus)
        ));
        let good = corpus_to_string(&generate_corpus(&space, 1, 1).unwrap());
        let bad = good.replace("green_s=", "green_s=abc");
        match parse_corpus(&bad, &space).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field.as_deref(), Some("green_s"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let swapped = good.replace("inflow_vph=", "inflow=");
        assert!(matches!(
            parse_corpus(&swapped, &space),
            Err(Error::Parse { field: Some(_), .. })
        ));
    }

    #[test]
    fn invalid_space_is_rejected() {
        let mut s = ContextSpace::default();
        s.red = Interval::new(30.0, 25.0);
        assert!(s.validate().is_err());
        let mut s = ContextSpace::default();
        s.lane_count = Interval::new(0, 2);
        assert!(s.validate().is_err());
        let mut s = ContextSpace::default();
        s.penetration_levels = vec![1.5];
        assert!(s.validate().is_err());
    }

    #[test]
    fn sampling_marginals_center_on_midpoints() {
        let space = ContextSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 20_000;
        let draws: Vec<Context> = (0..n).map(|_| sample_context(&space, &mut rng)).collect();
        let check = |name: &str, iv: Interval<f64>, xs: Vec<f64>| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(min >= iv.lo && max <= iv.hi, "{name}: [{min}, {max}]");
            let mid = iv.midpoint();
            assert!((mean - mid).abs() <= 0.05 * mid, "{name}: mean {mean} vs {mid}");
        };
        check("lane_length", space.lane_length, draws.iter().map(|c| c.lane_length).collect());
        check("inflow", space.inflow, draws.iter().map(|c| c.inflow).collect());
        check("speed_limit", space.speed_limit, draws.iter().map(|c| c.speed_limit).collect());
        check("green", space.green, draws.iter().map(|c| c.green_s).collect());
        check("red", space.red, draws.iter().map(|c| c.red_s).collect());
        check(
            "lane_count",
            Interval::new(1.0, 3.0),
            draws.iter().map(|c| c.lane_count as f64).collect(),
        );
    }

    proptest! {
        #[test]
        fn corpus_text_round_trips(n in 1usize..40, seed in any::<u64>()) {
            let space = ContextSpace::default();
            let corpus = generate_corpus(&space, n, seed).unwrap();
            let back = parse_corpus(&corpus_to_string(&corpus), &space).unwrap();
            prop_assert_eq!(back, corpus);
        }
    }
}
