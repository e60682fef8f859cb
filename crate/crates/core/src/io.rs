//! File formats: headerless matrix CSV, binary PGM (P5) heatmaps and the
//! flat `key=value` run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::analytic::Alpha;
use crate::error::{Error, Result};
use crate::experiments::{quantile_clip, ExperimentSpec, Mode};
use crate::matrix::Matrix;
use crate::simulation::{LayerSpec, Mask, Normalization, ScoreMatrix, ScoreScale};

/// Formats a value with 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per matrix row, comma separated, no header.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

/// Parses a rectangular, headerless CSV of floats.
pub fn parse_matrix_csv(text: &str, origin: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(origin, e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::parse(origin, format!("row {}, column {}: {field:?} is not a number", r + 1, c + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(origin, "no rows"));
    }
    Matrix::from_rows(&rows).map_err(|e| Error::parse(origin, e.to_string()))
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

/// Encodes a heatmap as 8-bit binary PGM.
///
/// Values are clipped to the nearest-rank `[q_low, q_high]` quantiles and
/// mapped linearly from `[min, max]` onto `[0, 255]`, rounding half up. When
/// every value is equal the image is uniformly 255. With `causal` set, the
/// strict upper triangle is excluded from quantiles and range and drawn as 0.
/// Image row `r` is query `r + 1`, image column `c` is key `c + 1`.
pub fn render_pgm(m: &Matrix, q_low: f64, q_high: f64, causal: bool) -> Result<Vec<u8>> {
    if causal && !m.is_square() {
        return Err(Error::Config("a causal heatmap must be square".into()));
    }
    let clipped = quantile_clip(
        &ScoreMatrix {
            entries: m.clone(),
            masked: causal,
        },
        q_low,
        q_high,
    )?;
    let valid = |i: usize, j: usize| clipped.is_valid(i, j);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if valid(i, j) {
                let v = clipped.entries[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Domain(format!("cell ({}, {}) is not finite", i + 1, j + 1)));
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }

    let mut bytes = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let pixel = if !valid(i, j) {
                0
            } else if hi <= lo {
                255
            } else {
                let t = (clipped.entries[(i, j)] - lo) / (hi - lo);
                (t * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
            };
            bytes.push(pixel);
        }
    }
    Ok(bytes)
}

/// Ordered `key=value` pairs describing a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, format!("line {}: expected key=value", n + 1)))?;
            entries.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        Ok(Manifest { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("manifest is missing {key:?}")))
    }

    fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("manifest value {key}={raw} is invalid")))
    }

    /// Records every field needed to rerun `spec` bit-exactly.
    pub fn from_spec(spec: &ExperimentSpec) -> Self {
        let ls = &spec.layer_spec;
        let mut m = Manifest::new();
        m.set("mode", spec.mode.name());
        m.set("n", spec.n);
        m.set("d", spec.d);
        // Debug formatting of f64 is the shortest exact round-trip form
        m.set("alpha", format!("{:?}", spec.alpha.value()));
        m.set("layers", spec.layers);
        m.set("trials", spec.trials);
        m.set("seed", spec.master_seed);
        m.set("norm", norm_name(ls.norm));
        m.set("scale", scale_name(ls.score_scale));
        m.set("residual", if ls.residual { "on" } else { "off" });
        m.set("mask", mask_name(ls.mask));
        m.set("masked", ls.mask == Mask::Causal);
        m.set(
            "theta",
            ls.rope.map_or_else(|| "none".to_owned(), |t| format!("{t:?}")),
        );
        m
    }

    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let mode: Mode = self.require("mode")?.parse()?;
        let alpha = Alpha::new(self.require_parsed("alpha")?)?;
        let rope = match self.require("theta")? {
            "none" => None,
            _ => Some(self.require_parsed::<f64>("theta")?),
        };
        let layer_spec = LayerSpec {
            norm: parse_norm(self.require("norm")?)?,
            score_scale: parse_scale(self.require("scale")?)?,
            residual: parse_switch(self.require("residual")?)?,
            mask: parse_mask(self.require("mask")?)?,
            rope,
        };
        let spec = ExperimentSpec {
            n: self.require_parsed("n")?,
            d: self.require_parsed("d")?,
            alpha,
            layers: self.require_parsed("layers")?,
            trials: self.require_parsed("trials")?,
            master_seed: self.require_parsed("seed")?,
            layer_spec,
            mode,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn norm_name(norm: Normalization) -> &'static str {
    match norm {
        Normalization::L2 => "l2",
        Normalization::LayerNorm => "layernorm",
    }
}

pub fn parse_norm(s: &str) -> Result<Normalization> {
    match s {
        "l2" => Ok(Normalization::L2),
        "layernorm" => Ok(Normalization::LayerNorm),
        other => Err(Error::Config(format!("unknown normalization {other:?}"))),
    }
}

pub fn scale_name(scale: ScoreScale) -> &'static str {
    match scale {
        ScoreScale::One => "one",
        ScoreScale::SqrtD => "sqrt-d",
        ScoreScale::D => "d",
    }
}

pub fn parse_scale(s: &str) -> Result<ScoreScale> {
    match s {
        "one" => Ok(ScoreScale::One),
        "sqrt-d" => Ok(ScoreScale::SqrtD),
        "d" => Ok(ScoreScale::D),
        other => Err(Error::Config(format!("unknown score scale {other:?}"))),
    }
}

pub fn mask_name(mask: Mask) -> &'static str {
    match mask {
        Mask::Causal => "causal",
        Mask::None => "none",
    }
}

pub fn parse_mask(s: &str) -> Result<Mask> {
    match s {
        "causal" => Ok(Mask::Causal),
        "none" => Ok(Mask::None),
        other => Err(Error::Config(format!("unknown mask {other:?}"))),
    }
}

fn parse_switch(s: &str) -> Result<bool> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!("expected on/off, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn csv_parse_rejects_garbage() {
        let origin = PathBuf::from("mem.csv");
        assert!(parse_matrix_csv("1,2\n3,x\n", &origin).is_err());
        assert!(parse_matrix_csv("1,2\n3\n", &origin).is_err());
        assert!(parse_matrix_csv("", &origin).is_err());
        let m = parse_matrix_csv("1, 2\n3 ,4\n", &origin).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_values_carry_seventeen_digits() {
        assert_eq!(format_value(0.1), "1.0000000000000001e-1");
        assert_eq!(format_value(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn pgm_two_by_two() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0]]).unwrap();
        let bytes = render_pgm(&m, 0.0, 1.0, false).unwrap();
        let mut expected = b"P5\n2 2\n255\n".to_vec();
        expected.extend_from_slice(&[255, 0, 128, 255]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn pgm_constant_is_white() {
        let m = Matrix::filled(3, 2, 0.7);
        let bytes = render_pgm(&m, 0.0, 1.0, false).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 3\n255\n");
        assert!(bytes[11..].iter().all(|&b| b == 255));
    }

    #[test]
    fn pgm_causal_blanks_upper_triangle() {
        let m = Matrix::from_rows(&[vec![0.2, 9.0], vec![-0.2, 0.6]]).unwrap();
        let bytes = render_pgm(&m, 0.0, 1.0, true).unwrap();
        // range [-0.2, 0.6]: 0.2 → 127.5 → 128
        assert_eq!(&bytes[11..], &[128, 0, 0, 255]);
    }

    #[test]
    fn pgm_rejects_empty_quantile_range() {
        let m = Matrix::filled(2, 2, 1.0);
        assert!(render_pgm(&m, 0.5, 0.5, false).is_err());
    }

    #[test]
    fn manifest_round_trips_spec() {
        let mut spec = ExperimentSpec::desk(Mode::RopeDecoder, Alpha::new(0.2).unwrap());
        spec.master_seed = u64::MAX;
        spec.layer_spec.norm = Normalization::LayerNorm;
        spec.layer_spec.score_scale = ScoreScale::SqrtD;
        spec.layer_spec.residual = false;
        let manifest = Manifest::from_spec(&spec);
        let text = manifest.to_text();
        let back = Manifest::parse(&text, Path::new("m.txt")).unwrap();
        assert_eq!(back.to_spec().unwrap(), spec);
        assert_eq!(back.get("masked"), Some("true"));
    }

    #[test]
    fn manifest_rejects_malformed_lines() {
        assert!(Manifest::parse("mode nope\n", Path::new("m")).is_err());
        let m = Manifest::parse("# comment\n\nmode=nope\n", Path::new("m")).unwrap();
        assert!(m.to_spec().is_err());
    }
}
