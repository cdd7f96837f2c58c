//! File formats: GeoJSON supports, estimate CSVs, prediction and draw CSVs,
//! binary matrix dumps and the run manifest.
//!
//! Every float written by this module uses 17 significant digits, so a
//! write/read cycle reproduces the exact bits.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{AdjacencyMatrix, ArealUnit, Point, Polygon, SupportSet};
use crate::model::{ProcessParams, SurveyDatum};
use crate::predict::PredictionRecord;
use crate::sampler::PosteriorDraws;

/// Lossless decimal rendering of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(s.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- GeoJSON

/// Reads a GeoJSON FeatureCollection of Polygon/MultiPolygon features. The
/// unit id comes from the feature `id` or, failing that, `properties.id`.
/// Problems are collected across all features before returning.
pub fn load_supports(path: &Path) -> Result<SupportSet> {
    let text = read_to_string(path)?;
    let units = parse_supports(&text).map_err(|msgs| Error::parse(path, msgs))?;
    SupportSet::new(units)
}

/// Same as [`load_supports`] but also checks that units do not overlap.
pub fn load_fine_set(path: &Path) -> Result<SupportSet> {
    let text = read_to_string(path)?;
    let units = parse_supports(&text).map_err(|msgs| Error::parse(path, msgs))?;
    SupportSet::new_disjoint(units)
}

pub fn parse_supports(text: &str) -> std::result::Result<Vec<ArealUnit>, Vec<String>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(vec!["top-level object is not a FeatureCollection".into()]);
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| vec!["FeatureCollection has no features array".to_string()])?;
    let mut units = Vec::new();
    let mut errors = Vec::new();
    for (i, f) in features.iter().enumerate() {
        match parse_feature(f) {
            Ok(u) => units.push(u),
            Err(e) => errors.push(format!("feature {i}: {e}")),
        }
    }
    if errors.is_empty() {
        Ok(units)
    } else {
        Err(errors)
    }
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_feature(f: &Value) -> std::result::Result<ArealUnit, String> {
    let id = f
        .get("id")
        .and_then(id_string)
        .or_else(|| f.get("properties").and_then(|p| p.get("id")).and_then(id_string))
        .ok_or("missing id")?;
    let geom = f.get("geometry").ok_or_else(|| format!("unit {id:?}: missing geometry"))?;
    let coords = geom.get("coordinates").ok_or_else(|| format!("unit {id:?}: missing coordinates"))?;
    let polys = match geom.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_polygon(coords).map_err(|e| format!("unit {id:?}: {e}"))?],
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| format!("unit {id:?}: MultiPolygon coordinates are not an array"))?
            .iter()
            .enumerate()
            .map(|(k, c)| parse_polygon(c).map_err(|e| format!("unit {id:?}, polygon {k}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        other => return Err(format!("unit {id:?}: unsupported geometry type {other:?}")),
    };
    ArealUnit::new(id.clone(), polys).map_err(|e| format!("unit {id:?}: {e}"))
}

fn parse_ring(v: &Value) -> std::result::Result<Vec<Point>, String> {
    v.as_array()
        .ok_or("ring is not an array")?
        .iter()
        .map(|p| {
            let xy = p.as_array().filter(|a| a.len() >= 2).ok_or("position is not [x, y]")?;
            match (xy[0].as_f64(), xy[1].as_f64()) {
                (Some(x), Some(y)) => Ok(Point::new(x, y)),
                _ => Err("non-numeric coordinate".to_string()),
            }
        })
        .collect()
}

fn parse_polygon(v: &Value) -> std::result::Result<Polygon, String> {
    let rings = v.as_array().ok_or("polygon coordinates are not an array")?;
    let mut parsed = rings.iter().map(parse_ring).collect::<std::result::Result<Vec<_>, _>>()?;
    if parsed.is_empty() {
        return Err("polygon has no rings".into());
    }
    let exterior = parsed.remove(0);
    Polygon::new(exterior, parsed).map_err(|e| e.to_string())
}

pub fn supports_to_geojson(set: &SupportSet) -> Value {
    let ring = |r: &[Point]| -> Value { Value::Array(r.iter().map(|p| json!([p.x, p.y])).collect()) };
    let features: Vec<Value> = set
        .units()
        .iter()
        .map(|u| {
            let polys: Vec<Value> = u
                .polygons()
                .iter()
                .map(|p| Value::Array(p.rings().map(ring).collect()))
                .collect();
            let geometry = if polys.len() == 1 {
                json!({"type": "Polygon", "coordinates": polys[0]})
            } else {
                json!({"type": "MultiPolygon", "coordinates": polys})
            };
            json!({"type": "Feature", "id": u.id, "properties": {"id": u.id}, "geometry": geometry})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_supports(path: &Path, set: &SupportSet) -> Result<()> {
    let text = serde_json::to_string_pretty(&supports_to_geojson(set)).expect("GeoJSON serializes");
    write_string(path, &(text + "\n"))
}

/// Adjacency override: CSV of 0-based `i,j` index pairs into the fine set.
pub fn load_edge_list(path: &Path, n: usize) -> Result<AdjacencyMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    let mut edges = Vec::new();
    let mut errors = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        match rec {
            Ok(r) if r.len() >= 2 => match (r[0].parse::<usize>(), r[1].parse::<usize>()) {
                (Ok(i), Ok(j)) => edges.push((i, j)),
                _ => errors.push(format!("row {}: indices must be non-negative integers", row + 1)),
            },
            Ok(_) => errors.push(format!("row {}: expected two columns", row + 1)),
            Err(e) => errors.push(format!("row {}: {e}", row + 1)),
        }
    }
    if !errors.is_empty() {
        return Err(Error::parse(path, errors));
    }
    AdjacencyMatrix::from_edges(n, &edges)
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, vec![format!("{other:?}")]),
    }
}

// ---------------------------------------------------------------- estimates

/// Standard normal quantile for a two-sided margin of error at `level`.
/// Only the published conventions are accepted.
pub fn moe_z(level: f64) -> Result<f64> {
    const TABLE: [(f64, f64); 3] = [(0.90, 1.6449), (0.95, 1.9600), (0.99, 2.5758)];
    TABLE
        .iter()
        .find(|(l, _)| (l - level).abs() < 1e-9)
        .map(|&(_, z)| z)
        .ok_or_else(|| Error::Config(format!("unsupported MOE level {level}; use 0.90, 0.95 or 0.99")))
}

/// Reads `unit_id, year, period, estimate` plus either `sd` or `moe`
/// (optionally with a per-row `moe_level`, else `default_level`). A
/// non-empty `sd` takes precedence over `moe`.
pub fn load_estimates(path: &Path, default_level: f64) -> Result<Vec<SurveyDatum>> {
    moe_z(default_level)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, vec![e.to_string()]))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_id), Some(c_year), Some(c_period), Some(c_est)) = (col("unit_id"), col("year"), col("period"), col("estimate")) else {
        return Err(Error::parse(
            path,
            vec!["header must contain unit_id, year, period and estimate".into()],
        ));
    };
    let (c_sd, c_moe, c_level) = (col("sd"), col("moe"), col("moe_level"));
    if c_sd.is_none() && c_moe.is_none() {
        return Err(Error::parse(path, vec!["header needs an sd or a moe column".into()]));
    }

    let mut data = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("row {row}: {e}"));
                continue;
            }
        };
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let parsed = (|| -> std::result::Result<SurveyDatum, String> {
            let id = field(Some(c_id)).ok_or("empty unit_id")?.to_string();
            let year: i32 = field(Some(c_year)).ok_or("empty year")?.parse().map_err(|_| "bad year")?;
            let period: u32 = field(Some(c_period)).ok_or("empty period")?.parse().map_err(|_| "bad period")?;
            let estimate: f64 = field(Some(c_est)).ok_or("empty estimate")?.parse().map_err(|_| "bad estimate")?;
            let sd = match (field(c_sd), field(c_moe)) {
                (Some(sd), _) => sd.parse::<f64>().map_err(|_| "bad sd")?,
                (None, Some(moe)) => {
                    let moe: f64 = moe.parse().map_err(|_| "bad moe")?;
                    let level = match field(c_level) {
                        Some(l) => l.parse::<f64>().map_err(|_| "bad moe_level")?,
                        None => default_level,
                    };
                    moe / moe_z(level).map_err(|e| e.to_string())?
                }
                (None, None) => return Err("neither sd nor moe given".into()),
            };
            SurveyDatum::new(id, year, period, estimate, sd).map_err(|e| e.to_string())
        })();
        match parsed {
            Ok(d) => data.push(d),
            Err(e) => errors.push(format!("row {row}: {e}")),
        }
    }
    if errors.is_empty() {
        Ok(data)
    } else {
        Err(Error::parse(path, errors))
    }
}

pub fn write_estimates(path: &Path, data: &[SurveyDatum]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::parse(path, vec![e.to_string()]);
    w.write_record(["unit_id", "year", "period", "estimate", "sd"]).map_err(io)?;
    for d in data {
        w.write_record([
            d.unit_id.clone(),
            d.year.to_string(),
            d.period.to_string(),
            fmt_f64(d.estimate),
            fmt_f64(d.sd),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

// ---------------------------------------------------------------- predictions

pub fn write_predictions(path: &Path, rows: &[PredictionRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::parse(path, vec![e.to_string()]);
    w.write_record(["target_id", "year", "period", "mean", "sd", "lo95", "hi95"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.target_id.clone(),
            r.year.to_string(),
            r.period.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            fmt_f64(r.lo95),
            fmt_f64(r.hi95),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.deserialize::<PredictionRecord>().enumerate() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => errors.push(format!("row {}: {e}", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(Error::parse(path, errors))
    }
}

// ---------------------------------------------------------------- draws

/// One row per stored draw: variances, μ_B, η, then ξ.
pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::parse(path, vec![e.to_string()]);
    let Some(first) = draws.draws.first() else {
        w.write_record(["sigma2_xi", "sigma2_k", "sigma2_mu"]).map_err(io)?;
        return w.flush().map_err(|e| Error::io(path, e));
    };
    let mut header = vec!["sigma2_xi".to_string(), "sigma2_k".into(), "sigma2_mu".into()];
    header.extend((0..first.mu.len()).map(|i| format!("mu_{i}")));
    header.extend((0..first.eta.len()).map(|i| format!("eta_{i}")));
    header.extend((0..first.xi.len()).map(|i| format!("xi_{i}")));
    w.write_record(&header).map_err(io)?;
    for d in &draws.draws {
        let mut rec = vec![fmt_f64(d.sigma2_xi), fmt_f64(d.sigma2_k), fmt_f64(d.sigma2_mu)];
        rec.extend(d.mu.iter().chain(d.eta.iter()).chain(d.xi.iter()).map(|v| fmt_f64(*v)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads draws written by [`write_draws`]. Dimensions come from the header.
pub fn read_draws(path: &Path) -> Result<Vec<ProcessParams>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, vec![e.to_string()]))?.clone();
    let count = |prefix: &str| headers.iter().filter(|h| h.starts_with(prefix)).count();
    let (n_mu, n_eta, n_xi) = (count("mu_"), count("eta_"), count("xi_"));
    if headers.len() != 3 + n_mu + n_eta + n_xi {
        return Err(Error::parse(path, vec!["unexpected draws header".into()]));
    }
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let parsed = rec.map_err(|e| e.to_string()).and_then(|r| {
            r.iter()
                .map(|s| s.parse::<f64>().map_err(|_| format!("bad number {s:?}")))
                .collect::<std::result::Result<Vec<f64>, String>>()
        });
        match parsed {
            Ok(v) if v.len() == headers.len() => {
                let seg = |a: usize, n: usize| DVector::from_column_slice(&v[a..a + n]);
                out.push(ProcessParams {
                    sigma2_xi: v[0],
                    sigma2_k: v[1],
                    sigma2_mu: v[2],
                    mu: seg(3, n_mu),
                    eta: seg(3 + n_mu, n_eta),
                    xi: seg(3 + n_mu + n_eta, n_xi),
                });
            }
            Ok(_) => errors.push(format!("row {}: wrong field count", i + 1)),
            Err(e) => errors.push(format!("row {}: {e}", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::parse(path, errors))
    }
}

// ---------------------------------------------------------------- matrices

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    pub dtype: String,
    pub order: String,
}

/// Writes `<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
pub fn write_matrix(dir: &Path, stem: &str, m: &DMatrix<f64>) -> Result<()> {
    let header = MatrixHeader {
        rows: m.nrows(),
        cols: m.ncols(),
        symmetric: m.nrows() == m.ncols() && crate::linalg::is_symmetric(m, 0.0),
        dtype: "f64-le".into(),
        order: "row-major".into(),
    };
    let bin = dir.join(format!("{stem}.bin"));
    let mut w = create(&bin)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes()).map_err(|e| Error::io(&bin, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_string(&dir.join(format!("{stem}.json")), &(text + "\n"))
}

pub fn read_matrix(dir: &Path, stem: &str) -> Result<DMatrix<f64>> {
    let hpath = dir.join(format!("{stem}.json"));
    let header: MatrixHeader = serde_json::from_str(&read_to_string(&hpath)?)
        .map_err(|e| Error::parse(&hpath, vec![e.to_string()]))?;
    if header.dtype != "f64-le" || header.order != "row-major" {
        return Err(Error::parse(&hpath, vec!["unsupported matrix encoding".into()]));
    }
    let bin = dir.join(format!("{stem}.bin"));
    let mut bytes = Vec::new();
    File::open(&bin)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != header.rows * header.cols * 8 {
        return Err(Error::parse(&bin, vec![format!("expected {} bytes, found {}", header.rows * header.cols * 8, bytes.len())]));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DMatrix::from_row_slice(header.rows, header.cols, &vals))
}

// ---------------------------------------------------------------- hashing

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of a serializable value through its canonical JSON form (object
/// keys sorted), so re-serialization never changes it.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes to JSON");
    sha256_hex(serde_json::to_string(&v).expect("JSON value serializes").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub input_digests: BTreeMap<String, String>,
    pub module_versions: BTreeMap<String, String>,
    pub timing_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Hash over the configuration and every input digest.
    pub fn compute_hash<T: Serialize>(config: &T, input_digests: &BTreeMap<String, String>) -> String {
        canonical_hash(&json!({"config": config, "inputs": input_digests}))
    }

    pub fn new<T: Serialize>(config: &T, seeds: BTreeMap<String, u64>, input_digests: BTreeMap<String, String>) -> Self {
        let mut module_versions = BTreeMap::new();
        module_versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
        RunManifest {
            config_hash: Self::compute_hash(config, &input_digests),
            seeds,
            input_digests,
            module_versions,
            timing_seconds: BTreeMap::new(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_string(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::parse(path, vec![e.to_string()]))
}

// ---------------------------------------------------------------- reports

/// Standalone SVG histogram.
pub fn histogram_svg(values: &[f64], bins: usize, title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let bins = bins.max(1);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (w - 2.0 * pad) / bins as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"25\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        w / 2.0,
        escape_xml(title)
    );
    for (k, &c) in counts.iter().enumerate() {
        let bh = (h - 2.0 * pad) * c as f64 / max;
        svg += &format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\" stroke=\"white\"/>\n",
            pad + k as f64 * bw,
            h - pad - bh,
            bw,
            bh
        );
    }
    svg += &format!(
        "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\">{lo:.3}</text>\n\
         <text x=\"{x2}\" y=\"{ty}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{hi:.3}</text>\n\
         <text x=\"{pad}\" y=\"{cy}\" font-family=\"sans-serif\" font-size=\"12\">n = {n}</text>\n</svg>\n",
        y = h - pad,
        x2 = w - pad,
        ty = h - pad + 18.0,
        cy = pad - 5.0,
        n = finite.len()
    );
    svg
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_string(path, text)
}
