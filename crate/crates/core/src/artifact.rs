//! On-disk formats.
//!
//! Text artifacts start with one metadata line
//!
//! ```text
//! # paramequiv artifact=<kind> version=<n> config=<hash> [key=value ...]
//! ```
//!
//! followed by a CSV header and data rows. Reals are written with 17
//! significant digits (`{:.16e}`), which round-trips `f64` exactly. Lines
//! starting with `#` are ignored by every reader in this module.
//!
//! The binary grid file is little-endian:
//!
//! | field      | type          |
//! |------------|---------------|
//! | magic      | `b"PEQGRID\0"` |
//! | version    | u32           |
//! | m          | u32           |
//! | n          | u32           |
//! | flags      | u32 (bit 0: epsilon present) |
//! | a, b       | f64, f64      |
//! | epsilon    | f64, only if flagged |
//! | hash_len   | u32, then that many UTF-8 bytes of config hash |
//! | losses     | n^m f64, row-major |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::binning::BinSet;
use crate::error::{Error, Result};
use crate::hyperplane::{EpsilonSet, GridEvaluation, GridSpec};
use crate::model::{LayerOrdering, ParamVector};
use crate::scalar::Scalar;
use crate::search::SearchResult;

pub const FORMAT_VERSION: u32 = 1;
const GRID_MAGIC: &[u8; 8] = b"PEQGRID\0";

/// Parsed metadata line of a text artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preamble {
    pub kind: String,
    pub version: u32,
    pub config_hash: String,
    pub extra: BTreeMap<String, String>,
}

impl Preamble {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self {
            kind: kind.to_string(),
            version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.insert(key.to_string(), value.to_string());
        self
    }

    fn line(&self) -> String {
        let mut s = format!(
            "# paramequiv artifact={} version={} config={}",
            self.kind, self.version, self.config_hash
        );
        for (k, v) in &self.extra {
            let _ = write!(s, " {k}={v}");
        }
        s
    }

    fn parse(path: &Path, line: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: msg.to_string(),
        };
        let rest = line
            .strip_prefix("# paramequiv ")
            .ok_or_else(|| bad("missing `# paramequiv` metadata line"))?;
        let mut fields: BTreeMap<String, String> = rest
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let kind = fields.remove("artifact").ok_or_else(|| bad("missing artifact kind"))?;
        let version = fields
            .remove("version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing or malformed version"))?;
        let config_hash = fields.remove("config").unwrap_or_default();
        Ok(Self {
            kind,
            version,
            config_hash,
            extra: fields,
        })
    }

    /// Fails unless this is `kind` at the current format version.
    pub fn expect(&self, path: &Path, kind: &str) -> Result<()> {
        if self.kind != kind || self.version != FORMAT_VERSION {
            return Err(Error::ArtifactVersion {
                path: path.to_path_buf(),
                kind: format!("{} (wanted {kind})", self.kind),
                expected: FORMAT_VERSION,
                found: self.version,
            });
        }
        Ok(())
    }
}

#[inline]
pub fn fmt_real<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

fn join_reals<T: Scalar>(row: &mut String, values: &[T]) {
    for v in values {
        row.push(',');
        row.push_str(&fmt_real(*v));
    }
}

fn column_names(prefix: &str, count: usize, start: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{}", i + start)).collect()
}

struct TextWriter<'p> {
    path: &'p Path,
    out: BufWriter<fs::File>,
}

impl<'p> TextWriter<'p> {
    fn create(path: &'p Path, preamble: &Preamble, header: &[String]) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path,
            out: BufWriter::new(file),
        };
        w.line(&preamble.line())?;
        w.line(&header.join(","))?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(self.path, e))
    }
}

/// A parsed text artifact: metadata, header and numeric rows with their
/// 1-based line numbers.
#[derive(Clone, Debug)]
pub struct Table {
    pub preamble: Preamble,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let first = lines.next().map(|(_, l)| l).unwrap_or_default();
    let preamble = Preamble::parse(path, first)?;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if header.is_none() {
            header = Some(line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
            continue;
        }
        rows.push((i + 1, parse_reals(path, i + 1, line)?));
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 2,
        msg: "missing header row".into(),
    })?;
    for (line, row) in &rows {
        if row.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                msg: format!("expected {} columns, found {}", header.len(), row.len()),
            });
        }
    }
    Ok(Table { preamble, header, rows })
}

fn parse_reals(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .enumerate()
        .map(|(col, field)| {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {}: `{field}` is not a number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("column {}: non-finite value", col + 1),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Plain list of parameter vectors, one comma-separated row per line. Blank
/// lines and `#` comments are skipped; a first row starting with `p0` is
/// taken as a header. Extra trailing columns (for instance a loss) are
/// rejected unless `allow_extra` is set.
pub fn read_param_rows<T: Scalar>(path: &Path, param_count: usize, allow_extra: bool) -> Result<Vec<ParamVector<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_data && line.starts_with("p0") {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let vals = parse_reals(path, i + 1, line)?;
        if vals.len() < param_count || (!allow_extra && vals.len() != param_count) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {param_count} parameters, found {}", vals.len()),
            });
        }
        out.push(ParamVector::new(
            vals[..param_count].iter().map(|&v| T::of(v)).collect(),
        )?);
    }
    Ok(out)
}

pub fn param_header(count: usize) -> Vec<String> {
    column_names("p", count, 0)
}

/// Column documentation for a parameter layout, e.g. `p0=W1[0,0]`.
pub fn describe_columns(order: &LayerOrdering) -> String {
    (0..order.len())
        .map(|i| format!("p{i}={}", order.describe(i).unwrap_or_default()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_equivalents<T: Scalar>(
    path: &Path,
    preamble: &Preamble,
    result: &SearchResult<T>,
    param_count: usize,
) -> Result<()> {
    let mut header = vec!["start".to_string(), "steps".into(), "loss".into()];
    header.extend(param_header(param_count));
    let mut w = TextWriter::create(path, preamble, &header)?;
    for f in &result.found {
        let mut row = format!("{},{},{}", f.start, f.steps, fmt_real(f.loss));
        join_reals(&mut row, f.theta.as_slice());
        w.line(&row)?;
    }
    w.finish()
}

/// An accepted parameter vector as read back from an equivalents file.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalentRow<T> {
    pub start: usize,
    pub steps: usize,
    pub loss: T,
    pub theta: ParamVector<T>,
}

pub fn read_equivalents<T: Scalar>(path: &Path, param_count: usize) -> Result<(Preamble, Vec<EquivalentRow<T>>)> {
    let table = read_table(path)?;
    table.preamble.expect(path, "equivalents")?;
    if table.header.len() != 3 + param_count {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            msg: format!(
                "expected {} parameter columns, header has {}",
                param_count,
                table.header.len().saturating_sub(3)
            ),
        });
    }
    let rows = table
        .rows
        .iter()
        .map(|(_, r)| {
            Ok(EquivalentRow {
                start: r[0] as usize,
                steps: r[1] as usize,
                loss: T::of(r[2]),
                theta: ParamVector::new(r[3..].iter().map(|&v| T::of(v)).collect())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((table.preamble, rows))
}

/// Every grid point as `c1..cm,loss`.
pub fn write_grid_csv<T: Scalar>(path: &Path, preamble: &Preamble, eval: &GridEvaluation<T>) -> Result<()> {
    let mut header = column_names("c", eval.spec.dim, 1);
    header.push("loss".into());
    let mut w = TextWriter::create(path, preamble, &header)?;
    let axis: Vec<T> = eval.spec.axis_values();
    let mut row = String::new();
    for (k, &loss) in eval.losses.iter().enumerate() {
        row.clear();
        for (a, i) in eval.spec.unravel(k).into_iter().enumerate() {
            if a > 0 {
                row.push(',');
            }
            row.push_str(&fmt_real(axis[i]));
        }
        row.push(',');
        row.push_str(&fmt_real(loss));
        w.line(&row)?;
    }
    w.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridBinary {
    pub spec: GridSpec,
    pub epsilon: Option<f64>,
    pub config_hash: String,
    pub losses: Vec<f64>,
}

pub fn encode_grid_binary<T: Scalar>(
    spec: &GridSpec,
    losses: &[T],
    epsilon: Option<f64>,
    config_hash: &str,
) -> Vec<u8> {
    let mut buf = Vec::with_capacity(48 + config_hash.len() + losses.len() * 8);
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.points_per_axis as u32).to_le_bytes());
    buf.extend_from_slice(&(epsilon.is_some() as u32).to_le_bytes());
    buf.extend_from_slice(&spec.lo.to_le_bytes());
    buf.extend_from_slice(&spec.hi.to_le_bytes());
    if let Some(e) = epsilon {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    buf.extend_from_slice(&(config_hash.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_hash.as_bytes());
    for l in losses {
        buf.extend_from_slice(&l.as_f64().to_le_bytes());
    }
    buf
}

pub fn decode_grid_binary(path: &Path, bytes: &[u8]) -> Result<GridBinary> {
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| bad(format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != GRID_MAGIC {
        return Err(bad("not a grid file (bad magic)".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION {
        return Err(Error::ArtifactVersion {
            path: path.to_path_buf(),
            kind: "grid".into(),
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let dim = u32_at(take(4)?) as usize;
    let n = u32_at(take(4)?) as usize;
    let flags = u32_at(take(4)?);
    let lo = f64_at(take(8)?);
    let hi = f64_at(take(8)?);
    let epsilon = if flags & 1 == 1 { Some(f64_at(take(8)?)) } else { None };
    let hash_len = u32_at(take(4)?) as usize;
    let config_hash =
        String::from_utf8(take(hash_len)?.to_vec()).map_err(|_| bad("config hash is not UTF-8".into()))?;
    let spec = GridSpec::new(dim, lo, hi, n)?;
    let body = take(spec.len() * 8)?;
    let losses = body.chunks_exact(8).map(f64_at).collect();
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(GridBinary {
        spec,
        epsilon,
        config_hash,
        losses,
    })
}

pub fn write_grid_binary<T: Scalar>(
    path: &Path,
    eval: &GridEvaluation<T>,
    epsilon: Option<f64>,
    config_hash: &str,
) -> Result<()> {
    fs::write(path, encode_grid_binary(&eval.spec, &eval.losses, epsilon, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn read_grid_binary(path: &Path) -> Result<GridBinary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid_binary(path, &bytes)
}

/// Members of an epsilon set: `i1..im,c1..cm,p0..p{d-1},loss`.
pub fn write_eset_csv<T: Scalar>(path: &Path, preamble: &Preamble, eset: &EpsilonSet<'_, T>) -> Result<()> {
    let spec = &eset.evaluation.spec;
    let d = eset.evaluation.plane.ambient_dim();
    let mut header = column_names("i", spec.dim, 1);
    header.extend(column_names("c", spec.dim, 1));
    header.extend(param_header(d));
    header.push("loss".into());
    let mut w = TextWriter::create(path, preamble, &header)?;
    for &k in &eset.members {
        let idx = spec.unravel(k);
        let coeffs: Vec<T> = idx.iter().map(|&i| spec.axis_value(i)).collect();
        let theta = eset.evaluation.plane.embed(&coeffs)?;
        let mut row = idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        join_reals(&mut row, &coeffs);
        join_reals(&mut row, theta.as_slice());
        row.push(',');
        row.push_str(&fmt_real(eset.evaluation.losses[k]));
        w.line(&row)?;
    }
    w.finish()
}

/// An epsilon-set artifact read back for reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct EsetRows {
    pub preamble: Preamble,
    pub dim: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub params: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
}

pub fn read_eset_csv(path: &Path) -> Result<EsetRows> {
    let table = read_table(path)?;
    table.preamble.expect(path, "eset")?;
    let dim = table.header.iter().filter(|h| h.starts_with('i')).count();
    let d = table.header.iter().filter(|h| h.starts_with('p')).count();
    if dim == 0 || table.header.len() != 2 * dim + d + 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            msg: "header does not match i*,c*,p*,loss layout".into(),
        });
    }
    let mut out = EsetRows {
        preamble: table.preamble,
        dim,
        coeffs: vec![],
        params: vec![],
        losses: vec![],
    };
    for (_, r) in table.rows {
        out.coeffs.push(r[dim..2 * dim].to_vec());
        out.params.push(r[2 * dim..2 * dim + d].to_vec());
        out.losses.push(r[2 * dim + d]);
    }
    Ok(out)
}

/// Full parameter vectors with their loss, `p0..p{d-1},loss`, for external
/// embedding tools.
pub fn export_embedding_input<T: Scalar>(
    path: &Path,
    preamble: &Preamble,
    param_count: usize,
    rows: &[(ParamVector<T>, T)],
) -> Result<()> {
    let mut header = param_header(param_count);
    header.push("loss".into());
    let mut w = TextWriter::create(path, preamble, &header)?;
    for (theta, loss) in rows {
        if theta.len() != param_count {
            return Err(Error::DimensionMismatch {
                what: "exported parameter vector",
                expected: param_count,
                actual: theta.len(),
            });
        }
        let mut row = String::new();
        for (i, v) in theta.as_slice().iter().enumerate() {
            if i > 0 {
                row.push(',');
            }
            row.push_str(&fmt_real(*v));
        }
        row.push(',');
        row.push_str(&fmt_real(*loss));
        w.line(&row)?;
    }
    w.finish()
}

pub fn read_embedding_input(path: &Path) -> Result<Vec<(ParamVector<f64>, f64)>> {
    let table = read_table(path)?;
    table.preamble.expect(path, "embedding-input")?;
    table
        .rows
        .into_iter()
        .map(|(_, mut r)| {
            let loss = r.pop().unwrap();
            Ok((ParamVector::new(r)?, loss))
        })
        .collect()
}

/// Low-dimensional coordinates with loss, `x1..xk,loss`.
pub fn write_projection_csv<T: Scalar>(
    path: &Path,
    preamble: &Preamble,
    coords: &[Vec<T>],
    losses: &[T],
) -> Result<()> {
    let k = coords.first().map_or(0, Vec::len);
    let mut header = column_names("x", k, 1);
    header.push("loss".into());
    let mut w = TextWriter::create(path, preamble, &header)?;
    for (c, l) in coords.iter().zip(losses) {
        let mut row = c.iter().map(|v| fmt_real(*v)).collect::<Vec<_>>().join(",");
        row.push(',');
        row.push_str(&fmt_real(*l));
        w.line(&row)?;
    }
    w.finish()
}

/// Human-readable bin summary.
pub fn bins_report<T: Scalar>(
    preamble: &Preamble,
    bins: &BinSet<T>,
    population: &[ParamVector<T>],
    method: &str,
    verify: Option<bool>,
) -> String {
    let mut s = preamble.line();
    s.push('\n');
    let _ = writeln!(s, "method = {method}");
    let _ = writeln!(s, "epsilon = {}", fmt_real(bins.epsilon));
    let _ = writeln!(s, "population = {}", bins.population_size());
    let _ = writeln!(s, "bins = {}", bins.bins.len());
    let _ = writeln!(s, "comparisons_made = {}", bins.comparisons_made);
    let _ = writeln!(s, "comparisons_pruned = {}", bins.comparisons_pruned);
    let _ = writeln!(s, "pruned_fraction = {:.6}", bins.pruned_fraction());
    match verify {
        Some(true) => s.push_str("verify = partitions identical\n"),
        Some(false) => s.push_str("verify = PARTITIONS DIFFER\n"),
        None => {}
    }
    for (b, bin) in bins.bins.iter().enumerate() {
        let _ = writeln!(
            s,
            "\nbin {b} representative={} members={}",
            bin.representative,
            bin.members.len()
        );
        let rep = population[bin.representative]
            .as_slice()
            .iter()
            .map(|v| fmt_real(*v))
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "  params = {rep}");
        let ids = bin.members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "  indices = {ids}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
