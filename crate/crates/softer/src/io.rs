//! File formats and persistence: predictor tensor files (binary and CSV),
//! dataset assembly with optional standardization, chain bundles with
//! checksums for exact resumption, and the run manifest tying a fit to its
//! inputs.
//!
//! Binary tensor files carry the magic "SOFT1", then mode count, dims,
//! record count, a symmetry tag, and an endianness tag; the payload is the
//! records' entries in canonical order as little-endian f64. The CSV
//! alternative starts with a `dims=p1xp2x...` header line followed by one
//! flattened record per line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SofterError};
use crate::model::{Dataset, SofterConfig, Symmetry};
use crate::sampler::ChainCheckpoint;
use crate::symmetric::SymmetricCheckpoint;
use crate::tensor::DenseTensor;

const MAGIC: &[u8; 5] = b"SOFT1";
const ENDIAN_LITTLE: u8 = b'L';

fn symmetry_tag(s: Symmetry) -> u8 {
    match s {
        Symmetry::None => 0,
        Symmetry::Symmetric => 1,
        Symmetry::SemiSymmetric => 2,
    }
}

fn tag_symmetry(t: u8) -> Result<Symmetry> {
    match t {
        0 => Ok(Symmetry::None),
        1 => Ok(Symmetry::Symmetric),
        2 => Ok(Symmetry::SemiSymmetric),
        other => Err(SofterError::Format(format!("unknown symmetry tag {other}"))),
    }
}

/// Writes predictor tensors in the binary format. All records must share
/// one shape.
pub fn write_tensor_file(path: &Path, tensors: &[DenseTensor], symmetry: Symmetry) -> Result<()> {
    let dims = tensors
        .first()
        .map(|t| t.dims().to_vec())
        .ok_or_else(|| SofterError::Invalid("no tensors to write".into()))?;
    for t in tensors {
        if t.dims() != dims.as_slice() {
            return Err(SofterError::Shape("tensor shapes disagree".into()));
        }
    }
    let mut w = Vec::new();
    w.extend_from_slice(MAGIC);
    w.write_u32::<LittleEndian>(dims.len() as u32)?;
    for &d in &dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_u64::<LittleEndian>(tensors.len() as u64)?;
    w.push(symmetry_tag(symmetry));
    w.push(ENDIAN_LITTLE);
    for t in tensors {
        for &v in t.values() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    fs::write(path, w)?;
    Ok(())
}

/// Reads a binary tensor file back into records plus the declared symmetry.
pub fn read_tensor_file(path: &Path) -> Result<(Vec<DenseTensor>, Symmetry)> {
    let bytes = fs::read(path)?;
    let mut r = &bytes[..];
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| SofterError::Format(format!("{}: truncated header", path.display())))?;
    if &magic != MAGIC {
        return Err(SofterError::Format(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let k = r.read_u32::<LittleEndian>().map_err(truncated(path))? as usize;
    if k == 0 || k > 16 {
        return Err(SofterError::Format(format!("{}: mode count {k}", path.display())));
    }
    let mut dims = Vec::with_capacity(k);
    for _ in 0..k {
        dims.push(r.read_u32::<LittleEndian>().map_err(truncated(path))? as usize);
    }
    let n = r.read_u64::<LittleEndian>().map_err(truncated(path))? as usize;
    let sym = tag_symmetry(r.read_u8().map_err(truncated(path))?)?;
    let endian = r.read_u8().map_err(truncated(path))?;
    if endian != ENDIAN_LITTLE {
        return Err(SofterError::Format(format!(
            "{}: unsupported endianness tag {endian}",
            path.display()
        )));
    }
    let len: usize = dims.iter().product();
    if r.len() != n * len * 8 {
        return Err(SofterError::Format(format!(
            "{}: payload holds {} bytes but the header promises {}",
            path.display(),
            r.len(),
            n * len * 8
        )));
    }
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let mut vals = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut vals).map_err(truncated(path))?;
        tensors.push(DenseTensor::new(dims.clone(), vals)?);
    }
    Ok((tensors, sym))
}

fn truncated(path: &Path) -> impl Fn(std::io::Error) -> SofterError + '_ {
    move |_| SofterError::Format(format!("{}: truncated file", path.display()))
}

/// Writes tensors as CSV: a `dims=` header then one flattened record per
/// line.
pub fn write_tensors_csv(path: &Path, tensors: &[DenseTensor]) -> Result<()> {
    let dims = tensors
        .first()
        .map(|t| t.dims().to_vec())
        .ok_or_else(|| SofterError::Invalid("no tensors to write".into()))?;
    let mut out = String::new();
    let dim_str: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    out.push_str(&format!("dims={}\n", dim_str.join("x")));
    for t in tensors {
        if t.dims() != dims.as_slice() {
            return Err(SofterError::Shape("tensor shapes disagree".into()));
        }
        let row: Vec<String> = t.values().iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the CSV tensor format.
pub fn read_tensors_csv(path: &Path) -> Result<Vec<DenseTensor>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SofterError::Format(format!("{}: empty file", path.display())))?;
    let spec = header.strip_prefix("dims=").ok_or_else(|| {
        SofterError::Format(format!(
            "{}: first line must be dims=p1xp2x..., got {header:?}",
            path.display()
        ))
    })?;
    let dims: Vec<usize> = spec
        .split('x')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|_| {
                SofterError::Format(format!("{}: bad dimension {tok:?}", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let len: usize = dims.iter().product();
    let mut tensors = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_float_row(line, path, lineno + 2)?;
        if vals.len() != len {
            return Err(SofterError::Format(format!(
                "{}:{}: {} values but dims {:?} need {}",
                path.display(),
                lineno + 2,
                vals.len(),
                dims,
                len
            )));
        }
        tensors.push(DenseTensor::new(dims.clone(), vals)?);
    }
    if tensors.is_empty() {
        return Err(SofterError::Format(format!("{}: no records", path.display())));
    }
    Ok(tensors)
}

fn parse_float_row(line: &str, path: &Path, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                SofterError::Format(format!(
                    "{}:{}: unparseable number {tok:?}",
                    path.display(),
                    lineno
                ))
            })
        })
        .collect()
}

/// Reads predictor tensors from either encoding, sniffing the binary magic.
pub fn read_tensors_any(path: &Path) -> Result<Vec<DenseTensor>> {
    let mut head = [0u8; 5];
    let mut f = fs::File::open(path)?;
    let got = f.read(&mut head)?;
    drop(f);
    if got == 5 && &head == MAGIC {
        Ok(read_tensor_file(path)?.0)
    } else {
        read_tensors_csv(path)
    }
}

/// One scalar per line.
pub fn write_vector_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// One scalar per line.
pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(line.trim().parse::<f64>().map_err(|_| {
            SofterError::Format(format!(
                "{}:{}: unparseable number {line:?}",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    Ok(out)
}

/// Comma-separated rows of equal width.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_float_row(line, path, lineno + 1)?;
        if let Some(first) = out.first() {
            if row.len() != first.len() {
                return Err(SofterError::Format(format!(
                    "{}:{}: row width {} disagrees with {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Centering/scaling applied at load time, retained so predictions can be
/// mapped back to the original outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedTransform {
    pub y_center: f64,
    pub y_scale: f64,
    pub covariate_centers: Vec<f64>,
    pub covariate_scales: Vec<f64>,
    /// One global scale over all tensor entries.
    pub x_scale: f64,
}

impl AppliedTransform {
    /// Maps a prediction on the standardized scale back to the original.
    pub fn unstandardize_prediction(&self, yhat: f64) -> f64 {
        yhat * self.y_scale + self.y_center
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub standardize: bool,
    pub symmetry: Symmetry,
    /// Mirror-pair mismatches up to this are averaged away; beyond it the
    /// load fails.
    pub sym_tol: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { standardize: false, symmetry: Symmetry::None, sym_tol: 0.0 }
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Assembles a Dataset from outcome, optional covariate, and tensor files.
/// Under a symmetric option the first two modes are symmetrized (mirror
/// pairs averaged when within `sym_tol`, rejected beyond it) and diagonals
/// zeroed before validation.
pub fn load_dataset(
    outcomes: &Path,
    covariates: Option<&Path>,
    tensors: &Path,
    opts: LoadOptions,
) -> Result<(Dataset, Option<AppliedTransform>)> {
    let mut y = read_vector_csv(outcomes)?;
    let mut cov = match covariates {
        Some(p) => read_matrix_csv(p)?,
        None => vec![vec![]; y.len()],
    };
    let mut xs = read_tensors_any(tensors)?;
    if opts.symmetry != Symmetry::None {
        for (i, t) in xs.iter_mut().enumerate() {
            symmetrize_tensor(t, opts.sym_tol, i + 1)?;
        }
    }
    let transform =
        if opts.standardize { Some(standardize(&mut y, &mut cov, &mut xs)) } else { None };
    let dataset = Dataset::new(y, cov, xs)?;
    if opts.symmetry != Symmetry::None {
        dataset.check_symmetric(0.0)?;
    }
    Ok((dataset, transform))
}

fn standardize(
    y: &mut [f64],
    cov: &mut [Vec<f64>],
    xs: &mut [DenseTensor],
) -> AppliedTransform {
    let (yc, ysd) = mean_sd(y);
    let ys = if ysd > 0.0 { ysd } else { 1.0 };
    for v in y.iter_mut() {
        *v = (*v - yc) / ys;
    }
    let p = cov.first().map_or(0, |c| c.len());
    let mut centers = vec![0.0; p];
    let mut scales = vec![1.0; p];
    for j in 0..p {
        let col: Vec<f64> = cov.iter().map(|r| r[j]).collect();
        let (c, sd) = mean_sd(&col);
        let s = if sd > 0.0 { sd } else { 1.0 };
        centers[j] = c;
        scales[j] = s;
        for row in cov.iter_mut() {
            row[j] = (row[j] - c) / s;
        }
    }
    let all: Vec<f64> = xs.iter().flat_map(|t| t.values().iter().copied()).collect();
    let (_, xsd) = mean_sd(&all);
    let xs_scale = if xsd > 0.0 { xsd } else { 1.0 };
    for t in xs.iter_mut() {
        for v in t.values_mut() {
            *v /= xs_scale;
        }
    }
    AppliedTransform {
        y_center: yc,
        y_scale: ys,
        covariate_centers: centers,
        covariate_scales: scales,
        x_scale: xs_scale,
    }
}

/// Zeroes the diagonal and reconciles mirror pairs of one tensor's first
/// two modes. `unit` is the 1-based record number used in errors.
pub(crate) fn symmetrize_tensor(t: &mut DenseTensor, tol: f64, unit: usize) -> Result<()> {
    let dims = t.dims().to_vec();
    if dims.len() < 2 || dims[0] != dims[1] {
        return Err(SofterError::Shape(format!(
            "unit {unit}: symmetric mode needs p_1 = p_2, got {dims:?}"
        )));
    }
    let r = dims[0];
    let rest: usize = dims[2..].iter().product();
    let v = t.values_mut();
    for j1 in 0..r {
        for s in 0..rest {
            v[(j1 * r + j1) * rest + s] = 0.0;
        }
        for j2 in 0..j1 {
            for s in 0..rest {
                let lo = (j1 * r + j2) * rest + s;
                let up = (j2 * r + j1) * rest + s;
                let d = (v[lo] - v[up]).abs();
                if d > tol {
                    return Err(SofterError::Asymmetric(format!(
                        "unit {unit}: entries ({},{}) and ({},{}) differ by {d} (tolerance {tol})",
                        j1 + 1,
                        j2 + 1,
                        j2 + 1,
                        j1 + 1
                    )));
                }
                let avg = 0.5 * (v[lo] + v[up]);
                v[lo] = avg;
                v[up] = avg;
            }
        }
    }
    Ok(())
}

/// Persisted chain: the full checkpoint of either sampler flavor. The
/// externally tagged encoding lets the checkpoint's 128-bit RNG position
/// pass through serde without an intermediate buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainFile {
    Unstructured(ChainCheckpoint),
    Symmetric(SymmetricCheckpoint),
}

impl ChainFile {
    pub fn config_hash(&self) -> &str {
        match self {
            ChainFile::Unstructured(c) => &c.config_hash,
            ChainFile::Symmetric(c) => &c.config_hash,
        }
    }

    pub fn records(&self) -> &[crate::model::ChainRecord] {
        match self {
            ChainFile::Unstructured(c) => &c.records,
            ChainFile::Symmetric(c) => &c.records,
        }
    }

    pub fn stream(&self) -> u64 {
        match self {
            ChainFile::Unstructured(c) => c.stream,
            ChainFile::Symmetric(c) => c.stream,
        }
    }

    /// Retained draws packaged for summarization.
    pub fn to_samples(&self, config: &SofterConfig) -> crate::model::ChainSamples {
        let (seed, stream, iterations, records) = match self {
            ChainFile::Unstructured(c) => (c.seed, c.stream, c.iteration, c.records.clone()),
            ChainFile::Symmetric(c) => (c.seed, c.stream, c.iteration, c.records.clone()),
        };
        crate::model::ChainSamples {
            config_hash: config.hash(),
            seed,
            stream,
            iterations,
            burn_in: config.sampler.burn_in,
            thin: config.sampler.thin,
            records,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChainEnvelope {
    version: String,
    /// SHA-256 of the serialized `chain` value.
    sha256: String,
    chain: ChainFile,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    crate::model::hex(&h.finalize())
}

/// Writes a chain bundle: versioned, checksummed JSON.
pub fn save_chain(path: &Path, chain: &ChainFile) -> Result<()> {
    let body = serde_json::to_string(chain)?;
    let envelope = ChainEnvelope {
        version: env!("CARGO_PKG_VERSION").to_string(),
        sha256: sha256_hex(body.as_bytes()),
        chain: chain.clone(),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(serde_json::to_string(&envelope)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a chain bundle, verifying version and checksum.
pub fn load_chain(path: &Path) -> Result<ChainFile> {
    let text = fs::read_to_string(path)?;
    let envelope: ChainEnvelope = serde_json::from_str(&text)?;
    if envelope.version != env!("CARGO_PKG_VERSION") {
        return Err(SofterError::VersionMismatch(format!(
            "{}: written by version {}, this is {}",
            path.display(),
            envelope.version,
            env!("CARGO_PKG_VERSION")
        )));
    }
    let body = serde_json::to_string(&envelope.chain)?;
    let digest = sha256_hex(body.as_bytes());
    if digest != envelope.sha256 {
        return Err(SofterError::ChecksumMismatch(format!(
            "{}: stored {} vs recomputed {digest}",
            path.display(),
            envelope.sha256
        )));
    }
    Ok(envelope.chain)
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Ties a fit to its configuration, inputs, and chain artifacts. Checksums
/// are verified before any resume or prediction against the same files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: SofterConfig,
    pub config_hash: String,
    pub outcome_checksum: String,
    pub covariate_checksum: Option<String>,
    pub tensor_checksum: String,
    pub transform: Option<AppliedTransform>,
    pub chain_paths: Vec<String>,
}

pub fn save_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if m.version != env!("CARGO_PKG_VERSION") {
        return Err(SofterError::VersionMismatch(format!(
            "{}: written by version {}, this is {}",
            path.display(),
            m.version,
            env!("CARGO_PKG_VERSION")
        )));
    }
    Ok(m)
}

/// Verifies that the given files still match the manifest's checksums.
pub fn verify_manifest_inputs(
    manifest: &RunManifest,
    outcomes: &Path,
    covariates: Option<&Path>,
    tensors: &Path,
) -> Result<()> {
    let check = |name: &str, expect: &str, path: &Path| -> Result<()> {
        let got = sha256_file(path)?;
        if got != expect {
            return Err(SofterError::ChecksumMismatch(format!(
                "{name} file {} has drifted since the fit",
                path.display()
            )));
        }
        Ok(())
    };
    check("outcome", &manifest.outcome_checksum, outcomes)?;
    match (&manifest.covariate_checksum, covariates) {
        (Some(sum), Some(p)) => check("covariate", sum, p)?,
        (None, None) => {}
        _ => {
            return Err(SofterError::ChecksumMismatch(
                "covariate file presence disagrees with the manifest".into(),
            ))
        }
    }
    check("tensor", &manifest.tensor_checksum, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParameterState, SofterConfig};
    use crate::sampler::{Chain, RngStream};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn toy_tensors() -> Vec<DenseTensor> {
        vec![
            DenseTensor::new(vec![2, 3], (0..6).map(|v| v as f64 / 2.0).collect()).unwrap(),
            DenseTensor::new(vec![2, 3], (0..6).map(|v| -(v as f64)).collect()).unwrap(),
            DenseTensor::new(vec![2, 3], vec![0.25; 6]).unwrap(),
        ]
    }

    #[test]
    fn binary_round_trip_preserves_everything() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.soft");
        let ts = toy_tensors();
        write_tensor_file(&path, &ts, Symmetry::SemiSymmetric).unwrap();
        let (back, sym) = read_tensor_file(&path).unwrap();
        assert_eq!(back, ts);
        assert_eq!(sym, Symmetry::SemiSymmetric);
    }

    #[test]
    fn csv_and_binary_agree_in_memory() {
        let dir = tempdir().unwrap();
        let bin = dir.path().join("x.soft");
        let csv = dir.path().join("x.csv");
        let ts = toy_tensors();
        write_tensor_file(&bin, &ts, Symmetry::None).unwrap();
        write_tensors_csv(&csv, &ts).unwrap();
        assert_eq!(read_tensors_any(&bin).unwrap(), read_tensors_any(&csv).unwrap());
    }

    #[test]
    fn csv_fixture_loads_with_declared_dims() {
        let dir = tempdir().unwrap();
        let yp = dir.path().join("y.csv");
        let xp = dir.path().join("x.csv");
        fs::write(&yp, "1.5\n-0.5\n2.0\n").unwrap();
        fs::write(&xp, "dims=2x2\n1,2,3,4\n5,6,7,8\n0,0,0,0\n").unwrap();
        let (data, tf) = load_dataset(&yp, None, &xp, LoadOptions::default()).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.dims().unwrap(), &[2, 2]);
        assert_eq!(data.p(), 0);
        assert!(tf.is_none());
        assert_eq!(data.y(), &[1.5, -0.5, 2.0]);
    }

    #[test]
    fn nan_entries_are_rejected_with_coordinates() {
        let dir = tempdir().unwrap();
        let yp = dir.path().join("y.csv");
        let xp = dir.path().join("x.csv");
        fs::write(&yp, "1.0\n").unwrap();
        fs::write(&xp, "dims=2x2\n1,2,NaN,4\n").unwrap();
        let err = load_dataset(&yp, None, &xp, LoadOptions::default()).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("predictor 1") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn truncated_and_corrupt_binaries_are_format_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.soft");
        write_tensor_file(&path, &toy_tensors(), Symmetry::None).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_tensor_file(&path), Err(SofterError::Format(_))));
        fs::write(&path, b"NOPE!rest").unwrap();
        assert!(matches!(read_tensor_file(&path), Err(SofterError::Format(_))));
    }

    #[test]
    fn symmetric_loading_averages_within_tolerance() {
        let dir = tempdir().unwrap();
        let yp = dir.path().join("y.csv");
        let xp = dir.path().join("x.csv");
        fs::write(&yp, "0.0\n").unwrap();
        // diagonal entries nonzero, mirror pair off by 0.01
        fs::write(&xp, "dims=2x2\n9,1.0,1.01,9\n").unwrap();
        let opts =
            LoadOptions { standardize: false, symmetry: Symmetry::Symmetric, sym_tol: 0.05 };
        let (data, _) = load_dataset(&yp, None, &xp, opts).unwrap();
        let v = data.predictors()[0].values();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[3], 0.0);
        assert_relative_eq!(v[1], 1.005, epsilon = 1e-12);
        assert_eq!(v[1], v[2]);
        // beyond tolerance: rejected with coordinates
        let tight = LoadOptions { sym_tol: 0.001, ..opts };
        let err = load_dataset(&yp, None, &xp, tight).unwrap_err();
        assert!(matches!(err, SofterError::Asymmetric(_)), "{err}");
    }

    #[test]
    fn standardization_normalizes_and_records_transform() {
        let dir = tempdir().unwrap();
        let yp = dir.path().join("y.csv");
        let cp = dir.path().join("c.csv");
        let xp = dir.path().join("x.csv");
        fs::write(&yp, "2\n4\n6\n8\n").unwrap();
        fs::write(&cp, "1,10\n2,20\n3,30\n4,40\n").unwrap();
        fs::write(&xp, "dims=2\n1,2\n3,4\n5,6\n7,8\n").unwrap();
        let opts = LoadOptions { standardize: true, ..LoadOptions::default() };
        let (data, tf) = load_dataset(&yp, Some(&cp), &xp, opts).unwrap();
        let tf = tf.unwrap();
        let (ym, ysd) = mean_sd(data.y());
        assert_relative_eq!(ym, 0.0, epsilon = 1e-12);
        assert_relative_eq!(ysd, 1.0, epsilon = 1e-12);
        assert_relative_eq!(tf.y_center, 5.0, epsilon = 1e-12);
        assert_relative_eq!(tf.unstandardize_prediction(data.y()[0]), 2.0, epsilon = 1e-12);
        let col0: Vec<f64> = data.covariates().iter().map(|r| r[0]).collect();
        let (cm, csd) = mean_sd(&col0);
        assert_relative_eq!(cm, 0.0, epsilon = 1e-12);
        assert_relative_eq!(csd, 1.0, epsilon = 1e-12);
        let all: Vec<f64> =
            data.predictors().iter().flat_map(|t| t.values().iter().copied()).collect();
        let (_, xsd) = mean_sd(&all);
        assert_relative_eq!(xsd, 1.0, epsilon = 1e-12);
        assert!(tf.x_scale > 0.0);
    }

    fn toy_chain_file() -> (SofterConfig, ChainFile) {
        let mut cfg = SofterConfig::default_for(vec![2, 2], 1).unwrap();
        cfg.sampler.iterations = 6;
        cfg.sampler.burn_in = 2;
        let data = Dataset::empty(vec![2, 2]).unwrap();
        let mut chain = Chain::new(&cfg, &data, RngStream { seed: 5, stream: 0 }).unwrap();
        chain.run().unwrap();
        (cfg.clone(), ChainFile::Unstructured(chain.checkpoint()))
    }

    #[test]
    fn chain_save_load_is_byte_stable() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.chain");
        let p2 = dir.path().join("b.chain");
        let (_, cf) = toy_chain_file();
        save_chain(&p1, &cf).unwrap();
        let loaded = load_chain(&p1).unwrap();
        assert_eq!(loaded, cf);
        save_chain(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_chain_fails_checksum() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.chain");
        let (_, cf) = toy_chain_file();
        save_chain(&p, &cf).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        // flip one digit inside the serialized state, keeping valid JSON
        let at = text.find("\"mu\":").unwrap() + 5;
        text.replace_range(at..at + 1, if &text[at..at + 1] == "1" { "2" } else { "1" });
        fs::write(&p, text).unwrap();
        let err = load_chain(&p).err().unwrap();
        assert!(matches!(err, SofterError::ChecksumMismatch(_)), "{err}");
    }

    #[test]
    fn version_drift_is_refused() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.chain");
        let (_, cf) = toy_chain_file();
        let body = serde_json::to_string(&cf).unwrap();
        let envelope = ChainEnvelope {
            version: "0.0.0-other".into(),
            sha256: sha256_hex(body.as_bytes()),
            chain: cf,
        };
        fs::write(&p, serde_json::to_string(&envelope).unwrap()).unwrap();
        assert!(matches!(load_chain(&p), Err(SofterError::VersionMismatch(_))));
    }

    #[test]
    fn loaded_chain_resumes_exactly() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.chain");
        let mut cfg = SofterConfig::default_for(vec![2, 2], 1).unwrap();
        cfg.sampler.iterations = 14;
        cfg.sampler.burn_in = 0;
        let data = Dataset::empty(vec![2, 2]).unwrap();
        let stream = RngStream { seed: 9, stream: 0 };
        let full = crate::sampler::run_chain(&cfg, &data, stream).unwrap();
        let mut chain = Chain::new(&cfg, &data, stream).unwrap();
        for _ in 0..5 {
            chain.sweep().unwrap();
        }
        save_chain(&p, &ChainFile::Unstructured(chain.checkpoint())).unwrap();
        drop(chain);
        let ChainFile::Unstructured(ckpt) = load_chain(&p).unwrap() else { unreachable!() };
        let mut resumed = Chain::resume(&cfg, &data, ckpt).unwrap();
        resumed.run().unwrap();
        assert_eq!(full.records, resumed.into_samples().records);
    }

    #[test]
    fn manifest_round_trip_and_input_verification() {
        let dir = tempdir().unwrap();
        let yp = dir.path().join("y.csv");
        let xp = dir.path().join("x.csv");
        fs::write(&yp, "1.0\n2.0\n").unwrap();
        fs::write(&xp, "dims=2\n1,2\n3,4\n").unwrap();
        let cfg = SofterConfig::default_for(vec![2], 1).unwrap();
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            outcome_checksum: sha256_file(&yp).unwrap(),
            covariate_checksum: None,
            tensor_checksum: sha256_file(&xp).unwrap(),
            transform: None,
            chain_paths: vec!["chain_0.json".into()],
        };
        let mp = dir.path().join("manifest.json");
        save_manifest(&mp, &manifest).unwrap();
        assert_eq!(load_manifest(&mp).unwrap(), manifest);
        verify_manifest_inputs(&manifest, &yp, None, &xp).unwrap();
        fs::write(&yp, "1.0\n2.5\n").unwrap();
        let err = verify_manifest_inputs(&manifest, &yp, None, &xp).err().unwrap();
        assert!(matches!(err, SofterError::ChecksumMismatch(_)));
    }

    #[test]
    fn symmetric_chain_file_round_trips() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.chain");
        let mut cfg = SofterConfig::default_for(vec![3, 3], 1).unwrap();
        cfg.symmetry = Symmetry::Symmetric;
        cfg.sampler.iterations = 6;
        cfg.sampler.burn_in = 2;
        let data = Dataset::empty(vec![3, 3]).unwrap();
        let mut chain = crate::symmetric::SymmetricChain::new(
            &cfg,
            &data,
            RngStream { seed: 2, stream: 0 },
        )
        .unwrap();
        chain.run().unwrap();
        let cf = ChainFile::Symmetric(chain.checkpoint());
        save_chain(&p, &cf).unwrap();
        assert_eq!(load_chain(&p).unwrap(), cf);
        assert_eq!(cf.records().len(), 4);
    }

    #[test]
    fn state_survives_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SofterConfig::default_for(vec![2, 3], 2).unwrap();
        let st = ParameterState::draw_prior(&cfg, 1, &mut rng).unwrap();
        let text = serde_json::to_string(&st).unwrap();
        let back: ParameterState = serde_json::from_str(&text).unwrap();
        assert_eq!(st, back);
    }
}
