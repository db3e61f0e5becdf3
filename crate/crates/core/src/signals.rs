//! Datasets, excitation generators, noise injection and preprocessing.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Intersample, C64};

/// Uniformly sampled input/output record; each signal is `N x channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub r: Option<DMatrix<f64>>,
    pub ts: f64,
    /// Number of samples by which the outputs have already been advanced.
    pub delay_samples: usize,
    pub intersample: Intersample,
}

impl Dataset {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>, r: Option<DMatrix<f64>>, ts: f64) -> Result<Self> {
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::Data(format!("sample period must be positive, got {ts}")));
        }
        if u.nrows() != y.nrows() {
            return Err(Error::Data(format!("u has {} samples, y has {}", u.nrows(), y.nrows())));
        }
        if let Some(r) = &r {
            if r.nrows() != y.nrows() {
                return Err(Error::Data(format!("r has {} samples, y has {}", r.nrows(), y.nrows())));
            }
            if r.ncols() != y.ncols() {
                return Err(Error::Data(format!("r has {} channels, y has {}", r.ncols(), y.ncols())));
            }
        }
        Ok(Self {
            u,
            y,
            r,
            ts,
            delay_samples: 0,
            intersample: Intersample::Zoh,
        })
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.y.ncols()
    }

    pub fn reference(&self) -> Result<&DMatrix<f64>> {
        self.r.as_ref().ok_or(Error::MissingReference)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            ts: self.ts,
            n_u: self.n_u(),
            n_y: self.n_y(),
            has_r: self.r.is_some(),
            delay_samples: self.delay_samples,
        }
    }
}

/// Sidecar metadata stored next to the CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub n_u: usize,
    pub n_y: usize,
    pub has_r: bool,
    pub delay_samples: usize,
}

/// Path of the metadata sidecar belonging to a CSV file (`data.csv` -> `data.json`).
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Which CSV columns hold which signal.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMap {
    pub time: String,
    pub u: Vec<String>,
    pub y: Vec<String>,
    pub r: Vec<String>,
}

impl ColumnMap {
    /// `t`, `u1..`, `y1..`, `r1..` in header order.
    pub fn detect(header: &[String]) -> Self {
        let pick = |prefix: char| {
            let mut cols: Vec<(usize, String)> = header
                .iter()
                .filter_map(|h| {
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<usize>().ok().map(|i| (i, h.clone()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect::<Vec<_>>()
        };
        Self {
            time: "t".into(),
            u: pick('u'),
            y: pick('y'),
            r: pick('r'),
        }
    }
}

fn fmt_f64(x: f64) -> String {
    // Debug formatting is the shortest representation that parses back exactly
    format!("{x:?}")
}

/// Write `path` (CSV) and its metadata sidecar.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=ds.n_u()).map(|i| format!("u{i}")));
    header.extend((1..=ds.n_y()).map(|i| format!("y{i}")));
    if ds.r.is_some() {
        header.extend((1..=ds.n_y()).map(|i| format!("r{i}")));
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for k in 0..ds.len() {
        row.clear();
        row.push(fmt_f64(k as f64 * ds.ts));
        row.extend(ds.u.row(k).iter().map(|&v| fmt_f64(v)));
        row.extend(ds.y.row(k).iter().map(|&v| fmt_f64(v)));
        if let Some(r) = &ds.r {
            row.extend(r.row(k).iter().map(|&v| fmt_f64(v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&ds.meta())?)?;
    Ok(())
}

/// Read a CSV dataset. The sample period comes from the sidecar when present,
/// otherwise from the time column. The time column must be uniform to within
/// `1e-9 * Ts`.
pub fn load_dataset(path: impl AsRef<Path>, columns: Option<&ColumnMap>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let map = columns.cloned().unwrap_or_else(|| ColumnMap::detect(&header));
    let index = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let t_col = index(&map.time)?;
    let u_cols = map.u.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let y_cols = map.y.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let r_cols = map.r.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    if y_cols.is_empty() {
        return Err(Error::Data("no output columns".into()));
    }
    if !r_cols.is_empty() && r_cols.len() != y_cols.len() {
        return Err(Error::Data("number of r columns must equal number of y columns".into()));
    }

    let mut t = Vec::new();
    let (mut u, mut y, mut r) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "row {} has {} fields, header has {}",
                line + 2,
                rec.len(),
                header.len()
            )));
        }
        let cell = |i: usize| -> Result<f64> {
            let s = rec[i].trim();
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("row {}: non-numeric cell '{s}'", line + 2)))
        };
        t.push(cell(t_col)?);
        for &c in &u_cols {
            u.push(cell(c)?);
        }
        for &c in &y_cols {
            y.push(cell(c)?);
        }
        for &c in &r_cols {
            r.push(cell(c)?);
        }
    }
    let n = t.len();
    let meta: Option<DatasetMeta> = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let ts = match &meta {
        Some(m) => m.ts,
        None if n >= 2 => (t[n - 1] - t[0]) / (n - 1) as f64,
        None => return Err(Error::Data("sample period unknown: need two samples or a metadata sidecar".into())),
    };
    if !(ts > 0.0) {
        return Err(Error::Data(format!("non-positive sample period {ts}")));
    }
    for (k, &tk) in t.iter().enumerate() {
        if (tk - (t[0] + k as f64 * ts)).abs() > 1e-9 * ts {
            return Err(Error::Data(format!("time column is not uniform at row {}", k + 2)));
        }
    }
    let to_mat = |v: Vec<f64>, ch: usize| DMatrix::from_row_slice(n, ch, &v);
    let r = if r_cols.is_empty() { None } else { Some(to_mat(r, r_cols.len())) };
    let mut ds = Dataset::new(to_mat(u, u_cols.len()), to_mat(y, y_cols.len()), r, ts)?;
    if let Some(m) = meta {
        if m.n_u != ds.n_u() || m.n_y != ds.n_y() || m.has_r != ds.r.is_some() {
            return Err(Error::Data("metadata sidecar disagrees with CSV columns".into()));
        }
        ds.delay_samples = m.delay_samples;
    }
    Ok(ds)
}

/// I.i.d. zero-mean Gaussian samples, `n x channels`.
pub fn generate_gaussian(n: usize, channels: usize, variance: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = variance.max(0.0).sqrt();
    // draw row by row so that the sequence does not depend on storage order
    let mut out = DMatrix::zeros(n, channels);
    for k in 0..n {
        for c in 0..channels {
            let z: f64 = rng.sample(StandardNormal);
            out[(k, c)] = sd * z;
        }
    }
    out
}

fn band_bins(period_len: usize, ts: f64, band: (f64, f64)) -> Result<(usize, usize)> {
    let nyquist = 0.5 / ts;
    let (f_lo, f_hi) = band;
    if f_hi > nyquist * (1.0 + 1e-12) {
        return Err(Error::BandExceedsNyquist { nyquist });
    }
    if !(f_lo <= f_hi) || f_lo < 0.0 {
        return Err(Error::InvalidConfig(format!("invalid band [{f_lo}, {f_hi}]")));
    }
    let df = 1.0 / (period_len as f64 * ts);
    let lo = ((f_lo / df) - 1e-9).ceil().max(1.0) as usize;
    // the Nyquist bin itself cannot carry an arbitrary phase
    let hi_max = (period_len - 1) / 2;
    let hi = (((f_hi / df) + 1e-9).floor() as usize).min(hi_max);
    if lo > hi {
        return Err(Error::InvalidConfig("no frequency bin inside the excitation band".into()));
    }
    Ok((lo, hi))
}

fn synthesize_period(period_len: usize, bins: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let amp = (2.0 / bins.len() as f64).sqrt();
    let mut spec = vec![Complex::new(0.0, 0.0); period_len];
    for &k in bins {
        let phase = rng.random::<f64>() * 2.0 * PI;
        spec[k] = Complex::from_polar(amp, phase);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(period_len).process(&mut spec);
    // sum_k amp cos(2 pi k n / L + phi_k) is the real part of the inverse DFT
    spec.iter().map(|c| c.re).collect()
}

fn tile(period: &[f64], periods: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(period.len() * periods);
    for _ in 0..periods {
        out.extend_from_slice(period);
    }
    out
}

/// Random-phase multisine with a flat amplitude spectrum over `band` (Hz),
/// unit RMS, exactly `periods`-periodic.
pub fn generate_multisine(n: usize, ts: f64, band: (f64, f64), periods: usize, seed: u64) -> Result<Vec<f64>> {
    if periods == 0 || n == 0 || !n.is_multiple_of(periods) {
        return Err(Error::InvalidConfig(format!("{n} samples cannot hold {periods} whole periods")));
    }
    let period_len = n / periods;
    let (lo, hi) = band_bins(period_len, ts, band)?;
    let bins: Vec<usize> = (lo..=hi).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(tile(&synthesize_period(period_len, &bins, &mut rng), periods))
}

/// Multisines for several inputs on interleaved frequency grids: input `c`
/// excites the in-band bins `lo + c, lo + c + channels, ...`. Each channel is
/// flat over its own bins with unit RMS. Returns `n x channels`.
pub fn generate_multisine_interleaved(
    n: usize,
    ts: f64,
    band: (f64, f64),
    periods: usize,
    channels: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if periods == 0 || n == 0 || !n.is_multiple_of(periods) {
        return Err(Error::InvalidConfig(format!("{n} samples cannot hold {periods} whole periods")));
    }
    let period_len = n / periods;
    let (lo, hi) = band_bins(period_len, ts, band)?;
    if hi - lo + 1 < channels {
        return Err(Error::InvalidConfig("band too narrow for interleaving".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, channels);
    for c in 0..channels {
        let bins: Vec<usize> = (lo + c..=hi).step_by(channels).collect();
        let sig = tile(&synthesize_period(period_len, &bins, &mut rng), periods);
        out.column_mut(c).copy_from_slice(&sig);
    }
    Ok(out)
}

/// Output disturbance description.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    /// Covariance of the white noise sequence, `n_y x n_y`.
    Covariance(DMatrix<f64>),
    /// Per-channel signal-to-noise ratio in dB against the noise-free output.
    SnrDb(f64),
}

impl NoiseSpec {
    pub fn white(n_y: usize, variance: f64) -> Self {
        NoiseSpec::Covariance(DMatrix::identity(n_y, n_y) * variance)
    }

    pub fn none(n_y: usize) -> Self {
        NoiseSpec::Covariance(DMatrix::zeros(n_y, n_y))
    }

    /// Resolve to a covariance for the given noise-free output.
    pub fn covariance_for(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            NoiseSpec::Covariance(c) => {
                if c.nrows() != x.ncols() || c.ncols() != x.ncols() {
                    return Err(Error::ChannelMismatch {
                        expected: x.ncols(),
                        got: c.nrows(),
                    });
                }
                Ok(c.clone())
            }
            NoiseSpec::SnrDb(snr) => {
                if !snr.is_finite() {
                    return Err(Error::InvalidConfig("SNR must be finite".into()));
                }
                let factor = 10f64.powf(-snr / 10.0);
                let vars: Vec<f64> = (0..x.ncols()).map(|c| variance(x.column(c).as_slice()) * factor).collect();
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vars)))
            }
        }
    }
}

/// Population variance (mean removed).
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Matrix square root factor `L` with `L L^T = cov` for a symmetric PSD `cov`.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::NotPositiveSemidefinite);
    }
    let scale = cov.amax();
    if (cov - cov.transpose()).amax() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite);
    }
    if scale == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::NotPositiveSemidefinite);
    }
    let sqrt_l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l))
}

/// Draw the noise sequence `v` (`N x n_y`) for a noise-free output `x`.
pub fn sample_output_noise(x: &DMatrix<f64>, spec: &NoiseSpec, seed: u64) -> Result<DMatrix<f64>> {
    let cov = spec.covariance_for(x)?;
    let l = psd_factor(&cov)?;
    let z = generate_gaussian(x.nrows(), x.ncols(), 1.0, seed);
    Ok(z * l.transpose())
}

/// `y = x + v` with `v` white Gaussian as described by `spec`.
pub fn add_output_noise(x: &DMatrix<f64>, spec: &NoiseSpec, seed: u64) -> Result<DMatrix<f64>> {
    Ok(x + sample_output_noise(x, spec, seed)?)
}

/// Advance the outputs by `d` samples relative to the inputs, dropping the
/// last `d` input samples.
pub fn compensate_delay(ds: &Dataset, d: usize) -> Result<Dataset> {
    let n = ds.len();
    if d >= n {
        return Err(Error::DelayTooLarge { delay: d, len: n });
    }
    let keep = n - d;
    let mut out = Dataset::new(
        ds.u.rows(0, keep).into_owned(),
        ds.y.rows(d, keep).into_owned(),
        ds.r.as_ref().map(|r| r.rows(0, keep).into_owned()),
        ds.ts,
    )?;
    out.delay_samples = ds.delay_samples + d;
    out.intersample = ds.intersample;
    Ok(out)
}

/// Remove the least-squares straight line from every column.
pub fn detrend_linear(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = x.clone();
    if n < 2 {
        return out;
    }
    let tm = (n - 1) as f64 / 2.0;
    let stt: f64 = (0..n).map(|k| (k as f64 - tm).powi(2)).sum();
    for c in 0..x.ncols() {
        let col = x.column(c);
        let mean = col.mean();
        let slope = (0..n).map(|k| (k as f64 - tm) * (col[k] - mean)).sum::<f64>() / stt;
        for k in 0..n {
            out[(k, c)] = col[k] - mean - slope * (k as f64 - tm);
        }
    }
    out
}

/// One point of a nonparametric frequency response estimate.
#[derive(Clone, Debug)]
pub struct FrfPoint {
    pub freq_hz: f64,
    pub g: DMatrix<C64>,
}

/// Nonparametric FRF from periodic data excited by interleaved multisines.
///
/// The first `skip_periods` periods are discarded as transient; the DFTs of
/// the remaining periods are averaged. Each group of consecutive excited bins
/// (one bin per input) yields one `n_y x n_u` estimate located at the mean bin
/// frequency.
pub fn estimate_frf_interleaved(ds: &Dataset, periods: usize, skip_periods: usize) -> Result<Vec<FrfPoint>> {
    let n = ds.len();
    if periods == 0 || !n.is_multiple_of(periods) || skip_periods >= periods {
        return Err(Error::InvalidConfig("invalid period layout for FRF estimation".into()));
    }
    let len = n / periods;
    let used = periods - skip_periods;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(len);
    let spectrum = |sig: &[f64]| -> Vec<Complex<f64>> {
        let mut acc = vec![Complex::new(0.0, 0.0); len];
        for p in skip_periods..periods {
            let mut buf: Vec<Complex<f64>> = sig[p * len..(p + 1) * len].iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft.process(&mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b / used as f64;
            }
        }
        acc
    };
    let (n_u, n_y) = (ds.n_u(), ds.n_y());
    let uspec: Vec<Vec<Complex<f64>>> = (0..n_u).map(|j| spectrum(ds.u.column(j).as_slice())).collect();
    let yspec: Vec<Vec<Complex<f64>>> = (0..n_y).map(|i| spectrum(ds.y.column(i).as_slice())).collect();

    let peak = uspec
        .iter()
        .flat_map(|s| s[1..len / 2].iter().map(|c| c.norm()))
        .fold(0.0, f64::max);
    // (bin, exciting input)
    let mut excited = Vec::new();
    for k in 1..len.div_ceil(2) {
        let (j, mag) = (0..n_u)
            .map(|j| (j, uspec[j][k].norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if mag > 1e-6 * peak {
            excited.push((k, j));
        }
    }
    let df = 1.0 / (len as f64 * ds.ts);
    let mut out = Vec::new();
    for group in excited.chunks(n_u) {
        if group.len() < n_u {
            break;
        }
        let mut g = DMatrix::<C64>::zeros(n_y, n_u);
        let mut seen = vec![false; n_u];
        for &(k, j) in group {
            seen[j] = true;
            for i in 0..n_y {
                let v = yspec[i][k] / uspec[j][k];
                g[(i, j)] = C64::new(v.re, v.im);
            }
        }
        if seen.iter().all(|&s| s) {
            let mean_bin = group.iter().map(|&(k, _)| k as f64).sum::<f64>() / n_u as f64;
            out.push(FrfPoint { freq_hz: mean_bin * df, g });
        }
    }
    Ok(out)
}
