//! Vibration records: loading, tiling into fixed-length segments, per-segment
//! min-max scaling, a synthetic modal-response generator, and the
//! train/test scenario splits.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Condition {
    Undamaged,
    Damaged,
}

impl Condition {
    pub fn label(self) -> u8 {
        match self {
            Condition::Undamaged => 0,
            Condition::Damaged => 1,
        }
    }
}

impl TryFrom<u8> for Condition {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Condition::Undamaged),
            1 => Ok(Condition::Damaged),
            other => Err(format!("condition must be 0 or 1, got {other}")),
        }
    }
}

impl From<Condition> for u8 {
    fn from(c: Condition) -> u8 {
        c.label()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Undamaged => "undamaged",
            Condition::Damaged => "damaged",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Fake,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Real => "real",
            Source::Fake => "fake",
        })
    }
}

/// Sidecar metadata accompanying a raw signal file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalMeta {
    pub sample_rate_hz: f64,
    pub condition: Condition,
    #[serde(default)]
    pub joint_id: u32,
    #[serde(default = "default_source")]
    pub source: Source,
}

fn default_source() -> Source {
    Source::Real
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub condition: Condition,
    pub joint_id: u32,
    pub source: Source,
}

impl RawSignal {
    pub fn meta(&self) -> SignalMeta {
        SignalMeta {
            sample_rate_hz: self.sample_rate_hz,
            condition: self.condition,
            joint_id: self.joint_id,
            source: self.source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub values: Vec<f64>,
    pub condition: Condition,
    pub joint_id: u32,
    pub source: Source,
    pub segment_index: usize,
}

/// What makes two segments "the same" for split disjointness.
pub type SegmentKey = (Source, Condition, u32, usize);

impl Segment {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key(&self) -> SegmentKey {
        (self.source, self.condition, self.joint_id, self.segment_index)
    }

    /// Text form of `key()`, e.g. `damaged_fake_j0_17`.
    pub fn id(&self) -> String {
        format!("{}_{}_j{}_{}", self.condition, self.source, self.joint_id, self.segment_index)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Segment {
        Segment {
            values,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    /// Little-endian `f64`, no header.
    F64Le,
    /// One value per line.
    Csv,
}

impl SignalFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("f64") | Some("bin") => Ok(SignalFormat::F64Le),
            Some("csv") | Some("txt") => Ok(SignalFormat::Csv),
            _ => Err(Error::Ingestion {
                path: path.to_path_buf(),
                offset: 0,
                message: "unknown signal format (expected .f64 or .csv)".into(),
            }),
        }
    }
}

/// Default sidecar location: `<file>.meta.toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

pub fn read_meta(path: &Path) -> Result<SignalMeta> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading metadata {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        offset: e.span().map(|s| s.start).unwrap_or(0),
        message: e.message().to_string(),
    })
}

pub fn write_meta(path: &Path, meta: &SignalMeta) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn ingestion(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

pub fn read_f64le(path: &Path) -> Result<Vec<f64>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() % 8 != 0 {
        return Err(ingestion(
            path,
            bytes.len() - bytes.len() % 8,
            format!("{} trailing bytes do not form a 64-bit float", bytes.len() % 8),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_f64le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_csv_column(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        let v: f64 = field
            .parse()
            .map_err(|_| ingestion(path, line_no + 1, format!("cannot parse {field:?} as a number")))?;
        out.push(v);
    }
    Ok(out)
}

/// Loads and validates a raw record. `min_len` is usually the segment length.
pub fn load_signal(
    path: &Path,
    format: SignalFormat,
    meta: &SignalMeta,
    min_len: usize,
) -> Result<RawSignal> {
    let samples = match format {
        SignalFormat::F64Le => read_f64le(path)?,
        SignalFormat::Csv => read_csv_column(path)?,
    };
    if samples.is_empty() {
        return Err(ingestion(path, 0, "file holds no samples"));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        let offset = match format {
            SignalFormat::F64Le => i * 8,
            SignalFormat::Csv => i + 1,
        };
        return Err(ingestion(path, offset, "non-finite sample"));
    }
    if samples.len() < min_len {
        return Err(ingestion(
            path,
            samples.len(),
            format!("{} samples, need at least {min_len}", samples.len()),
        ));
    }
    if !(meta.sample_rate_hz > 0.0) {
        return Err(ingestion(path, 0, "sample rate must be positive"));
    }
    Ok(RawSignal {
        samples,
        sample_rate_hz: meta.sample_rate_hz,
        condition: meta.condition,
        joint_id: meta.joint_id,
        source: meta.source,
    })
}

/// Tiles the record into `floor(len / seg_len)` contiguous windows, dropping
/// the remainder. `segment_index` is the tile position in the record, so it
/// survives shuffling.
pub fn segment<R: Rng + ?Sized>(
    raw: &RawSignal,
    seg_len: usize,
    shuffle: bool,
    rng: &mut R,
) -> Result<Vec<Segment>> {
    if seg_len == 0 {
        return Err(Error::Parameter("segment length must be at least 1".into()));
    }
    if seg_len > raw.samples.len() {
        return Err(Error::Geometry(format!(
            "segment length {seg_len} exceeds record length {}",
            raw.samples.len()
        )));
    }
    let mut segs: Vec<Segment> = raw
        .samples
        .chunks_exact(seg_len)
        .enumerate()
        .map(|(i, w)| Segment {
            values: w.to_vec(),
            condition: raw.condition,
            joint_id: raw.joint_id,
            source: raw.source,
            segment_index: i,
        })
        .collect();
    if shuffle {
        segs.shuffle(rng);
    }
    Ok(segs)
}

/// `y = scale * x + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn invert(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }
}

/// Maps the segment's minimum to `lo` and maximum to `hi` (both exactly).
pub fn normalize_minmax(seg: &Segment, lo: f64, hi: f64) -> Result<(Segment, AffineMap)> {
    let (min, max) = seg
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(max > min) {
        return Err(Error::Parameter(
            "degenerate range: segment is constant, cannot min-max normalize".into(),
        ));
    }
    let span = max - min;
    let scale = (hi - lo) / span;
    let map = AffineMap {
        scale,
        offset: lo - min * scale,
    };
    let values = seg
        .values
        .iter()
        .map(|v| {
            if *v == min {
                lo
            } else if *v == max {
                hi
            } else {
                lo + (v - min) * scale
            }
        })
        .collect();
    Ok((seg.with_values(values), map))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalComponent {
    pub frequency_hz: f64,
    pub damping_ratio: f64,
    pub amplitude: f64,
}

/// Multiplicative change applied to one mode for the damaged condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeShift {
    pub frequency_factor: f64,
    pub amplitude_factor: f64,
}

impl ModeShift {
    pub fn identity() -> Self {
        ModeShift {
            frequency_factor: 1.0,
            amplitude_factor: 1.0,
        }
    }
}

/// Synthetic stand-in for a measured record: free-decay modal responses
/// re-excited at Poisson-distributed instants, plus white noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub modes: Vec<ModalComponent>,
    pub noise_std: f64,
    pub damage_shift: Vec<ModeShift>,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Mean excitation events per second (an event at t = 0 is always present).
    pub excitation_rate_hz: f64,
    #[serde(default)]
    pub joint_id: u32,
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.sample_rate_hz > 0.0 && self.duration_s > 0.0) {
            return Err(Error::Parameter("sample rate and duration must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Parameter("surrogate needs at least one mode".into()));
        }
        if self.damage_shift.len() != self.modes.len() {
            return Err(Error::Parameter(format!(
                "{} damage shifts for {} modes",
                self.damage_shift.len(),
                self.modes.len()
            )));
        }
        if !(self.noise_std >= 0.0) || !(self.excitation_rate_hz >= 0.0) {
            return Err(Error::Parameter(
                "noise std and excitation rate must be non-negative".into(),
            ));
        }
        for (m, s) in self.modes.iter().zip(&self.damage_shift) {
            for f in [m.frequency_hz, m.frequency_hz * s.frequency_factor] {
                if !(f > 0.0 && f < nyquist) {
                    return Err(Error::Parameter(format!(
                        "mode frequency {f} Hz outside (0, {nyquist}) Hz"
                    )));
                }
            }
            if !(0.0..1.0).contains(&m.damping_ratio) {
                return Err(Error::Parameter(format!(
                    "damping ratio {} outside [0, 1)",
                    m.damping_ratio
                )));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

pub fn synthesize_surrogate<R: Rng + ?Sized>(
    spec: &SurrogateSpec,
    condition: Condition,
    rng: &mut R,
) -> Result<RawSignal> {
    spec.validate()?;
    let n = spec.num_samples();
    let fs = spec.sample_rate_hz;
    let modes: Vec<ModalComponent> = spec
        .modes
        .iter()
        .zip(&spec.damage_shift)
        .map(|(m, s)| match condition {
            Condition::Undamaged => m.clone(),
            Condition::Damaged => ModalComponent {
                frequency_hz: m.frequency_hz * s.frequency_factor,
                damping_ratio: m.damping_ratio,
                amplitude: m.amplitude * s.amplitude_factor,
            },
        })
        .collect();

    let mut onsets = vec![0usize];
    if spec.excitation_rate_hz > 0.0 {
        let gap = Exp::new(spec.excitation_rate_hz).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gap.sample(rng);
            let k = (t * fs).round() as usize;
            if k >= n {
                break;
            }
            onsets.push(k);
        }
    }

    let mut samples = vec![0.0; n];
    for &k0 in &onsets {
        for m in &modes {
            let phase = rng.random_range(0.0..2.0 * PI);
            let strength = rng.random_range(0.5..1.0);
            let omega = 2.0 * PI * m.frequency_hz;
            let omega_d = omega * (1.0 - m.damping_ratio * m.damping_ratio).sqrt();
            let decay = m.damping_ratio * omega;
            // response is negligible once the envelope falls below 1e-9
            let horizon = if decay > 0.0 {
                ((20.7 / decay) * fs).ceil() as usize
            } else {
                n
            };
            let end = n.min(k0.saturating_add(horizon));
            for (i, s) in samples[k0..end].iter_mut().enumerate() {
                let t = i as f64 / fs;
                *s += m.amplitude * strength * (-decay * t).exp() * (omega_d * t + phase).sin();
            }
        }
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Parameter(e.to_string()))?;
        for s in &mut samples {
            *s += noise.sample(rng);
        }
    }
    Ok(RawSignal {
        samples,
        sample_rate_hz: fs,
        condition,
        joint_id: spec.joint_id,
        source: Source::Real,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitCounts {
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train_per_class: 60,
            test_per_class: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub scenario_id: u8,
    pub train: Vec<(Segment, u8)>,
    pub test: Vec<(Segment, u8)>,
}

fn draw(pool: &[Segment], n: usize, what: &str, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<Segment>> {
    if pool.len() < n {
        return Err(Error::Allocation(format!(
            "{what} pool holds {} segments, {n} requested (short by {})",
            pool.len(),
            n - pool.len()
        )));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(rng);
    Ok(idx[..n].iter().map(|i| pool[*i].clone()).collect())
}

/// Scenario 1 trains and tests on real data only. Scenario 2 trains on real
/// data and tests on real undamaged plus generated damaged segments.
/// Sampling is without replacement.
pub fn build_scenario<R: Rng + ?Sized>(
    undamaged: &[Segment],
    damaged_real: &[Segment],
    damaged_fake: &[Segment],
    scenario_id: u8,
    counts: SplitCounts,
    rng: &mut R,
) -> Result<ScenarioSplit> {
    let (ntr, nte) = (counts.train_per_class, counts.test_per_class);
    let und = draw(undamaged, ntr + nte, "undamaged", rng)?;
    let (und_train, und_test) = und.split_at(ntr);
    let (dam_train, dam_test): (Vec<Segment>, Vec<Segment>) = match scenario_id {
        1 => {
            let d = draw(damaged_real, ntr + nte, "damaged real", rng)?;
            (d[..ntr].to_vec(), d[ntr..].to_vec())
        }
        2 => (
            draw(damaged_real, ntr, "damaged real", rng)?,
            draw(damaged_fake, nte, "damaged fake", rng)?,
        ),
        other => {
            return Err(Error::Parameter(format!("scenario must be 1 or 2, got {other}")))
        }
    };
    let label = |segs: &[Segment], y: u8| segs.iter().cloned().map(move |s| (s, y)).collect::<Vec<_>>();
    let mut train = label(und_train, 0);
    train.extend(label(&dam_train, 1));
    let mut test = label(und_test, 0);
    test.extend(label(&dam_test, 1));
    Ok(ScenarioSplit {
        scenario_id,
        train,
        test,
    })
}

pub const POOL_MANIFEST: &str = "pool.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub file: String,
    pub condition: Condition,
    pub joint_id: u32,
    pub source: Source,
    pub segment_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub seg_len: usize,
    pub segments: Vec<PoolEntry>,
}

pub fn segment_file_name(seg: &Segment) -> String {
    format!(
        "{}_{}_j{}_{:05}.f64",
        seg.condition, seg.source, seg.joint_id, seg.segment_index
    )
}

/// Writes each segment as a `.f64` file plus a `pool.json` manifest, in list order.
pub fn write_pool(dir: &Path, segments: &[Segment]) -> Result<PoolManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let seg_len = segments.first().map_or(0, |s| s.len());
    let mut entries = Vec::with_capacity(segments.len());
    for s in segments {
        if s.len() != seg_len {
            return Err(Error::Dimension(format!(
                "pool mixes segment lengths {seg_len} and {}",
                s.len()
            )));
        }
        let file = segment_file_name(s);
        write_f64le(&dir.join(&file), &s.values)?;
        entries.push(PoolEntry {
            file,
            condition: s.condition,
            joint_id: s.joint_id,
            source: s.source,
            segment_index: s.segment_index,
        });
    }
    let manifest = PoolManifest {
        seg_len,
        segments: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(POOL_MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}

pub fn read_pool(dir: &Path) -> Result<Vec<Segment>> {
    let path = dir.join(POOL_MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: PoolManifest = serde_json::from_str(&text).map_err(|e| Error::Ingestion {
        path: path.clone(),
        offset: e.column(),
        message: e.to_string(),
    })?;
    manifest
        .segments
        .iter()
        .map(|e| {
            let file = dir.join(&e.file);
            let values = read_f64le(&file)?;
            if values.len() != manifest.seg_len {
                return Err(ingestion(
                    &file,
                    values.len() * 8,
                    format!("segment has {} samples, manifest says {}", values.len(), manifest.seg_len),
                ));
            }
            Ok(Segment {
                values,
                condition: e.condition,
                joint_id: e.joint_id,
                source: e.source,
                segment_index: e.segment_index,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raw(n: usize) -> RawSignal {
        RawSignal {
            samples: (0..n).map(|i| i as f64).collect(),
            sample_rate_hz: 1024.0,
            condition: Condition::Damaged,
            joint_id: 1,
            source: Source::Real,
        }
    }

    fn meta() -> SignalMeta {
        SignalMeta {
            sample_rate_hz: 1024.0,
            condition: Condition::Undamaged,
            joint_id: 0,
            source: Source::Real,
        }
    }

    #[test]
    fn segment_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(segment(&raw(262_144), 1024, true, &mut rng).unwrap().len(), 256);
        let one = segment(&raw(1024), 1024, false, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].values, raw(1024).samples);
        let two = segment(&raw(2500), 1024, false, &mut rng).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].values.last(), Some(&2047.0));
        assert!(matches!(
            segment(&raw(10), 11, false, &mut rng),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn unshuffled_segments_concatenate_to_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = raw(1000);
        let segs = segment(&r, 64, false, &mut rng).unwrap();
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.values.clone()).collect();
        assert_eq!(joined, r.samples[..15 * 64]);
    }

    #[test]
    fn minmax_examples() {
        let s = segment(&raw(3), 3, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()[0]
            .with_values(vec![0.0, 5.0, 10.0]);
        let (n, _) = normalize_minmax(&s, -1.0, 1.0).unwrap();
        assert_eq!(n.values, vec![-1.0, 0.0, 1.0]);
        let (n, map) = normalize_minmax(&s.with_values(vec![2.0, 4.0]), -1.0, 1.0).unwrap();
        assert_eq!(n.values, vec![-1.0, 1.0]);
        assert!((map.invert(n.values[1]) - 4.0).abs() < 1e-12);
        assert!(matches!(
            normalize_minmax(&s.with_values(vec![3.0, 3.0]), -1.0, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn load_csv_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("a.csv");
        std::fs::write(&csv, "1.5\n-2\n\n3e-1\n").unwrap();
        let r = load_signal(&csv, SignalFormat::Csv, &meta(), 1).unwrap();
        assert_eq!(r.samples, vec![1.5, -2.0, 0.3]);

        let bin = dir.path().join("a.f64");
        write_f64le(&bin, &vec![0.25; 1024]).unwrap();
        assert_eq!(std::fs::metadata(&bin).unwrap().len(), 8192);
        let r = load_signal(&bin, SignalFormat::F64Le, &meta(), 1024).unwrap();
        assert_eq!(r.samples.len(), 1024);
    }

    #[test]
    fn load_errors_name_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_signal(&empty, SignalFormat::Csv, &meta(), 1),
            Err(Error::Ingestion { .. })
        ));
        let bad = dir.path().join("b.csv");
        std::fs::write(&bad, "1\n2\nabc\n").unwrap();
        match load_signal(&bad, SignalFormat::Csv, &meta(), 1) {
            Err(Error::Ingestion { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
        let nan = dir.path().join("n.f64");
        write_f64le(&nan, &[1.0, f64::NAN]).unwrap();
        match load_signal(&nan, SignalFormat::F64Le, &meta(), 1) {
            Err(Error::Ingestion { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        let short = dir.path().join("s.f64");
        write_f64le(&short, &[1.0; 10]).unwrap();
        assert!(load_signal(&short, SignalFormat::F64Le, &meta(), 64).is_err());
        let ragged = dir.path().join("r.f64");
        std::fs::write(&ragged, [0u8; 12]).unwrap();
        assert!(load_signal(&ragged, SignalFormat::F64Le, &meta(), 1).is_err());
    }

    #[test]
    fn meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.meta.toml");
        write_meta(&p, &meta()).unwrap();
        assert_eq!(read_meta(&p).unwrap(), meta());
        std::fs::write(&p, "sample_rate_hz = 10.0\ncondition = 1\n").unwrap();
        let m = read_meta(&p).unwrap();
        assert_eq!(m.condition, Condition::Damaged);
        assert_eq!(m.source, Source::Real);
        std::fs::write(&p, "sample_rate_hz = 10.0\ncondition = 4\n").unwrap();
        assert!(read_meta(&p).is_err());
    }

    fn spec(noise: f64) -> SurrogateSpec {
        SurrogateSpec {
            modes: vec![ModalComponent {
                frequency_hz: 50.0,
                damping_ratio: 0.0,
                amplitude: 0.4,
            }],
            noise_std: noise,
            damage_shift: vec![ModeShift::identity()],
            duration_s: 2.0,
            sample_rate_hz: 1024.0,
            excitation_rate_hz: 3.0,
            joint_id: 0,
        }
    }

    #[test]
    fn surrogate_is_bounded_and_deterministic() {
        let s = spec(0.0);
        let a = synthesize_surrogate(&s, Condition::Undamaged, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = synthesize_surrogate(&s, Condition::Undamaged, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 2048);
        // with zero damping every excitation stays active until the end
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gap = Exp::new(3.0).unwrap();
        let mut count = 1;
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if (t * 1024.0f64).round() as usize >= 2048 {
                break;
            }
            count += 1;
        }
        let bound = 0.4 * count as f64;
        assert!(a.samples.iter().all(|v| v.abs() <= bound + 1e-12));
    }

    #[test]
    fn surrogate_validation() {
        let mut s = spec(0.0);
        s.modes[0].frequency_hz = 600.0;
        assert!(matches!(s.validate(), Err(Error::Parameter(_))));
        let mut s = spec(0.0);
        s.modes[0].damping_ratio = 1.0;
        assert!(s.validate().is_err());
        let mut s = spec(0.0);
        s.damage_shift.clear();
        assert!(s.validate().is_err());
    }

    fn pool(n: usize, cond: Condition, source: Source) -> Vec<Segment> {
        (0..n)
            .map(|i| Segment {
                values: vec![i as f64; 4],
                condition: cond,
                joint_id: 0,
                source,
                segment_index: i,
            })
            .collect()
    }

    #[test]
    fn scenario_one_uses_every_segment_once() {
        let und = pool(75, Condition::Undamaged, Source::Real);
        let dam = pool(75, Condition::Damaged, Source::Real);
        let split =
            build_scenario(&und, &dam, &[], 1, SplitCounts::default(), &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
        assert_eq!(split.train.len(), 120);
        assert_eq!(split.test.len(), 30);
        let mut keys: Vec<SegmentKey> = split.train.iter().chain(&split.test).map(|(s, _)| s.key()).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 150);
        assert!(split.test.iter().all(|(s, _)| s.source == Source::Real));
    }

    #[test]
    fn scenario_two_tests_on_fakes() {
        let und = pool(256, Condition::Undamaged, Source::Real);
        let dam = pool(256, Condition::Damaged, Source::Real);
        let fake = pool(256, Condition::Damaged, Source::Fake);
        let split =
            build_scenario(&und, &dam, &fake, 2, SplitCounts::default(), &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
        let damaged_test: Vec<_> = split.test.iter().filter(|(_, y)| *y == 1).collect();
        assert_eq!(damaged_test.len(), 15);
        assert!(damaged_test.iter().all(|(s, _)| s.source == Source::Fake));
        assert!(split
            .test
            .iter()
            .filter(|(_, y)| *y == 0)
            .all(|(s, _)| s.source == Source::Real));
        assert!(split.train.iter().all(|(s, _)| s.source == Source::Real));
    }

    #[test]
    fn scenario_shortfall() {
        let und = pool(70, Condition::Undamaged, Source::Real);
        let dam = pool(75, Condition::Damaged, Source::Real);
        match build_scenario(&und, &dam, &[], 1, SplitCounts::default(), &mut ChaCha8Rng::seed_from_u64(1)) {
            Err(Error::Allocation(msg)) => assert!(msg.contains("short by 5"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pool_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let segs = pool(5, Condition::Damaged, Source::Fake);
        write_pool(dir.path(), &segs).unwrap();
        assert_eq!(read_pool(dir.path()).unwrap(), segs);
    }
}
