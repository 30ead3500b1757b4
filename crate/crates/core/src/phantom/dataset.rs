use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_phantom, phantom_measurements, PhantomError, PhantomRanges, Scaler, Volume3D};
use crate::measure::{MeasureKind, Measurement};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const METADATA_FILE: &str = "dataset.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Subjects per split: rounded shares for train and validation, the rest to
/// test, then topped up so no split is empty.
pub fn split_counts(n_subjects: usize, ratios: [f64; 3]) -> Result<[usize; 3], PhantomError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PhantomError::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    if n_subjects < 3 {
        return Err(PhantomError::Split(format!(
            "{n_subjects} subjects cannot fill train, validation and test splits"
        )));
    }
    let n = n_subjects as f64;
    let train = (ratios[0] * n).round() as usize;
    let val = ((ratios[1] * n).round() as usize).min(n_subjects - train);
    let mut counts = [train, val, n_subjects - train - val];
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..3).max_by_key(|&i| counts[i]).unwrap();
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    Ok(counts)
}

/// Seeded split assignment, one entry per subject index.
pub fn split_subjects(n_subjects: usize, ratios: [f64; 3], seed: u64) -> Result<Vec<Split>, PhantomError> {
    let counts = split_counts(n_subjects, ratios)?;
    let mut order: Vec<usize> = (0..n_subjects).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Train; n_subjects];
    for (pos, &subject) in order.iter().enumerate() {
        out[subject] = if pos < counts[0] {
            Split::Train
        } else if pos < counts[0] + counts[1] {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Independent stream per (subject, scan); `scan = None` is the subject's own
/// stream. Output does not depend on generation order.
pub fn sample_rng(seed: u64, subject: u32, scan: Option<u32>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 32) | scan.map_or(u32::MAX as u64, |s| s as u64));
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub subjects: usize,
    pub dim: usize,
    pub voxel_size: f64,
    pub min_scans: usize,
    pub max_scans: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub ranges: PhantomRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            subjects: 120,
            dim: 32,
            voxel_size: 1.0,
            min_scans: 1,
            max_scans: 3,
            ratios: [0.60, 0.15, 0.25],
            seed: 0,
            ranges: PhantomRanges::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub subject_id: u32,
    pub scan_id: u32,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub volume_path: String,
    pub targets: Vec<f64>,
}

/// Scan list with split assignment and analytic targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub measurements: Vec<Measurement>,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn measurement_names(&self) -> Vec<String> {
        self.measurements.iter().map(|m| m.name.clone()).collect()
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestRow)> {
        self.rows.iter().enumerate().filter(move |(_, r)| r.split == split)
    }

    /// Number of distinct subjects in each split.
    pub fn subject_counts(&self) -> [usize; 3] {
        let mut seen = std::collections::BTreeSet::new();
        let mut counts = [0; 3];
        for r in &self.rows {
            if seen.insert(r.subject_id) {
                counts[Split::ALL.iter().position(|&s| s == r.split).unwrap()] += 1;
            }
        }
        counts
    }

    /// Fails if any subject appears in more than one split.
    pub fn check_disjoint(&self) -> Result<(), PhantomError> {
        let mut owner = std::collections::HashMap::new();
        for r in &self.rows {
            if let Some(&s) = owner.get(&r.subject_id) {
                if s != r.split {
                    return Err(PhantomError::Split(format!(
                        "subject {} appears in both {s} and {}",
                        r.subject_id, r.split
                    )));
                }
            }
            owner.insert(r.subject_id, r.split);
        }
        Ok(())
    }

    /// Scaler fitted on the training rows only.
    pub fn fit_scaler(&self) -> Result<Scaler, PhantomError> {
        Scaler::fit(
            &self.measurement_names(),
            self.rows_in(Split::Train).map(|(_, r)| r.targets.as_slice()),
        )
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), PhantomError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["subject_id".to_string(), "scan_id".into(), "split".into(), "volume_path".into()];
        header.extend(self.measurement_names());
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.to_string(),
                r.scan_id.to_string(),
                r.split.to_string(),
                r.volume_path.clone(),
            ];
            rec.extend(r.targets.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, PhantomError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let fixed = ["subject_id", "scan_id", "split", "volume_path"];
        if header.len() <= fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
            return Err(PhantomError::Manifest(format!(
                "header must start with {} and list at least one target",
                fixed.join(",")
            )));
        }
        let mut measurements = Vec::new();
        for name in header.iter().skip(fixed.len()) {
            let kind = MeasureKind::of_name(name)
                .ok_or_else(|| PhantomError::Manifest(format!("column {name:?} has no kind prefix")))?;
            let region = &name[kind.prefix().len() + 1..];
            measurements.push(Measurement::new(kind, region));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| PhantomError::Manifest(format!("row {}: bad {what}", i + 1));
            let targets = rec
                .iter()
                .skip(fixed.len())
                .map(|s| s.parse::<f64>().map_err(|_| bad("target value")))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(ManifestRow {
                subject_id: rec[0].parse().map_err(|_| bad("subject_id"))?,
                scan_id: rec[1].parse().map_err(|_| bad("scan_id"))?,
                split: Split::parse(&rec[2]).ok_or_else(|| bad("split"))?,
                volume_path: rec[3].to_string(),
                targets,
            });
        }
        let m = Self { measurements, rows };
        m.check_disjoint()?;
        Ok(m)
    }
}

/// Sidecar describing how a dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub subjects: usize,
    pub scans: usize,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub measurement_count: usize,
    pub split_counts: [usize; 3],
    pub ratios: [f64; 3],
    pub min_scans: usize,
    pub max_scans: usize,
    pub ranges: PhantomRanges,
    pub measurements: Vec<Measurement>,
}

/// A manifest with its volumes loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub volumes: Vec<Volume3D>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Renders every scan in memory.
    pub fn generate(cfg: &DatasetConfig) -> Result<Self, PhantomError> {
        if cfg.min_scans == 0 || cfg.min_scans > cfg.max_scans {
            return Err(PhantomError::Split(format!(
                "scan count range {}..={} is empty or starts at zero",
                cfg.min_scans, cfg.max_scans
            )));
        }
        let splits = split_subjects(cfg.subjects, cfg.ratios, cfg.seed)?;
        let dims = [cfg.dim; 3];
        let mut rows = Vec::new();
        let mut volumes = Vec::new();
        for (subject, &split) in splits.iter().enumerate() {
            let subject = subject as u32;
            let mut rng = sample_rng(cfg.seed, subject, None);
            let base = cfg.ranges.sample(dims, cfg.voxel_size, &mut rng);
            let n_scans = rng.random_range(cfg.min_scans..=cfg.max_scans) as u32;
            for scan in 0..n_scans {
                let params = cfg.ranges.jitter(&base, &mut sample_rng(cfg.seed, subject, Some(scan)));
                let (vol, targets) = generate_phantom(&params)?;
                rows.push(ManifestRow {
                    subject_id: subject,
                    scan_id: scan,
                    split,
                    volume_path: format!("volumes/sub-{subject:04}_scan-{scan}.mvol"),
                    targets: targets.values().to_vec(),
                });
                volumes.push(vol);
            }
        }
        let measurements = phantom_measurements();
        let manifest = Manifest { measurements, rows };
        let meta = DatasetMeta {
            seed: cfg.seed,
            subjects: cfg.subjects,
            scans: manifest.rows.len(),
            dims,
            voxel_size: cfg.voxel_size,
            measurement_count: manifest.measurements.len(),
            split_counts: manifest.subject_counts(),
            ratios: cfg.ratios,
            min_scans: cfg.min_scans,
            max_scans: cfg.max_scans,
            ranges: cfg.ranges.clone(),
            measurements: manifest.measurements.clone(),
        };
        Ok(Self { manifest, volumes, meta })
    }

    /// Writes volumes, `manifest.csv` and `dataset.toml` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, force: bool) -> Result<PathBuf, PhantomError> {
        let dir = dir.as_ref();
        prepare_output_dir(dir, force)?;
        fs::create_dir_all(dir.join("volumes"))?;
        for (row, vol) in self.manifest.rows.iter().zip(&self.volumes) {
            vol.save(dir.join(&row.volume_path))?;
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        self.manifest.write_csv(fs::File::create(&manifest_path)?)?;
        let meta = toml::to_string(&self.meta).map_err(|e| PhantomError::Manifest(e.to_string()))?;
        fs::write(dir.join(METADATA_FILE), meta)?;
        Ok(manifest_path)
    }

    /// Loads a manifest and its volumes. `path` may be the manifest file or
    /// the dataset directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhantomError> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let manifest = Manifest::read_csv(fs::File::open(&manifest_path)?)?;
        let meta_text = fs::read_to_string(root.join(METADATA_FILE))?;
        let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| PhantomError::Manifest(e.to_string()))?;
        let volumes = manifest
            .rows
            .iter()
            .map(|r| Volume3D::load(root.join(&r.volume_path), meta.voxel_size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { manifest, volumes, meta })
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), PhantomError> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !force {
        return Err(PhantomError::OutputExists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}
