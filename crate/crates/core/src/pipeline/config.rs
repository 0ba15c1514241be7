use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotate::MatchThresholds;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::ingest::{DetectionReadOptions, ObjectClass};
use crate::orf::ForestParams;
use crate::segmentation::{Cluster, Range, SegmentationParams, VolumetricFilter};
use crate::tracker::TrackerConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Detector pre-labels, tracker, discriminator.
    #[default]
    Full,
    /// Detector pre-labels go straight to the learner, one observation each.
    NoTracker,
    /// Volumetric templates replace the detector; tracker and discriminator
    /// as in full mode.
    VolumetricOnly,
    /// Ground-truth labelled descriptors stream straight into the learner.
    OrfOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Full,
        Mode::NoTracker,
        Mode::VolumetricOnly,
        Mode::OrfOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoTracker => "no-tracker",
            Mode::VolumetricOnly => "volumetric-only",
            Mode::OrfOnly => "orf-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown mode '{s}' (expected full, no-tracker, volumetric-only or orf-only)"
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Sequence directory (velodyne/, calib.txt, detections, timestamps).
    pub sequence: PathBuf,
    /// Held-out test set: a directory holding `features.csv`, or the CSV.
    pub test: PathBuf,
    /// Labelled descriptors for orf-only mode; defaults to
    /// `<sequence>/features.csv`.
    pub features: Option<PathBuf>,
    pub score_threshold: f64,
    pub detections_have_header: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sequence: PathBuf::from("sequence"),
            test: PathBuf::from("sequence/test"),
            features: None,
            score_threshold: 0.5,
            detections_have_header: false,
        }
    }
}

impl DatasetConfig {
    pub fn read_options(&self) -> DetectionReadOptions {
        DetectionReadOptions {
            score_threshold: self.score_threshold,
            has_header: self.detections_have_header,
        }
    }

    pub fn features_path(&self) -> PathBuf {
        self.features
            .clone()
            .unwrap_or_else(|| self.sequence.join("features.csv"))
    }

    pub fn test_path(&self) -> PathBuf {
        if self.test.is_dir() {
            self.test.join("features.csv")
        } else {
            self.test.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UndersampleConfig {
    pub window: usize,
    /// Per class, in `ObjectClass` index order.
    pub caps: [usize; ObjectClass::COUNT],
}

impl Default for UndersampleConfig {
    fn default() -> Self {
        Self {
            window: 100,
            caps: [34; ObjectClass::COUNT],
        }
    }
}

/// Box-size template of one class. Horizontal extents are compared sorted,
/// so the template does not depend on heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumetricTemplate {
    pub small: Range,
    pub large: Range,
    pub height: Range,
}

impl VolumetricTemplate {
    pub fn accepts(&self, cluster: &Cluster) -> bool {
        let e = cluster.bbox.extents();
        let (small, large) = if e.x <= e.y { (e.x, e.y) } else { (e.y, e.x) };
        self.small.contains(small) && self.large.contains(large) && self.height.contains(e.z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub car: VolumetricTemplate,
    pub pedestrian: VolumetricTemplate,
    pub cyclist: VolumetricTemplate,
    /// Confidence given to a template match, in place of a detector score.
    pub score: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        let height = Range::new(1.2, 2.0);
        Self {
            car: VolumetricTemplate {
                small: Range::new(1.4, 2.2),
                large: Range::new(3.2, 5.0),
                height,
            },
            pedestrian: VolumetricTemplate {
                small: Range::new(0.0, 0.8),
                large: Range::new(0.0, 0.8),
                height,
            },
            cyclist: VolumetricTemplate {
                small: Range::new(0.0, 0.8),
                large: Range::new(0.0, 2.2),
                height,
            },
            score: 0.8,
        }
    }
}

impl TemplateConfig {
    /// First matching template, most specific first: pedestrian, cyclist,
    /// car.
    pub fn classify(&self, cluster: &Cluster) -> Option<ObjectClass> {
        [
            (ObjectClass::Pedestrian, &self.pedestrian),
            (ObjectClass::Cyclist, &self.cyclist),
            (ObjectClass::Car, &self.car),
        ]
        .into_iter()
        .find(|(_, t)| t.accepts(cluster))
        .map(|(c, _)| c)
    }
}

/// Everything a run needs. Loaded from TOML with flat dotted keys, e.g.
///
/// ```toml
/// mode = "full"
/// checkpoint_interval = 100
/// dataset.sequence = "data/seq0"
/// dataset.test = "data/seq0/test"
/// cluster.distance_d = 0.5
/// tracker.gate_threshold = 9.21
/// orf.num_trees = 100
/// orf.seed = 7
/// undersample.caps = [34, 34, 34]
/// ```
///
/// Unknown keys are rejected. Relative paths resolve against the config
/// file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Learned samples between checkpoints.
    pub checkpoint_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// Where to write every learned sample's descriptor as CSV.
    pub dump_features: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub cluster: SegmentationParams,
    pub filter: VolumetricFilter,
    #[serde(rename = "match")]
    pub matching: MatchThresholds,
    pub tracker: TrackerConfig,
    pub orf: ForestParams,
    pub discriminator: DiscriminatorConfig,
    pub undersample: UndersampleConfig,
    pub templates: TemplateConfig,
}

impl RunConfig {
    /// Defaults for a sequence directory laid out by the scene generator.
    pub fn for_sequence(dir: &Path) -> Self {
        Self {
            checkpoint_interval: 100,
            dataset: DatasetConfig {
                sequence: dir.to_path_buf(),
                test: dir.join("test"),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.sequence);
        fix(&mut self.dataset.test);
        for p in [
            &mut self.dataset.features,
            &mut self.checkpoint_dir,
            &mut self.dump_features,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_interval == 0 {
            return Err(Error::Config(
                "checkpoint_interval must be at least 1".into(),
            ));
        }
        if self.undersample.window == 0 {
            return Err(Error::Config(
                "undersample.window must be at least 1".into(),
            ));
        }
        if !(self.cluster.distance_d > 0.0) {
            return Err(Error::Config("cluster.distance_d must be positive".into()));
        }
        self.filter.validate().map_err(Error::Config)?;
        for (name, t) in [
            ("car", self.templates.car),
            ("pedestrian", self.templates.pedestrian),
            ("cyclist", self.templates.cyclist),
        ] {
            if [t.small, t.large, t.height]
                .iter()
                .any(|r| !(r.min <= r.max))
            {
                return Err(Error::Config(format!("templates.{name}: empty range")));
            }
        }
        if !(self.templates.score > 0.0 && self.templates.score < 1.0) {
            return Err(Error::Config("templates.score must be in (0, 1)".into()));
        }
        self.tracker.validate()?;
        self.orf.validate()?;
        self.discriminator.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_dotted_keys_parse() {
        let text = r#"
mode = "no-tracker"
checkpoint_interval = 50
dataset.sequence = "seq"
dataset.test = "/abs/test"
cluster.distance_d = 0.4
filter.h_range = { min = 0.3, max = 4.0 }
match.iou_car = 0.6
tracker.confirm_hits = 4
orf.num_trees = 10
orf.seed = 3
discriminator.threshold = 0.8
undersample.caps = [1, 2, 3]
"#;
        let c = RunConfig::from_toml(text, Path::new("/base")).unwrap();
        assert_eq!(c.mode, Mode::NoTracker);
        assert_eq!(c.checkpoint_interval, 50);
        assert_eq!(c.dataset.sequence, Path::new("/base/seq"));
        assert_eq!(c.dataset.test, Path::new("/abs/test"));
        assert_eq!(c.cluster.distance_d, 0.4);
        assert_eq!(c.filter.h_range.max, 4.0);
        assert_eq!(c.matching.iou_car, 0.6);
        assert_eq!(c.matching.iou_ped, 0.5);
        assert_eq!(c.tracker.confirm_hits, 4);
        assert_eq!((c.orf.num_trees, c.orf.seed), (10, 3));
        assert_eq!(c.discriminator.threshold, 0.8);
        assert_eq!(c.undersample.caps, [1, 2, 3]);
        assert_eq!(c.undersample.window, 100);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let base = Path::new(".");
        assert!(matches!(
            RunConfig::from_toml("checkpoint_interval = 0", base),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("checkpoint_intervall = 5", base),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("undersample.caps = [1, -2, 3]", base),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("mode = \"fast\"", base),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("checkpoint_interval = 5\ntracker.p_detection = 0.0", base),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn serialized_config_round_trips() {
        let c = RunConfig::for_sequence(Path::new("/data/seq"));
        let back = RunConfig::from_toml(&c.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }

    #[test]
    fn templates_are_heading_free_and_ordered() {
        use crate::ingest::{Point, PointCloud};
        let cloud = |l: f32, w: f32, h: f32| PointCloud {
            points: vec![Point::new(0.0, 0.0, 0.0, 0.0), Point::new(l, w, h, 0.0)],
            ..Default::default()
        };
        let t = TemplateConfig::default();
        let classify = |l, w, h| {
            let c = cloud(l, w, h);
            t.classify(&Cluster::from_indices(0, vec![0, 1], &c).unwrap())
        };
        assert_eq!(classify(4.2, 1.8, 1.5), Some(ObjectClass::Car));
        assert_eq!(classify(1.8, 4.2, 1.5), Some(ObjectClass::Car));
        assert_eq!(classify(0.5, 0.6, 1.7), Some(ObjectClass::Pedestrian));
        assert_eq!(classify(1.7, 0.5, 1.8), Some(ObjectClass::Cyclist));
        assert_eq!(classify(0.5, 0.6, 1.0), None);
        assert_eq!(classify(8.0, 2.0, 1.5), None);
    }
}
