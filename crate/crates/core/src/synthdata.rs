//! Synthetic benchmark: videos whose features contain a query-specific
//! prototype pattern over the annotated span, on top of Gaussian noise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{
    index_to_time, write_features, write_manifest, Annotation, DatasetManifest, FeatureSequence,
    VideoEntry, UNK_TOKEN,
};
use crate::diffcore::Rng;
use crate::error::{Error, Result};

const PROTOTYPE_STREAM: u64 = 0;
const EMBEDDING_STREAM: u64 = 1;
const VIDEO_STREAM_BASE: u64 = 1 << 32;
const PLACEMENT_ATTEMPTS: usize = 100;

const VERBS: [&str; 12] = [
    "opens", "closes", "holds", "throws", "eats", "drinks", "washes", "takes", "puts", "cleans",
    "fixes", "watches",
];
const NOUNS: [&str; 12] = [
    "door", "window", "cup", "book", "sandwich", "bottle", "dishes", "phone", "box", "table",
    "laptop", "mirror",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Training videos.
    pub num_videos: usize,
    pub num_test_videos: usize,
    /// Feature rows per video.
    pub n: usize,
    pub d_v: usize,
    pub num_actions: usize,
    /// Inclusive range of planted span lengths, in feature rows.
    pub moment_len_range: [usize; 2],
    pub noise_sigma: f64,
    pub distractor_prob: f64,
    /// Each annotated boundary is displaced from the planted one by up to
    /// this many rows, mimicking annotator disagreement.
    pub boundary_jitter: usize,
    pub seed: u64,
    pub fps: f64,
    pub frames_per_feature: u64,
    pub embed_dim: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_videos: 500,
            num_test_videos: 100,
            n: 64,
            d_v: 32,
            num_actions: 8,
            moment_len_range: [8, 24],
            noise_sigma: 0.5,
            distractor_prob: 0.5,
            boundary_jitter: 2,
            seed: 0,
            fps: 25.0,
            frames_per_feature: 16,
            embed_dim: 16,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let [lo, hi] = self.moment_len_range;
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if lo < 2 || lo > hi || hi > self.n {
            return bad(format!("moment_len_range {lo}..={hi} must satisfy 2 <= min <= max <= n"));
        }
        if self.num_actions < 2 {
            return bad("num_actions must be at least 2".into());
        }
        if self.d_v == 0 || self.embed_dim == 0 || self.frames_per_feature == 0 {
            return bad("d_v, embed_dim and frames_per_feature must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return bad(format!("distractor_prob must lie in [0, 1], got {}", self.distractor_prob));
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        Ok(())
    }

    pub fn frames(&self) -> u64 {
        self.n as u64 * self.frames_per_feature
    }
}

/// Query text of action `k`.
pub fn action_query(k: usize) -> String {
    let round = k / VERBS.len();
    let verb = VERBS[k % VERBS.len()];
    let noun = NOUNS[(k + round) % NOUNS.len()];
    if round == 0 {
        format!("person {verb} the {noun}")
    } else {
        format!("person {verb}{round} the {noun}")
    }
}

/// A span of feature rows showing one action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSpan {
    pub action: usize,
    pub tau_s: usize,
    pub tau_e: usize,
}

impl PlantedSpan {
    fn overlaps(&self, other: &PlantedSpan) -> bool {
        self.tau_s <= other.tau_e && other.tau_s <= self.tau_e
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub features: FeatureSequence,
    /// The moment planted in the features.
    pub target: PlantedSpan,
    /// Feature indices given in the annotation; equal to the planted span
    /// unless boundary jitter is enabled.
    pub annotated: (usize, usize),
    pub distractor: Option<PlantedSpan>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    /// One prototype per action, each of norm `√d_v`.
    pub prototypes: Vec<Vec<f64>>,
    pub train: Vec<SynthVideo>,
    pub test: Vec<SynthVideo>,
    pub embeddings_text: String,
}

fn prototypes(spec: &SynthSpec, rng: &mut Rng) -> Vec<Vec<f64>> {
    let scale = (spec.d_v as f64).sqrt();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.num_actions);
    for k in 0..spec.num_actions {
        let mut v: Vec<f64> = (0..spec.d_v).map(|_| rng.normal()).collect();
        // Gram-Schmidt while there is room; beyond d_v they stay random
        if k < spec.d_v {
            for p in &out {
                let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / (scale * scale);
                v.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        out.push(v.iter().map(|x| x * scale / norm).collect());
    }
    out
}

fn place(spec: &SynthSpec, action: usize, avoid: Option<&PlantedSpan>, rng: &mut Rng) -> Result<PlantedSpan> {
    let [lo, hi] = spec.moment_len_range;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let len = rng.int_inclusive(lo, hi);
        let tau_s = rng.int_inclusive(1, spec.n - len + 1);
        let span = PlantedSpan {
            action,
            tau_s,
            tau_e: tau_s + len - 1,
        };
        if avoid.is_none_or(|a| !span.overlaps(a)) {
            return Ok(span);
        }
    }
    Err(Error::Generation(format!(
        "could not place a span of {lo}..={hi} rows in {} without overlap after {PLACEMENT_ATTEMPTS} attempts",
        spec.n
    )))
}

fn video(spec: &SynthSpec, protos: &[Vec<f64>], video_id: String, stream: u64) -> Result<SynthVideo> {
    let mut rng = Rng::with_stream(spec.seed, VIDEO_STREAM_BASE + stream);
    let action = rng.int_inclusive(0, spec.num_actions - 1);
    let target = place(spec, action, None, &mut rng)?;
    let distractor = if rng.uniform() < spec.distractor_prob {
        let other = (action + rng.int_inclusive(1, spec.num_actions - 1)) % spec.num_actions;
        Some(place(spec, other, Some(&target), &mut rng)?)
    } else {
        None
    };
    let mut data = Vec::with_capacity(spec.n * spec.d_v);
    for tau in 1..=spec.n {
        let proto = [Some(&target), distractor.as_ref()]
            .into_iter()
            .flatten()
            .find(|s| (s.tau_s..=s.tau_e).contains(&tau))
            .map(|s| &protos[s.action]);
        for j in 0..spec.d_v {
            let base = proto.map_or(0.0, |p| p[j]);
            data.push((base + spec.noise_sigma * rng.normal()) as f32);
        }
    }
    let annotated = if spec.boundary_jitter == 0 {
        (target.tau_s, target.tau_e)
    } else {
        let j = spec.boundary_jitter as i64;
        let mut shift = |tau: usize| {
            let d = rng.int_inclusive(0, 2 * spec.boundary_jitter) as i64 - j;
            (tau as i64 + d).clamp(1, spec.n as i64) as usize
        };
        let s = shift(target.tau_s);
        let e = shift(target.tau_e);
        if s < e {
            (s, e)
        } else {
            (target.tau_s, target.tau_e)
        }
    };
    Ok(SynthVideo {
        video_id,
        features: FeatureSequence::new(spec.n, spec.d_v, data)?,
        target,
        annotated,
        distractor,
    })
}

fn embeddings_text(spec: &SynthSpec) -> String {
    let mut rng = Rng::with_stream(spec.seed, EMBEDDING_STREAM);
    let mut tokens: Vec<String> = vec![UNK_TOKEN.to_string()];
    for k in 0..spec.num_actions {
        for t in crate::dataio::tokenize(&action_query(k)) {
            if !tokens.contains(&t) {
                tokens.push(t);
            }
        }
    }
    let mut out = String::new();
    for t in tokens {
        out.push_str(&t);
        for _ in 0..spec.embed_dim {
            write!(out, " {}", rng.normal() / (spec.embed_dim as f64).sqrt()).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Builds the whole dataset in memory; identical specs give identical data.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let protos = prototypes(spec, &mut Rng::with_stream(spec.seed, PROTOTYPE_STREAM));
    let train = (0..spec.num_videos)
        .map(|i| video(spec, &protos, format!("train_{i:05}"), i as u64))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.num_test_videos)
        .map(|i| video(spec, &protos, format!("test_{i:05}"), (spec.num_videos + i) as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        spec: spec.clone(),
        prototypes: protos,
        train,
        test,
        embeddings_text: embeddings_text(spec),
    })
}

impl SynthDataset {
    fn manifest(&self, videos: &[SynthVideo]) -> Result<DatasetManifest> {
        let spec = &self.spec;
        let l = spec.frames();
        let entries = videos
            .iter()
            .map(|v| {
                let (tau_s, tau_e) = v.annotated;
                Ok(VideoEntry {
                    video_id: v.video_id.clone(),
                    feature_path: format!("features/{}.tmlf", v.video_id),
                    l,
                    fps: spec.fps,
                    annotations: vec![Annotation {
                        query: action_query(v.target.action),
                        t_s: index_to_time(tau_s, spec.n, spec.fps, l)?,
                        t_e: index_to_time(tau_e, spec.n, spec.fps, l)?,
                    }],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetManifest::new(entries))
    }

    pub fn train_manifest(&self) -> Result<DatasetManifest> {
        self.manifest(&self.train)
    }

    pub fn test_manifest(&self) -> Result<DatasetManifest> {
        self.manifest(&self.test)
    }

    pub fn videos(&self) -> impl Iterator<Item = &SynthVideo> {
        self.train.iter().chain(&self.test)
    }

    /// Writes `train.json`, `test.json`, `embeddings.txt` and one feature
    /// file per video under `features/`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SynthPaths> {
        let dir = dir.as_ref();
        let features = dir.join("features");
        fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        for v in self.videos() {
            write_features(features.join(format!("{}.tmlf", v.video_id)), &v.features)?;
        }
        let paths = SynthPaths {
            train: dir.join("train.json"),
            test: dir.join("test.json"),
            embeddings: dir.join("embeddings.txt"),
        };
        write_manifest(&paths.train, &self.train_manifest()?)?;
        write_manifest(&paths.test, &self.test_manifest()?)?;
        fs::write(&paths.embeddings, &self.embeddings_text).map_err(|e| Error::io(&paths.embeddings, e))?;
        Ok(paths)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub embeddings: PathBuf,
}

pub const ORACLE_COSINE_THRESHOLD: f64 = 0.5;

/// Longest run of rows whose cosine similarity with `prototype` exceeds
/// 0.5; the earliest wins ties. `None` if no row qualifies.
pub fn oracle_localize(features: &FeatureSequence, prototype: &[f64]) -> Result<Option<(usize, usize)>> {
    if prototype.len() != features.d_v() {
        return Err(Error::Dimension(format!(
            "prototype of width {} for {}-wide features",
            prototype.len(),
            features.d_v()
        )));
    }
    let p_norm = prototype.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in 0..=features.n() {
        let hit = i < features.n() && {
            let row = features.row(i);
            let dot: f64 = row.iter().zip(prototype).map(|(&a, b)| f64::from(a) * b).sum();
            let r_norm = row.iter().map(|&a| f64::from(a).powi(2)).sum::<f64>().sqrt();
            let denom = r_norm * p_norm;
            denom > 0.0 && dot / denom > ORACLE_COSINE_THRESHOLD
        };
        match (hit, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| i - s > be - bs + 1) {
                    best = Some((s + 1, i));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tiou;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            num_videos: 40,
            num_test_videos: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.embeddings_text, b.embeddings_text);
        assert_eq!(a.train_manifest().unwrap().to_json(), b.train_manifest().unwrap().to_json());
        a.train_manifest().unwrap().validate().unwrap();
        a.test_manifest().unwrap().validate().unwrap();
        let c = generate(&small(6)).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn empty_spec_gives_empty_manifest() {
        let d = generate(&SynthSpec { num_videos: 0, num_test_videos: 0, ..Default::default() }).unwrap();
        assert!(d.train_manifest().unwrap().entries.is_empty());
    }

    #[test]
    fn prototypes_are_orthogonal() {
        let d = generate(&small(1)).unwrap();
        for (i, p) in d.prototypes.iter().enumerate() {
            let norm2: f64 = p.iter().map(|x| x * x).sum();
            assert!((norm2 - 32.0).abs() < 1e-9);
            for q in &d.prototypes[..i] {
                let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distractors_never_overlap_and_differ() {
        let d = generate(&SynthSpec { distractor_prob: 1.0, ..small(2) }).unwrap();
        for v in d.videos() {
            let x = v.distractor.unwrap();
            assert_ne!(x.action, v.target.action);
            assert!(!x.overlaps(&v.target));
        }
    }

    #[test]
    fn jitter_moves_only_annotations() {
        let plain = generate(&SynthSpec { boundary_jitter: 0, ..small(8) }).unwrap();
        let jittered = generate(&SynthSpec { boundary_jitter: 2, ..small(8) }).unwrap();
        let mut moved = 0;
        for (a, b) in plain.train.iter().zip(&jittered.train) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.annotated, (a.target.tau_s, a.target.tau_e));
            assert!(b.annotated.0.abs_diff(b.target.tau_s) <= 2);
            assert!(b.annotated.1.abs_diff(b.target.tau_e) <= 2);
            assert!(b.annotated.0 < b.annotated.1);
            moved += usize::from(b.annotated != a.annotated);
        }
        assert!(moved > 0);
        jittered.train_manifest().unwrap().validate().unwrap();
    }

    #[test]
    fn impossible_placement_errors() {
        let spec = SynthSpec {
            n: 10,
            moment_len_range: [6, 6],
            distractor_prob: 1.0,
            ..small(0)
        };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let d = generate(&SynthSpec { noise_sigma: 0.0, ..small(3) }).unwrap();
        for v in d.videos() {
            let span = oracle_localize(&v.features, &d.prototypes[v.target.action]).unwrap();
            assert_eq!(span, Some((v.target.tau_s, v.target.tau_e)));
        }
    }

    #[test]
    fn background_only_is_not_found() {
        let d = generate(&small(4)).unwrap();
        let v = &d.train[0];
        let rows = (0..v.features.n())
            .filter(|i| !(v.target.tau_s..=v.target.tau_e).contains(&(i + 1)))
            .filter(|i| v.distractor.is_none_or(|x| !(x.tau_s..=x.tau_e).contains(&(i + 1))))
            .take(4);
        let data: Vec<f32> = rows.flat_map(|i| v.features.row(i).to_vec()).collect();
        let bg = FeatureSequence::new(data.len() / 32, 32, data).unwrap();
        let zero = FeatureSequence::new(3, 32, vec![0.0; 96]).unwrap();
        assert_eq!(oracle_localize(&zero, &d.prototypes[0]).unwrap(), None);
        // a handful of pure-noise rows: cosine with any prototype stays low
        assert_eq!(oracle_localize(&bg, &d.prototypes[v.target.action]).unwrap(), None);
    }

    #[test]
    fn low_noise_oracle_recovers_spans() {
        let d = generate(&SynthSpec { noise_sigma: 0.1, num_videos: 200, ..small(7) }).unwrap();
        let good = d
            .videos()
            .filter(|v| {
                let (s, e) = oracle_localize(&v.features, &d.prototypes[v.target.action]).unwrap().unwrap();
                tiou((s as f64, e as f64), (v.target.tau_s as f64, v.target.tau_e as f64)) >= 0.9
            })
            .count();
        assert!(good as f64 >= 0.95 * d.videos().count() as f64);
    }
}
