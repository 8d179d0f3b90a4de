//! Synthetic two-language corpus: per-language phone Markov chains with
//! Gaussian emissions, where phones of later languages sit close to the
//! same-index phone of the first language (controlled by `overlap`). Also
//! frame splicing and the plain-text corpus file format.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng, Vector};

/// One utterance: feature frames, per-frame phone ids and one language id.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: Vec<Vector>,
    pub phones: Vec<usize>,
    pub language: usize,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Phone id to owning language. Language `g` owns the contiguous id block
/// `[g·n, (g+1)·n)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonePartition {
    owner: Vec<usize>,
    languages: usize,
}

impl PhonePartition {
    pub fn contiguous(phones_per_language: usize, languages: usize) -> Self {
        PhonePartition {
            owner: (0..phones_per_language * languages)
                .map(|k| k / phones_per_language)
                .collect(),
            languages,
        }
    }

    /// Split `phone_classes` evenly over `languages`.
    pub fn even(phone_classes: usize, languages: usize) -> Result<Self> {
        if languages == 0 || phone_classes == 0 || !phone_classes.is_multiple_of(languages) {
            return Err(Error::config(format!(
                "{phone_classes} phone classes cannot be split evenly over {languages} languages"
            )));
        }
        Ok(PhonePartition::contiguous(phone_classes / languages, languages))
    }

    pub fn language_of(&self, phone: usize) -> usize {
        self.owner[phone]
    }

    pub fn num_phones(&self) -> usize {
        self.owner.len()
    }

    pub fn num_languages(&self) -> usize {
        self.languages
    }
}

/// User-facing knobs from which a [`CorpusSpec`] is drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub languages: usize,
    pub phones_per_language: usize,
    pub feat_dim: usize,
    pub utterances_per_language: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub overlap: f64,
    pub stddev: f64,
    /// Self-transition probability of every phone state.
    pub self_loop: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 1,
            languages: 2,
            phones_per_language: 10,
            feat_dim: 8,
            utterances_per_language: 240,
            frames_min: 30,
            frames_max: 60,
            overlap: 0.9,
            stddev: 0.3,
            self_loop: 0.6,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.languages < 2 {
            return bad(format!("need at least 2 languages, got {}", self.languages));
        }
        if self.phones_per_language == 0 || self.feat_dim == 0 || self.utterances_per_language == 0 {
            return bad("phones per language, feature dim and utterance count must be >= 1".into());
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return bad(format!(
                "frame range [{}, {}] is empty or starts at 0",
                self.frames_min, self.frames_max
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap must lie in [0, 1], got {}", self.overlap));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return bad(format!("emission stddev must be finite and >= 0, got {}", self.stddev));
        }
        if !(0.0..=1.0).contains(&self.self_loop) {
            return bad(format!("self-loop probability must lie in [0, 1], got {}", self.self_loop));
        }
        Ok(())
    }

    pub fn phone_classes(&self) -> usize {
        self.languages * self.phones_per_language
    }
}

/// Fully specified generator: transition matrices and emission means.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub languages: usize,
    pub phones_per_language: usize,
    pub feat_dim: usize,
    pub utterances_per_language: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Per language, a row-stochastic matrix over that language's phones.
    pub transitions: Vec<Matrix>,
    /// `means[language][phone]`.
    pub means: Vec<Vec<Vector>>,
    pub stddev: f64,
    pub overlap: f64,
    pub seed: u64,
}

/// Seed offset separating utterance sampling from structure sampling.
const SAMPLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

impl CorpusSpec {
    /// Draw chain structure and base means from `cfg.seed`. Base means are
    /// standard normal per dimension; language `g > 0` phone `k` gets
    /// `overlap · base[0][k] + (1 − overlap) · base[g][k]`.
    pub fn from_config(cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let n = cfg.phones_per_language;

        let mut transitions = Vec::with_capacity(cfg.languages);
        for _ in 0..cfg.languages {
            let mut t = Matrix::zeros(n, n);
            for row in 0..n {
                if n == 1 {
                    t.set(0, 0, 1.0);
                    continue;
                }
                let weights: Vec<f64> = (0..n)
                    .map(|col| if col == row { 0.0 } else { 0.05 + rng.uniform() })
                    .collect();
                let total: f64 = weights.iter().sum();
                for (col, w) in weights.iter().enumerate() {
                    let v = if col == row { cfg.self_loop } else { (1.0 - cfg.self_loop) * w / total };
                    t.set(row, col, v);
                }
            }
            transitions.push(t);
        }

        let base: Vec<Vec<Vector>> = (0..cfg.languages)
            .map(|_| {
                (0..n)
                    .map(|_| (0..cfg.feat_dim).map(|_| rng.normal()).collect())
                    .collect()
            })
            .collect();
        let o = cfg.overlap;
        let means = (0..cfg.languages)
            .map(|g| {
                (0..n)
                    .map(|k| {
                        if g == 0 {
                            base[0][k].clone()
                        } else {
                            base[0][k]
                                .iter()
                                .zip(&base[g][k])
                                .map(|(a, b)| o * a + (1.0 - o) * b)
                                .collect()
                        }
                    })
                    .collect()
            })
            .collect();

        Ok(CorpusSpec {
            languages: cfg.languages,
            phones_per_language: n,
            feat_dim: cfg.feat_dim,
            utterances_per_language: cfg.utterances_per_language,
            frames_min: cfg.frames_min,
            frames_max: cfg.frames_max,
            transitions,
            means,
            stddev: cfg.stddev,
            overlap: cfg.overlap,
            seed: cfg.seed,
        })
    }

    pub fn partition(&self) -> PhonePartition {
        PhonePartition::contiguous(self.phones_per_language, self.languages)
    }

    fn validate(&self) -> Result<()> {
        let n = self.phones_per_language;
        if self.transitions.len() != self.languages || self.means.len() != self.languages {
            return Err(Error::config("one transition matrix and mean table per language required"));
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return Err(Error::config("invalid frame range"));
        }
        for (g, t) in self.transitions.iter().enumerate() {
            if t.shape() != (n, n) {
                return Err(Error::config(format!("language {g} transition matrix is {:?}", t.shape())));
            }
            for row in 0..n {
                let r = t.row(row);
                let total: f64 = r.iter().sum();
                if r.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!(
                        "language {g} transition row {row} is not a distribution (sum {total})"
                    )));
                }
            }
        }
        for (g, table) in self.means.iter().enumerate() {
            if table.len() != n || table.iter().any(|m| m.len() != self.feat_dim) {
                return Err(Error::config(format!("language {g} emission means have the wrong shape")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub partition: PhonePartition,
}

/// Sample every utterance. Utterances are generated round-robin over
/// languages; the `u`-th utterance of each language goes to the test split
/// when `u % 10 == 9`.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed ^ SAMPLE_STREAM);
    let n = spec.phones_per_language;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut index = 0usize;
    for u in 0..spec.utterances_per_language {
        for g in 0..spec.languages {
            let frames_len = spec.frames_min + rng.below(spec.frames_max - spec.frames_min + 1);
            let mut state = rng.below(n);
            let mut frames = Vec::with_capacity(frames_len);
            let mut phones = Vec::with_capacity(frames_len);
            for t in 0..frames_len {
                if t > 0 {
                    state = rng.categorical(spec.transitions[g].row(state));
                }
                let mean = &spec.means[g][state];
                frames.push(mean.iter().map(|m| m + spec.stddev * rng.normal()).collect());
                phones.push(g * n + state);
            }
            let utt = Utterance {
                id: format!("utt{index:05}-lang{g}"),
                frames,
                phones,
                language: g,
            };
            if u % 10 == 9 {
                test.push(utt);
            } else {
                train.push(utt);
            }
            index += 1;
        }
    }
    Ok(Corpus {
        train,
        test,
        partition: spec.partition(),
    })
}

/// Concatenate each frame with its `context` neighbours on both sides,
/// replicating the edge frames.
pub fn splice(frames: &[Vector], context: usize) -> Result<Vec<Vector>> {
    if frames.is_empty() {
        return Err(Error::config("cannot splice an empty frame sequence"));
    }
    let last = frames.len() - 1;
    let width = frames[0].len() * (2 * context + 1);
    Ok((0..frames.len())
        .map(|t| {
            let mut out = Vec::with_capacity(width);
            for off in 0..=2 * context {
                let src = (t + off).saturating_sub(context).min(last);
                out.extend_from_slice(&frames[src]);
            }
            out
        })
        .collect())
}

/// Contents of a corpus file.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusFile {
    pub feat_dim: usize,
    pub phone_classes: usize,
    pub language_classes: usize,
    pub utterances: Vec<Utterance>,
}

impl CorpusFile {
    pub fn partition(&self) -> Result<PhonePartition> {
        PhonePartition::even(self.phone_classes, self.language_classes)
    }
}

pub const CORPUS_MAGIC: &str = "MTCORP1";

pub fn write_corpus<W: Write>(out: &mut W, file: &CorpusFile) -> Result<()> {
    writeln!(
        out,
        "{CORPUS_MAGIC} {} {} {}",
        file.feat_dim, file.phone_classes, file.language_classes
    )?;
    for utt in &file.utterances {
        writeln!(out, "UTT {} {} {}", utt.id, utt.language, utt.len())?;
        for frame in &utt.frames {
            let line: Vec<String> = frame.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        let ids: Vec<String> = utt.phones.iter().map(|p| p.to_string()).collect();
        writeln!(out, "{}", ids.join(" "))?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<CorpusFile> {
    let mut lines = input.lines().enumerate().map(|(k, l)| (k + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    fn num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
        tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected {what}"),
        })
    }

    let (n, header) = next("header")?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(CORPUS_MAGIC) {
        return Err(Error::Parse {
            line: n,
            msg: format!("missing {CORPUS_MAGIC} header"),
        });
    }
    let feat_dim: usize = num(n, tok.next(), "feature dimension")?;
    let phone_classes: usize = num(n, tok.next(), "phone class count")?;
    let language_classes: usize = num(n, tok.next(), "language class count")?;

    let mut utterances = Vec::new();
    loop {
        let (n, line) = match next("utterance") {
            Ok(v) => v,
            Err(Error::Parse { line: 0, .. }) => break,
            Err(e) => return Err(e),
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        if tok.next() != Some("UTT") {
            return Err(Error::Parse {
                line: n,
                msg: "expected UTT record".into(),
            });
        }
        let id = tok.next().ok_or_else(|| Error::Parse {
            line: n,
            msg: "missing utterance id".into(),
        })?;
        let language: usize = num(n, tok.next(), "language id")?;
        let frames_len: usize = num(n, tok.next(), "frame count")?;
        if language >= language_classes {
            return Err(Error::Parse {
                line: n,
                msg: format!("language id {language} >= {language_classes}"),
            });
        }
        if frames_len == 0 {
            return Err(Error::Parse {
                line: n,
                msg: "utterance has no frames".into(),
            });
        }
        let mut frames = Vec::with_capacity(frames_len);
        for _ in 0..frames_len {
            let (n, l) = next("feature line")?;
            let frame: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: n,
                    msg: format!("bad feature value: {e}"),
                })?;
            if frame.len() != feat_dim || frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("expected {feat_dim} finite features, got {}", frame.len()),
                });
            }
            frames.push(frame);
        }
        let (n, l) = next("phone line")?;
        let phones: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: n,
                msg: format!("bad phone id: {e}"),
            })?;
        if phones.len() != frames_len || phones.iter().any(|&p| p >= phone_classes) {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected {frames_len} phone ids below {phone_classes}"),
            });
        }
        utterances.push(Utterance {
            id: id.to_string(),
            frames,
            phones,
            language,
        });
    }
    Ok(CorpusFile {
        feat_dim,
        phone_classes,
        language_classes,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_mean(spec: &CorpusSpec, frame: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for g in 0..spec.languages {
            for (k, m) in spec.means[g].iter().enumerate() {
                let d: f64 = m.iter().zip(frame).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, g * spec.phones_per_language + k);
                }
            }
        }
        best.1
    }

    fn small(overlap: f64, stddev: f64) -> CorpusConfig {
        CorpusConfig {
            utterances_per_language: 20,
            frames_min: 5,
            frames_max: 12,
            overlap,
            stddev,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn separable_noiseless_corpus_is_perfectly_classified() {
        let spec = CorpusSpec::from_config(&small(0.0, 0.0)).unwrap();
        let c = gen_corpus(&spec).unwrap();
        for u in c.train.iter().chain(&c.test) {
            for (f, &p) in u.frames.iter().zip(&u.phones) {
                assert_eq!(nearest_mean(&spec, f), p);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CorpusSpec::from_config(&small(0.9, 0.3)).unwrap();
        assert_eq!(gen_corpus(&spec).unwrap(), gen_corpus(&spec).unwrap());
        let other = CorpusSpec::from_config(&CorpusConfig { seed: 2, ..small(0.9, 0.3) }).unwrap();
        assert_ne!(gen_corpus(&spec).unwrap(), gen_corpus(&other).unwrap());
    }

    #[test]
    fn full_overlap_makes_paired_phones_identical() {
        let spec = CorpusSpec::from_config(&small(1.0, 0.0)).unwrap();
        for k in 0..spec.phones_per_language {
            assert_eq!(spec.means[0][k], spec.means[1][k]);
        }
        // A language-blind classifier maps each emitted vector to one class,
        // so on a paired phone at most one of the two labels can be right.
        let c = gen_corpus(&spec).unwrap();
        let n = spec.phones_per_language;
        let (mut errors, mut total) = (0usize, 0usize);
        for u in c.train.iter().chain(&c.test) {
            for (f, &p) in u.frames.iter().zip(&u.phones) {
                total += 1;
                if nearest_mean(&spec, f) != p {
                    errors += 1;
                }
                assert!(nearest_mean(&spec, f) % n == p % n);
            }
        }
        let lang1_frames: usize = c
            .train
            .iter()
            .chain(&c.test)
            .filter(|u| u.language == 1)
            .map(|u| u.len())
            .sum();
        assert_eq!(errors, lang1_frames);
        assert!(errors as f64 / total as f64 >= 0.4);
    }

    #[test]
    fn split_and_partition() {
        let spec = CorpusSpec::from_config(&small(0.5, 0.3)).unwrap();
        let c = gen_corpus(&spec).unwrap();
        assert_eq!(c.train.len(), 36);
        assert_eq!(c.test.len(), 4);
        for u in c.train.iter().chain(&c.test) {
            assert!((5..=12).contains(&u.len()));
            assert!(u.phones.iter().all(|&p| c.partition.language_of(p) == u.language));
        }
    }

    #[test]
    fn emission_means_converge() {
        let cfg = CorpusConfig {
            utterances_per_language: 60,
            ..small(0.9, 0.3)
        };
        let spec = CorpusSpec::from_config(&cfg).unwrap();
        let c = gen_corpus(&spec).unwrap();
        let n = spec.phones_per_language;
        let mut sums = vec![vec![0.0; spec.feat_dim]; 2 * n];
        let mut counts = vec![0usize; 2 * n];
        for u in c.train.iter().chain(&c.test) {
            for (f, &p) in u.frames.iter().zip(&u.phones) {
                counts[p] += 1;
                for (s, v) in sums[p].iter_mut().zip(f) {
                    *s += v;
                }
            }
        }
        for p in 0..2 * n {
            assert!(counts[p] > 20);
            let bound = 3.0 * spec.stddev / (counts[p] as f64).sqrt();
            // 3σ per coordinate; allow a small number of excursions overall
            let mean = &spec.means[p / n][p % n];
            let misses = (0..spec.feat_dim)
                .filter(|&d| (sums[p][d] / counts[p] as f64 - mean[d]).abs() > bound)
                .count();
            assert!(misses <= 1, "phone {p}: {misses} coordinates out of bounds");
        }
    }

    #[test]
    fn config_validation() {
        assert!(CorpusSpec::from_config(&CorpusConfig { overlap: 1.5, ..Default::default() }).is_err());
        assert!(CorpusSpec::from_config(&CorpusConfig { languages: 1, ..Default::default() }).is_err());
        assert!(CorpusSpec::from_config(&CorpusConfig { frames_min: 0, ..Default::default() }).is_err());
        let mut spec = CorpusSpec::from_config(&small(0.5, 0.3)).unwrap();
        spec.transitions[1].set(0, 0, 5.0);
        assert!(gen_corpus(&spec).is_err());
    }

    #[test]
    fn splice_examples() {
        let frames = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(splice(&frames, 0).unwrap(), frames);
        assert_eq!(
            splice(&frames, 1).unwrap(),
            vec![vec![1.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 3.0]]
        );
        let one = vec![vec![0.5, -1.0]];
        assert_eq!(splice(&one, 2).unwrap(), vec![[0.5, -1.0].repeat(5)]);
        assert!(splice(&[], 2).is_err());
    }

    #[test]
    fn splice_center_is_original() {
        let spec = CorpusSpec::from_config(&small(0.5, 0.3)).unwrap();
        let c = gen_corpus(&spec).unwrap();
        let u = &c.train[3];
        let s = splice(&u.frames, 2).unwrap();
        assert_eq!(s.len(), u.len());
        for (out, orig) in s.iter().zip(&u.frames) {
            assert_eq!(out.len(), 5 * spec.feat_dim);
            assert_eq!(&out[2 * spec.feat_dim..3 * spec.feat_dim], orig.as_slice());
        }
    }

    #[test]
    fn corpus_file_round_trips_exactly() {
        let spec = CorpusSpec::from_config(&small(0.9, 0.3)).unwrap();
        let c = gen_corpus(&spec).unwrap();
        let file = CorpusFile {
            feat_dim: spec.feat_dim,
            phone_classes: 20,
            language_classes: 2,
            utterances: c.test.clone(),
        };
        let mut buf = Vec::new();
        write_corpus(&mut buf, &file).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("MTCORP1 8 20 2\nUTT "));
        assert!(!text.contains('e'), "scientific notation leaked into the corpus file");
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), file);
    }

    #[test]
    fn corpus_reader_rejects_garbage() {
        assert!(read_corpus("NOPE 1 2 2\n".as_bytes()).is_err());
        let short = "MTCORP1 2 4 2\nUTT u0 0 2\n0.1 0.2\n";
        assert!(read_corpus(short.as_bytes()).is_err());
        let bad_phone = "MTCORP1 1 4 2\nUTT u0 0 1\n0.1\n9\n";
        assert!(read_corpus(bad_phone.as_bytes()).is_err());
        let ok = "MTCORP1 1 4 2\nUTT u0 1 2\n0.1\n-2\n2 3\n";
        let f = read_corpus(ok.as_bytes()).unwrap();
        assert_eq!(f.utterances[0].phones, vec![2, 3]);
        assert_eq!(f.partition().unwrap().language_of(3), 1);
    }
}
