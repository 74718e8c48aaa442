//! Images as token bags: data model, validation and JSON-lines I/O.
//!
//! A corpus file is UTF-8 JSON lines. Line 1 is a header
//! `{"version":1,"num_classes":C,"vocab_sizes":[V_1,...,V_F]}` with optional
//! `"loc_space":"pixel"` and `"class_names":[...]`; every following line is
//! one image. Locations are stored normalised to the unit square; pixel-space
//! input is divided by the image size on load and clamped into `[0,1]`.

mod codebook;
mod ground_truth;
mod similarity;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use codebook::{build_codebook, quantize, Codebook, KMeansOptions, KMeansReport};
pub use ground_truth::{load_ground_truth_csv, save_ground_truth_csv, GroundTruthBox};
pub use similarity::{load_similarity_matrix, parse_similarity_csv, SimilarityMatrix};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// One visual word occurrence: a location plus one word id per feature channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "loc")]
    pub location: [f64; 2],
    #[serde(rename = "w")]
    pub words: Vec<u32>,
}

impl Token {
    pub fn new(location: [f64; 2], words: Vec<u32>) -> Self {
        Token { location, words }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub labels: BTreeSet<usize>,
    /// Excluded from weak supervision; see `ModelConfig::ssl_alpha`.
    #[serde(default)]
    pub unlabeled: bool,
    pub tokens: Vec<Token>,
}

impl ImageRecord {
    /// Histogram of word ids in one channel, unnormalised.
    pub fn word_counts(&self, channel: usize, vocab_size: usize) -> Vec<f64> {
        let mut counts = vec![0.0; vocab_size];
        for token in &self.tokens {
            counts[token.words[channel] as usize] += 1.0;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub num_classes: usize,
    pub vocab_sizes: Vec<usize>,
    pub class_names: Vec<String>,
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LocSpace {
    Normalized,
    Pixel,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    num_classes: usize,
    vocab_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loc_space: Option<LocSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
}

pub fn default_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("class{c}")).collect()
}

impl Corpus {
    pub fn new(num_classes: usize, vocab_sizes: Vec<usize>) -> Self {
        Corpus {
            num_classes,
            vocab_sizes,
            class_names: default_class_names(num_classes),
            images: Vec::new(),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.images.iter().map(|im| im.tokens.len()).sum()
    }

    /// Check every invariant of the corpus and its images.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation(
                "header",
                "num_classes must be at least 1",
            ));
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.contains(&0) {
            return Err(Error::validation(
                "header",
                "vocab_sizes must be non-empty with positive entries",
            ));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::validation(
                "header",
                format!(
                    "{} class names for {} classes",
                    self.class_names.len(),
                    self.num_classes
                ),
            ));
        }
        for image in &self.images {
            self.validate_image(image)?;
        }
        Ok(())
    }

    pub fn validate_image(&self, image: &ImageRecord) -> Result<()> {
        let ctx = |field: &str| format!("image {}, field {field}", image.id);
        if image.width == 0 || image.height == 0 {
            return Err(Error::validation(ctx("width/height"), "must be positive"));
        }
        if let Some(&bad) = image.labels.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::validation(
                ctx("labels"),
                format!("label {bad} >= num_classes {}", self.num_classes),
            ));
        }
        if image.tokens.is_empty() && !image.unlabeled {
            return Err(Error::validation(
                ctx("tokens"),
                "labelled image has no tokens",
            ));
        }
        for (i, token) in image.tokens.iter().enumerate() {
            if token.words.len() != self.vocab_sizes.len() {
                return Err(Error::validation(
                    ctx("tokens.w"),
                    format!(
                        "token {i} has {} words, expected {}",
                        token.words.len(),
                        self.vocab_sizes.len()
                    ),
                ));
            }
            for (f, (&w, &v)) in token.words.iter().zip(&self.vocab_sizes).enumerate() {
                if w as usize >= v {
                    return Err(Error::validation(
                        ctx("tokens.w"),
                        format!("token {i} channel {f}: word id {w} >= vocab size {v}"),
                    ));
                }
            }
            let [x, y] = token.location;
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::validation(
                    ctx("tokens.loc"),
                    format!("token {i} location ({x}, {y}) outside the unit square"),
                ));
            }
        }
        Ok(())
    }

    /// Subset of images selected by `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Corpus {
        Corpus {
            num_classes: self.num_classes,
            vocab_sizes: self.vocab_sizes.clone(),
            class_names: self.class_names.clone(),
            images: self.images.iter().filter(|im| keep(im)).cloned().collect(),
        }
    }
}

/// Read and validate a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(Error::parse(1, "missing header line")),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::parse(i + 1, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e))?;
            }
        }
    };
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }
    let pixel = header.loc_space == Some(LocSpace::Pixel);
    let mut corpus = Corpus {
        num_classes: header.num_classes,
        class_names: header
            .class_names
            .unwrap_or_else(|| default_class_names(header.num_classes)),
        vocab_sizes: header.vocab_sizes,
        images: Vec::new(),
    };
    for (i, line) in lines {
        let line = line.map_err(|e| Error::parse(i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut image: ImageRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e))?;
        if pixel && image.width > 0 && image.height > 0 {
            let (w, h) = (image.width as f64, image.height as f64);
            for token in &mut image.tokens {
                token.location = [
                    (token.location[0] / w).clamp(0.0, 1.0),
                    (token.location[1] / h).clamp(0.0, 1.0),
                ];
            }
        }
        corpus.images.push(image);
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Write a corpus with normalised locations.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus(corpus, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, out: &mut W) -> std::io::Result<()> {
    let class_names = if corpus.class_names == default_class_names(corpus.num_classes) {
        None
    } else {
        Some(corpus.class_names.clone())
    };
    let header = Header {
        version: CORPUS_FORMAT_VERSION,
        num_classes: corpus.num_classes,
        vocab_sizes: corpus.vocab_sizes.clone(),
        loc_space: None,
        class_names,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for image in &corpus.images {
        serde_json::to_writer(&mut *out, image)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
