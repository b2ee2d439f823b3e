//! Manifest CSV, truth audit CSV and binary PGM (P5) images.
//!
//! Manifest header: `sample_id,image_path,<finding>_state,...` where spaces
//! in finding names are written as underscores. States are `affirmed`,
//! `negated`, `nomention`, or `contradiction` for a (1,1) pair, which only
//! lenient ingestion accepts (by dropping the row).

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, Image, Sample};
use crate::labelcore::{FindingVocabulary, IngestMode, LabelMatrix, MentionState};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FILE: &str = "truth_audit.csv";
const STATE_SUFFIX: &str = "_state";
const TRUTH_SUFFIX: &str = "_truth";
const CONTRADICTION: &str = "contradiction";

/// Nearest 8-bit level of a value clamped to `[0, 1]`.
pub fn value_to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn level_to_value(level: u8) -> f32 {
    level as f32 / 255.0
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<(), DataError> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|&v| value_to_level(v as f64)));
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image, DataError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DataError::io(path, e))?;
    parse_pgm(&bytes).map_err(|m| DataError::Format(format!("{}: {m}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> Result<Image, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        if fields.len() == 1 && fields[0] != "P5" {
            return Err(format!("unsupported magic `{}`, expected P5", fields[0]));
        }
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} `{s}`"));
    let (width, height, maxval) = (
        num(&fields[1], "width")?,
        num(&fields[2], "height")?,
        num(&fields[3], "maxval")?,
    );
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} unsupported, expected 1..=255"));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < width * height {
        return Err(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            width * height
        ));
    }
    let data = raster[..width * height]
        .iter()
        .map(|&b| {
            if maxval == 255 {
                level_to_value(b)
            } else {
                (b as f32 / maxval as f32).min(1.0)
            }
        })
        .collect();
    Ok(Image::new(height, width, data))
}

fn column_name(finding: &str, suffix: &str) -> String {
    format!("{}{suffix}", finding.replace(' ', "_"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub states: Vec<MentionState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub vocabulary: FindingVocabulary,
    pub rows: Vec<ManifestRow>,
    /// Rows removed by lenient ingestion.
    pub dropped: usize,
}

/// Writes the manifest; `image_paths[i]` is recorded verbatim for sample `i`.
pub fn save_manifest(dataset: &Dataset, image_paths: &[String], path: &Path) -> Result<(), DataError> {
    let rows: Vec<ManifestRow> = dataset
        .samples
        .iter()
        .zip(image_paths)
        .map(|(s, p)| ManifestRow {
            sample_id: s.sample_id.clone(),
            image_path: PathBuf::from(p),
            states: s.states.clone(),
        })
        .collect();
    save_manifest_rows(&dataset.vocabulary, &rows, path)
}

pub fn save_manifest_rows(vocabulary: &FindingVocabulary, rows: &[ManifestRow], path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["sample_id".to_string(), "image_path".to_string()];
    header.extend(vocabulary.names().iter().map(|n| column_name(n, STATE_SUFFIX)));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for r in rows {
        let mut rec = vec![r.sample_id.clone(), r.image_path.to_string_lossy().into_owned()];
        rec.extend(r.states.iter().map(|st| st.as_str().to_string()));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::io(path, io),
        other => DataError::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn csv_parse(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DataError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Reads a manifest and applies contradiction handling per `mode`.
pub fn load_manifest(path: &Path, mode: IngestMode) -> Result<Manifest, DataError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = r.headers().map_err(csv_parse)?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "image_path" {
        return Err(DataError::Parse {
            line: 1,
            message: "header must start with sample_id,image_path and name at least one finding".into(),
        });
    }
    let mut names = Vec::new();
    for col in header.iter().skip(2) {
        let Some(name) = col.strip_suffix(STATE_SUFFIX) else {
            return Err(DataError::Parse {
                line: 1,
                message: format!("column `{col}` does not end in `{STATE_SUFFIX}`"),
            });
        };
        names.push(name.replace('_', " "));
    }
    let vocabulary = FindingVocabulary::from_names(&names)?;
    let k = names.len();
    let mut ids = Vec::new();
    let mut paths = Vec::new();
    let mut targets = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_parse)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != k + 2 {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", k + 2, rec.len()),
            });
        }
        if rec[0].is_empty() {
            return Err(DataError::Parse {
                line,
                message: "empty sample_id".into(),
            });
        }
        for field in rec.iter().skip(2) {
            let bits = if field == CONTRADICTION {
                (1, 1)
            } else {
                field
                    .parse::<MentionState>()
                    .map_err(|_| DataError::Parse {
                        line,
                        message: format!("unknown state `{field}`"),
                    })?
                    .bits()
            };
            targets.extend([bits.0, bits.1]);
        }
        ids.push(rec[0].to_string());
        paths.push(PathBuf::from(&rec[1]));
    }
    let matrix = LabelMatrix::new(ids, k, targets)?;
    let (matrix, kept, dropped) = matrix.ingest(mode, &vocabulary)?;
    let rows = kept
        .iter()
        .enumerate()
        .map(|(new, &old)| ManifestRow {
            sample_id: matrix.sample_ids()[new].clone(),
            image_path: paths[old].clone(),
            states: (0..k)
                .map(|f| {
                    let (a, b) = matrix.pair(new, f);
                    MentionState::from_bits(a, b).expect("contradictions removed by ingestion")
                })
                .collect(),
        })
        .collect();
    Ok(Manifest {
        vocabulary,
        rows,
        dropped,
    })
}

/// Writes `images/<id>.pgm`, the manifest and the truth audit into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| DataError::io(&images, e))?;
    let mut rel = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let name = format!("images/{}.pgm", s.sample_id);
        write_pgm(&dir.join(&name), &s.image)?;
        rel.push(name);
    }
    save_manifest(dataset, &rel, &dir.join(MANIFEST_FILE))?;
    if dataset.samples.iter().all(|s| s.truth.is_some()) {
        save_truth_audit(dataset, &dir.join(TRUTH_FILE))?;
    }
    Ok(())
}

/// Loads a manifest and its images; relative image paths resolve against
/// the manifest's directory. Truth is not loaded.
pub fn load_dataset(manifest: &Path, mode: IngestMode) -> Result<Dataset, DataError> {
    let m = load_manifest(manifest, mode)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(m.rows.len());
    let mut shape = None;
    for row in m.rows {
        let p = if row.image_path.is_absolute() {
            row.image_path.clone()
        } else {
            base.join(&row.image_path)
        };
        let image = read_pgm(&p)?;
        let s = (image.height, image.width);
        if *shape.get_or_insert(s) != s {
            return Err(DataError::Format(format!(
                "{}: image is {}×{}, expected {}×{}",
                p.display(),
                s.0,
                s.1,
                shape.unwrap().0,
                shape.unwrap().1
            )));
        }
        samples.push(Sample {
            sample_id: row.sample_id,
            image,
            truth: None,
            states: row.states,
            report: None,
        });
    }
    Ok(Dataset {
        vocabulary: m.vocabulary,
        samples,
    })
}

pub fn save_truth_audit(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["sample_id".to_string()];
    header.extend(dataset.vocabulary.names().iter().map(|n| column_name(n, TRUTH_SUFFIX)));
    let mut out = header.join(",") + "\n";
    for s in &dataset.samples {
        let t = s
            .truth
            .as_ref()
            .ok_or_else(|| DataError::Format(format!("{} has no truth", s.sample_id)))?;
        out.push_str(&s.sample_id);
        for &b in t {
            out.push_str(if b { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| DataError::io(path, e))
}

/// Attaches ground truth from an audit file to matching samples.
pub fn load_truth_audit(dataset: &mut Dataset, path: &Path) -> Result<(), DataError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let k = dataset.vocabulary.len();
    let mut by_id = std::collections::HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_parse)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != k + 1 {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields", k + 1),
            });
        }
        let bits = rec
            .iter()
            .skip(1)
            .map(|f| match f {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(DataError::Parse {
                    line,
                    message: format!("truth must be 0 or 1, found `{other}`"),
                }),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        by_id.insert(rec[0].to_string(), bits);
    }
    for s in &mut dataset.samples {
        s.truth = by_id.remove(&s.sample_id);
    }
    Ok(())
}
