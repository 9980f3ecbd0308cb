//! JSON Lines trace files.
//!
//! Line 1 is a header record, every following non-blank line is one frame:
//!
//! ```text
//! {"type":"header","w":160,"h":120,"embedding_dim":32,"frame_count":2,"providers":["segmenter","depth","embedder"]}
//! {"type":"frame","frame_index":0,"detections":[{"det_id":0,"category":"cup",...}]}
//! ```
//!
//! [`TraceReader`] validates each record as it is read, so a trace can be
//! consumed frame by frame without loading it whole.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Detection, FrameObservation, ObservationSource, PerceptionError, PerceptionTrace,
    ProviderRole, TraceHeader,
};

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Header(TraceHeader),
    Frame(FrameRecord),
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame_index: u64,
    detections: Vec<Detection>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename = "frame")]
struct FrameRecordRef<'a> {
    frame_index: u64,
    detections: &'a [Detection],
}

#[derive(Serialize)]
#[serde(tag = "type", rename = "header")]
struct HeaderRecordRef<'a> {
    #[serde(flatten)]
    header: &'a TraceHeader,
}

pub(crate) fn validate_header(header: &TraceHeader, line: usize) -> Result<(), PerceptionError> {
    if header.width == 0 || header.height == 0 {
        return Err(PerceptionError::schema(
            line,
            "w",
            "frame dimensions must be positive",
        ));
    }
    if !header.has(ProviderRole::Segmenter) {
        return Err(PerceptionError::schema(
            line,
            "providers",
            "segmenter provider is mandatory",
        ));
    }
    let unique: HashSet<_> = header.providers.iter().collect();
    if unique.len() != header.providers.len() {
        return Err(PerceptionError::schema(
            line,
            "providers",
            "duplicate provider role",
        ));
    }
    Ok(())
}

/// Checks one frame against the header and the expected next index.
pub(crate) fn validate_frame(
    header: &TraceHeader,
    frame: &FrameObservation,
    expected_index: u64,
    line: usize,
) -> Result<(), PerceptionError> {
    if frame.frame_index != expected_index {
        return Err(PerceptionError::schema(
            line,
            "frame_index",
            format!(
                "expected frame {expected_index}, got {} (indices must increase by one from 0)",
                frame.frame_index
            ),
        ));
    }
    if (frame.width, frame.height) != (header.width, header.height) {
        return Err(PerceptionError::schema(
            line,
            "w",
            "frame dimensions differ from the header",
        ));
    }
    let mut seen = HashSet::new();
    for det in &frame.detections {
        validate_detection(header, det, line)?;
        if !seen.insert(det.det_id) {
            return Err(PerceptionError::schema(
                line,
                "det_id",
                format!("duplicate det_id {}", det.det_id),
            ));
        }
    }
    Ok(())
}

fn validate_detection(
    header: &TraceHeader,
    det: &Detection,
    line: usize,
) -> Result<(), PerceptionError> {
    let err = |field: &str, msg: String| {
        Err(PerceptionError::schema(
            line,
            field,
            format!("det_id {}: {msg}", det.det_id),
        ))
    };
    if det.embedding.len() != header.embedding_dim {
        return err(
            "embedding",
            format!(
                "dimension {} does not match declared embedding_dim {}",
                det.embedding.len(),
                header.embedding_dim
            ),
        );
    }
    if det.embedding.iter().any(|v| !v.is_finite()) {
        return err("embedding", "non-finite component".into());
    }
    if !(0.0..=1.0).contains(&det.score) {
        return err("score", format!("{} is outside [0, 1]", det.score));
    }
    if !det.bbox.fits_within(header.width, header.height) {
        return err("bbox", "box extends past the frame".into());
    }
    let [cx, cy] = det.centroid;
    if !det.bbox.contains_point(cx, cy) {
        return err("centroid", format!("({cx}, {cy}) lies outside the bbox"));
    }
    match det.depth_mean {
        Some(d) if !(d.is_finite() && d >= 0.0) => {
            return err("depth_mean", format!("{d} must be finite and >= 0"));
        }
        Some(_) if !header.has(ProviderRole::Depth) => {
            return err(
                "depth_mean",
                "depth present but no depth provider is declared".into(),
            );
        }
        _ => {}
    }
    if (det.mask.width, det.mask.height) != (header.width, header.height) {
        return err("mask", "mask dimensions differ from the frame".into());
    }
    if let Err(e) = det.mask.validate() {
        return err("mask", e.to_string());
    }
    Ok(())
}

/// Streaming reader over a JSONL trace.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    header: TraceHeader,
    next_index: u64,
    finished: bool,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, PerceptionError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> Result<Self, PerceptionError> {
        let mut lines = reader.lines();
        let mut line_no = 0;
        let header = loop {
            line_no += 1;
            let Some(line) = lines.next() else {
                return Err(PerceptionError::Parse {
                    line: line_no,
                    message: "missing header record".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Record>(&line) {
                Ok(Record::Header(h)) => break h,
                Ok(Record::Frame(_)) => {
                    return Err(PerceptionError::schema(
                        line_no,
                        "type",
                        "first record must be the header",
                    ))
                }
                Err(e) => {
                    return Err(PerceptionError::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
        };
        validate_header(&header, line_no)?;
        Ok(TraceReader {
            lines,
            line_no,
            header,
            next_index: 0,
            finished: false,
        })
    }

    fn read_frame(&mut self) -> Result<Option<FrameObservation>, PerceptionError> {
        loop {
            self.line_no += 1;
            let Some(line) = self.lines.next() else {
                if self.next_index != self.header.frame_count {
                    return Err(PerceptionError::schema(
                        self.line_no,
                        "frame_count",
                        format!(
                            "header declares {} frames, trace holds {}",
                            self.header.frame_count, self.next_index
                        ),
                    ));
                }
                return Ok(None);
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| PerceptionError::Parse {
                    line: self.line_no,
                    message: e.to_string(),
                })?;
            let Record::Frame(rec) = record else {
                return Err(PerceptionError::schema(
                    self.line_no,
                    "type",
                    "unexpected second header",
                ));
            };
            let frame = FrameObservation {
                frame_index: rec.frame_index,
                width: self.header.width,
                height: self.header.height,
                detections: rec.detections,
            };
            validate_frame(&self.header, &frame, self.next_index, self.line_no)?;
            self.next_index += 1;
            return Ok(Some(frame));
        }
    }
}

impl<R: BufRead> ObservationSource for TraceReader<R> {
    fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_observation(&mut self) -> Result<Option<FrameObservation>, PerceptionError> {
        if self.finished {
            return Ok(None);
        }
        let frame = self.read_frame();
        if !matches!(frame, Ok(Some(_))) {
            self.finished = true;
        }
        frame
    }
}

/// Reads and validates a whole trace file.
pub fn load_trace(path: &Path) -> Result<PerceptionTrace, PerceptionError> {
    let mut reader = TraceReader::open(path)?;
    let mut frames = Vec::new();
    while let Some(f) = reader.next_observation()? {
        frames.push(f);
    }
    Ok(PerceptionTrace {
        header: reader.header,
        frames,
    })
}

/// Incremental trace writer; the header is written on construction.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> Result<Self, PerceptionError> {
        serde_json::to_writer(&mut out, &HeaderRecordRef { header })
            .map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(TraceWriter { out })
    }

    pub fn write_frame(&mut self, frame: &FrameObservation) -> Result<(), PerceptionError> {
        let rec = FrameRecordRef {
            frame_index: frame.frame_index,
            detections: &frame.detections,
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, PerceptionError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_trace(trace: &PerceptionTrace, path: &Path) -> Result<(), PerceptionError> {
    let mut w = TraceWriter::new(BufWriter::new(File::create(path)?), &trace.header)?;
    for f in &trace.frames {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}

/// Serializes a trace to an in-memory JSONL string.
pub fn trace_to_string(trace: &PerceptionTrace) -> Result<String, PerceptionError> {
    let mut w = TraceWriter::new(Vec::new(), &trace.header)?;
    for f in &trace.frames {
        w.write_frame(f)?;
    }
    Ok(String::from_utf8(w.finish()?).expect("serde_json writes utf-8"))
}
