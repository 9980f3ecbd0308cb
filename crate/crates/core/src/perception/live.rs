//! Live providers joined into one observation per frame.
//!
//! The segmenter drives the stream: it yields the per-frame object masks.
//! Every other role is an [`Annotator`] that fills one field of each
//! detection. Annotators for a frame run concurrently and are joined before
//! the frame is handed to the engine.

use std::thread;

use super::{
    trace::validate_frame, Detection, FrameObservation, ObservationSource, PerceptionError,
    ProviderRole, TraceHeader,
};

/// Mask-producing provider. Detections it yields carry no depth and an
/// empty embedding; annotators fill those in.
pub trait SegmenterSource: Send {
    fn dims(&self) -> (u32, u32);
    fn frame_count(&self) -> u64;
    fn next_frame(&mut self) -> Result<Option<FrameObservation>, PerceptionError>;
}

/// Per-detection output of one annotating role, aligned with the frame's
/// detection order.
#[derive(Debug, Clone, PartialEq)]
pub enum RoleOutput {
    Depth(Vec<Option<f64>>),
    Embedding(Vec<Vec<f64>>),
    Labels(Vec<(String, f64)>),
}

pub trait Annotator: Send + Sync {
    fn role(&self) -> ProviderRole;
    fn annotate(&self, frame: &FrameObservation) -> Result<RoleOutput, PerceptionError>;
}

pub struct JoinedSource {
    header: TraceHeader,
    segmenter: Box<dyn SegmenterSource>,
    annotators: Vec<Box<dyn Annotator>>,
    next_index: u64,
}

impl JoinedSource {
    pub fn new(
        segmenter: Box<dyn SegmenterSource>,
        annotators: Vec<Box<dyn Annotator>>,
        embedding_dim: usize,
    ) -> Result<Self, PerceptionError> {
        let mut providers = vec![ProviderRole::Segmenter];
        for a in &annotators {
            let role = a.role();
            if providers.contains(&role) {
                return Err(PerceptionError::Spec(format!("role `{role}` registered twice")));
            }
            providers.push(role);
        }
        let (width, height) = segmenter.dims();
        let header = TraceHeader {
            width,
            height,
            embedding_dim: if providers.contains(&ProviderRole::Embedder) {
                embedding_dim
            } else {
                0
            },
            frame_count: segmenter.frame_count(),
            providers,
        };
        super::trace::validate_header(&header, 0)?;
        Ok(JoinedSource {
            header,
            segmenter,
            annotators,
            next_index: 0,
        })
    }

    fn apply(
        &self,
        frame: &mut FrameObservation,
        role: ProviderRole,
        output: RoleOutput,
    ) -> Result<(), PerceptionError> {
        let n = frame.detections.len();
        let misaligned = |got: usize| {
            PerceptionError::Provider(format!(
                "{role} returned {got} values for {n} detections"
            ))
        };
        let dets = &mut frame.detections;
        match output {
            RoleOutput::Depth(v) => {
                if v.len() != n {
                    return Err(misaligned(v.len()));
                }
                dets.iter_mut().zip(v).for_each(|(d, z)| d.depth_mean = z);
            }
            RoleOutput::Embedding(v) => {
                if v.len() != n {
                    return Err(misaligned(v.len()));
                }
                if let Some(bad) = v.iter().find(|e| e.len() != self.header.embedding_dim) {
                    return Err(PerceptionError::Provider(format!(
                        "{role} returned a {}-dimensional embedding, expected {}",
                        bad.len(),
                        self.header.embedding_dim
                    )));
                }
                dets.iter_mut().zip(v).for_each(|(d, e)| d.embedding = e);
            }
            RoleOutput::Labels(v) => {
                if v.len() != n {
                    return Err(misaligned(v.len()));
                }
                dets.iter_mut().zip(v).for_each(|(d, (c, s))| {
                    d.category = c;
                    d.score = s;
                });
            }
        }
        Ok(())
    }
}

impl ObservationSource for JoinedSource {
    fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_observation(&mut self) -> Result<Option<FrameObservation>, PerceptionError> {
        let Some(mut frame) = self.segmenter.next_frame()? else {
            return Ok(None);
        };
        let outputs: Vec<_> = thread::scope(|s| {
            let frame = &frame;
            let handles: Vec<_> = self
                .annotators
                .iter()
                .map(|a| s.spawn(move || (a.role(), a.annotate(frame))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("annotator thread panicked"))
                .collect()
        });
        for (role, out) in outputs {
            let out = out.map_err(|e| match e {
                PerceptionError::Provider(m) => PerceptionError::Provider(m),
                other => PerceptionError::Provider(format!("{role}: {other}")),
            })?;
            self.apply(&mut frame, role, out)?;
        }
        validate_frame(&self.header, &frame, self.next_index, 0)
            .map_err(|e| PerceptionError::Provider(e.to_string()))?;
        self.next_index += 1;
        Ok(Some(frame))
    }
}

/// Fills depth from a closure over each detection.
pub struct FnDepth<F>(pub F);

impl<F> Annotator for FnDepth<F>
where
    F: Fn(u64, &Detection) -> Result<Option<f64>, PerceptionError> + Send + Sync,
{
    fn role(&self) -> ProviderRole {
        ProviderRole::Depth
    }

    fn annotate(&self, frame: &FrameObservation) -> Result<RoleOutput, PerceptionError> {
        frame
            .detections
            .iter()
            .map(|d| (self.0)(frame.frame_index, d))
            .collect::<Result<_, _>>()
            .map(RoleOutput::Depth)
    }
}

/// Fills embeddings from a closure over each detection.
pub struct FnEmbedder<F>(pub F);

impl<F> Annotator for FnEmbedder<F>
where
    F: Fn(u64, &Detection) -> Result<Vec<f64>, PerceptionError> + Send + Sync,
{
    fn role(&self) -> ProviderRole {
        ProviderRole::Embedder
    }

    fn annotate(&self, frame: &FrameObservation) -> Result<RoleOutput, PerceptionError> {
        frame
            .detections
            .iter()
            .map(|d| (self.0)(frame.frame_index, d))
            .collect::<Result<_, _>>()
            .map(RoleOutput::Embedding)
    }
}
