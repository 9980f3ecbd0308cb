//! Semantic selection: free-text descriptions resolved against a scene.
//!
//! [`KeywordSemantic`] is the deterministic offline fallback.
//! [`ChatSemantic`] sends the formatted scene to a chat endpoint and reads
//! back a JSON list of object ids.

use std::collections::BTreeSet;

use thiserror::Error;

use super::format::format_scene;
use crate::chat::{extract_json_block, ChatError, ChatMessage, ChatTransport};
use crate::twin::SceneGraph;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("could not read an id list from the reply: {0}")]
    Reply(String),
}

pub trait SemanticProvider: Send + Sync {
    fn select(&self, description: &str, scene: &SceneGraph) -> Result<BTreeSet<u64>, SemanticError>;
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Matches a node when its category's token sequence occurs contiguously
/// in the description. No stemming: "cups" does not match "cup".
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordSemantic;

impl SemanticProvider for KeywordSemantic {
    fn select(&self, description: &str, scene: &SceneGraph) -> Result<BTreeSet<u64>, SemanticError> {
        let desc = tokens(description);
        Ok(scene
            .nodes
            .values()
            .filter(|n| {
                let cat = tokens(&n.category);
                !cat.is_empty() && desc.windows(cat.len()).any(|w| w == cat.as_slice())
            })
            .map(|n| n.track_id)
            .collect())
    }
}

const SEMANTIC_SYSTEM_PROMPT: &str = "You select objects in a video frame. You are given a \
scene description listing objects with numeric ids, followed by a target description. Reply \
with a JSON array of the ids of every object matching the target description, e.g. [3, 7]. \
Reply with [] when nothing matches. Do not add any other text.";

pub struct ChatSemantic<T> {
    transport: T,
}

impl<T: ChatTransport> ChatSemantic<T> {
    pub fn new(transport: T) -> Self {
        ChatSemantic { transport }
    }
}

/// Reads the first JSON integer array out of `reply`, keeping only ids
/// present in `scene`.
pub fn parse_id_reply(reply: &str, scene: &SceneGraph) -> Result<BTreeSet<u64>, SemanticError> {
    let block = extract_json_block(reply, '[').ok_or_else(|| SemanticError::Reply(reply.into()))?;
    let ids: Vec<u64> =
        serde_json::from_str(block).map_err(|e| SemanticError::Reply(format!("{e}: {block}")))?;
    Ok(ids
        .into_iter()
        .filter(|id| scene.nodes.contains_key(id))
        .collect())
}

impl<T: ChatTransport> SemanticProvider for ChatSemantic<T> {
    fn select(&self, description: &str, scene: &SceneGraph) -> Result<BTreeSet<u64>, SemanticError> {
        let messages = [
            ChatMessage::system(SEMANTIC_SYSTEM_PROMPT),
            ChatMessage::user(format!(
                "{}\nTarget: {description}",
                format_scene(scene)
            )),
        ];
        let reply = self.transport.complete(&messages)?;
        parse_id_reply(&reply, scene)
    }
}

/// Chat-backed selection that degrades to keyword matching when the
/// endpoint fails.
pub struct FallbackSemantic<P> {
    primary: P,
}

impl<P: SemanticProvider> FallbackSemantic<P> {
    pub fn new(primary: P) -> Self {
        FallbackSemantic { primary }
    }
}

impl<P: SemanticProvider> SemanticProvider for FallbackSemantic<P> {
    fn select(&self, description: &str, scene: &SceneGraph) -> Result<BTreeSet<u64>, SemanticError> {
        self.primary.select(description, scene).or_else(|e| {
            log::warn!("semantic provider failed ({e}); using keyword fallback");
            KeywordSemantic.select(description, scene)
        })
    }
}
