//! Wrappers that write every successful exchange into a fixture directory.

use std::path::PathBuf;
use std::sync::Arc;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, FixtureChat, FixtureTools, ToolBackend};
use crate::tools::{RawToolOutput, ToolRequest};

pub struct RecordingChat {
    inner: Arc<dyn ChatBackend>,
    dir: PathBuf,
}

impl RecordingChat {
    pub fn new(inner: Arc<dyn ChatBackend>, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into() }
    }
}

impl ChatBackend for RecordingChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        FixtureChat::write(&self.dir, request, &response.text)?;
        Ok(response)
    }
}

pub struct RecordingTools {
    inner: Arc<dyn ToolBackend>,
    dir: PathBuf,
}

impl RecordingTools {
    pub fn new(inner: Arc<dyn ToolBackend>, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into() }
    }
}

impl ToolBackend for RecordingTools {
    fn invoke(&self, request: &ToolRequest) -> Result<RawToolOutput, BackendError> {
        let result = self.inner.invoke(request);
        if matches!(result, Ok(_) | Err(BackendError::UnknownTool(_))) {
            FixtureTools::write(&self.dir, request, &result)?;
        }
        result
    }
}
