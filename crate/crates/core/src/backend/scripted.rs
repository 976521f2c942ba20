use std::collections::VecDeque;
use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Answers from a fixed FIFO queue, one entry per call.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(answers.into_iter().map(Into::into).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let next = self
            .queue
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(BackendError::ScriptExhausted)?;
        Ok(ChatResponse::estimated(request, next))
    }
}

/// Answers by calling a function of the request. Handy for fixtures where the
/// reply depends on prompt content rather than call order.
pub struct FnBackend<F> {
    respond: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let text = (self.respond)(request)?;
        Ok(ChatResponse::estimated(request, text))
    }
}
