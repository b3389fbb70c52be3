use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nn(#[from] nn_core::NnError),
    #[error(transparent)]
    Render(#[from] geometry_render::RenderError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PlanError>;

pub(crate) fn invalid(msg: impl Into<String>) -> PlanError {
    PlanError::Invalid(msg.into())
}
