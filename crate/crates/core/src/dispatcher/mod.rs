//! Allocation, submission planning and asynchronous submission.

pub mod allocate;
pub mod jdl;
pub mod plan;
pub mod submit;

pub use allocate::{allocate, AllocationError};
pub use jdl::{parse_broker_description, render_broker_description, MalformedDescription};
pub use plan::{plan_submission, Allocation, PlanError, SubmissionPlan};
pub use submit::{wrapper_request, Dispatcher, Submission, SubmitError};
