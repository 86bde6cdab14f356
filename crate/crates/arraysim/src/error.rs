use thiserror::Error;

/// Crate-wide error type. Variants map one-to-one onto the failure modes the
/// public operations document; nothing here is ever used for control flow on
/// the happy path.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation (bad Walsh index,
    /// dlc > 8, time before the epoch, and similar).
    #[error("domain error: {0}")]
    Domain(String),

    /// A slave clock was asked for the time before its first synchronization.
    #[error("slave clock has never been synchronized")]
    NotSynchronized,

    /// A bus transaction was started while the previous one was still on the
    /// wire. The master serializes traffic; hitting this is a scheduling bug.
    #[error("bus busy until {free_at_ns} ns, poll requested at {at_ns} ns")]
    BusBusy { at_ns: u64, free_at_ns: u64 },

    /// A device did not answer within the response timeout.
    #[error("response timeout polling {0}")]
    Timeout(String),

    /// The configuration database failed validation.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    /// Lookup of a device or property name failed.
    #[error("name not found: {0}")]
    NameNotFound(String),

    /// An API was used against its contract (stale handle, double release).
    #[error("usage error: {0}")]
    Usage(String),

    /// A value does not fit the property's declared range or encoding.
    #[error("out of range: {0}")]
    Range(String),

    /// A timed command arrived with less than the minimum lead.
    #[error("command for event {execute_event} submitted at event {now_event}: lead {lead} below minimum {min_lead}")]
    Late {
        execute_event: u64,
        now_event: u64,
        lead: u64,
        min_lead: u64,
    },

    /// A timed command targets an event that is not in the future.
    #[error("command targets event {execute_event} which is not after current event {now_event}")]
    Past { execute_event: u64, now_event: u64 },

    /// Scheduled bus traffic exceeds the period or attach-time budget.
    #[error("overcommitted: {0}")]
    Overcommitted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
