use std::fmt;

/// A failed command and its exit code: 1 for user errors, 2 for internal ones.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }

    pub fn user(msg: impl Into<String>) -> Self {
        Failure::User(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::User(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ldstyle::Error> for Failure {
    fn from(e: ldstyle::Error) -> Self {
        if e.is_user_error() {
            Failure::User(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
