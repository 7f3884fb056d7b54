use crate::clock::Clock;
use crate::config::UserCredential;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub token: String,
    pub expires_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("invalid credentials")]
    BadCredentials,
    #[error("missing or unknown token")]
    UnknownToken,
    #[error("token expired")]
    Expired,
}

/// Bearer tokens issued against provisioned credentials. Tokens live in memory.
pub struct Authenticator {
    secrets: HashMap<String, String>,
    ttl_s: f64,
    clock: Arc<dyn Clock>,
    issued: Mutex<HashMap<String, (String, f64)>>,
}

impl Authenticator {
    pub fn new(credentials: &[UserCredential], ttl_s: f64, clock: Arc<dyn Clock>) -> Self {
        Self {
            secrets: credentials.iter().map(|c| (c.user.clone(), c.secret.clone())).collect(),
            ttl_s,
            clock,
            issued: Mutex::new(HashMap::new()),
        }
    }

    pub fn login(&self, user: &str, secret: &str) -> Result<Token, AuthError> {
        match self.secrets.get(user) {
            Some(s) if s == secret => {}
            _ => return Err(AuthError::BadCredentials),
        }
        let token = uuid::Uuid::new_v4().simple().to_string();
        let expires_at = self.clock.now() + self.ttl_s;
        self.issued
            .lock()
            .unwrap()
            .insert(token.clone(), (user.to_string(), expires_at));
        Ok(Token { token, expires_at })
    }

    /// The user a token belongs to. Expired tokens are forgotten.
    pub fn verify(&self, token: &str) -> Result<String, AuthError> {
        let mut issued = self.issued.lock().unwrap();
        let (user, expires_at) = issued.get(token).cloned().ok_or(AuthError::UnknownToken)?;
        if self.clock.now() >= expires_at {
            issued.remove(token);
            return Err(AuthError::Expired);
        }
        Ok(user)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    #[test]
    fn login_verify_expire() {
        let clock = Arc::new(ManualClock::new(100.0));
        let creds = [UserCredential {
            user: "alice".into(),
            secret: "pw".into(),
        }];
        let auth = Authenticator::new(&creds, 60.0, clock.clone());
        assert_eq!(auth.login("alice", "nope"), Err(AuthError::BadCredentials));
        assert_eq!(auth.login("bob", "pw"), Err(AuthError::BadCredentials));
        let t = auth.login("alice", "pw").unwrap();
        assert_eq!(t.expires_at, 160.0);
        assert_eq!(auth.verify(&t.token).unwrap(), "alice");
        clock.advance(59.9);
        assert!(auth.verify(&t.token).is_ok());
        clock.advance(0.1);
        assert_eq!(auth.verify(&t.token), Err(AuthError::Expired));
        assert_eq!(auth.verify(&t.token), Err(AuthError::UnknownToken));
    }
}
