//! Small shared infrastructure: rate limiting, digests, date parsing.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

/// Process-wide limiter serializing outbound calls to a configured
/// requests-per-second budget. `acquire` blocks until the next slot.
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(requests_per_sec: f64) -> Self {
        let min_interval = if requests_per_sec <= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(1.0 / requests_per_sec)
        };
        Self { min_interval, next_slot: Mutex::new(Instant::now()) }
    }

    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait_until = {
            let mut slot = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let at = (*slot).max(now);
            *slot = at + self.min_interval;
            at
        };
        let now = Instant::now();
        if wait_until > now {
            std::thread::sleep(wait_until - now);
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short stable id fragment for derived record ids.
pub fn short_digest(text: &str) -> String {
    sha256_hex(text.as_bytes())[..12].to_string()
}

/// Accepts ISO-8601 (`2020-03-06`) or M/D/YYYY (`3/6/2020`).
pub fn parse_flexible_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(raw, "%m/%d/%Y"))
        .ok()
}

/// Render as M/D/YYYY without zero padding, the style used in prompts.
pub fn format_prompt_date(date: NaiveDate) -> String {
    date.format("%-m/%-d/%Y").to_string()
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dates_parse_both_formats() {
        let d = NaiveDate::from_ymd_opt(2020, 3, 6).unwrap();
        assert_eq!(parse_flexible_date("2020-03-06"), Some(d));
        assert_eq!(parse_flexible_date("3/6/2020"), Some(d));
        assert_eq!(parse_flexible_date("03/06/2020"), Some(d));
        assert_eq!(parse_flexible_date("garbage"), None);
    }

    #[test]
    fn prompt_date_has_no_padding() {
        let d = NaiveDate::from_ymd_opt(2020, 3, 6).unwrap();
        assert_eq!(format_prompt_date(d), "3/6/2020");
    }

    #[test]
    fn unlimited_rate_limiter_does_not_block() {
        let limiter = RateLimiter::per_second(0.0);
        let t0 = Instant::now();
        for _ in 0..100 {
            limiter.acquire();
        }
        assert!(t0.elapsed() < Duration::from_millis(50));
    }
}
