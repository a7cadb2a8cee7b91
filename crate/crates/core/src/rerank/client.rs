//! Chat-completion client abstraction: retry/budget wrapper, deterministic
//! mocks, and transcript replay.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::UserId;
use crate::error::{Error, Result};
use crate::rerank::matching::normalize_title;
use crate::rerank::prompt::{ChatMessagePair, extract_candidate_lines};
use crate::rng;

/// Evaluation-side request context. The harness consumes ground truth by
/// design (see the rerank gate); mock clients read it from here, real
/// backends ignore it.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub user_id: &'a UserId,
    pub ground_truth_title: Option<&'a str>,
}

/// A chat-completion backend returning the assistant text verbatim.
pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &ChatMessagePair, ctx: &EvalContext<'_>) -> Result<String>;
    fn name(&self) -> &'static str;
}

/// Shared hard cap on outbound requests.
#[derive(Debug)]
pub struct RequestBudget {
    remaining: AtomicI64,
}

impl RequestBudget {
    pub fn new(limit: i64) -> Self {
        RequestBudget {
            remaining: AtomicI64::new(limit),
        }
    }

    /// Effectively unlimited.
    pub fn unlimited() -> Self {
        Self::new(i64::MAX)
    }

    pub fn remaining(&self) -> i64 {
        self.remaining.load(Ordering::SeqCst)
    }

    /// Takes one unit or fails with `BudgetExhausted`.
    pub fn take(&self) -> Result<()> {
        let prev = self.remaining.fetch_sub(1, Ordering::SeqCst);
        if prev <= 0 {
            self.remaining.fetch_add(1, Ordering::SeqCst);
            return Err(Error::BudgetExhausted);
        }
        Ok(())
    }
}

/// Retry knobs for [`chat_complete`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_base_ms: 200,
        }
    }
}

fn is_transient(err: &Error) -> bool {
    match err {
        Error::Transport(_) => true,
        Error::Protocol { status, .. } => *status == 429 || (500..=599).contains(status),
        _ => false,
    }
}

/// Calls the client with budget accounting and exponential backoff on
/// transient failures. Every attempt, including retries, consumes one
/// budget unit.
pub fn chat_complete(
    client: &dyn ChatClient,
    messages: &ChatMessagePair,
    ctx: &EvalContext<'_>,
    retry: &RetryPolicy,
    budget: &RequestBudget,
) -> Result<String> {
    let mut attempt = 0;
    loop {
        budget.take()?;
        match client.complete(messages, ctx) {
            Ok(text) => return Ok(text),
            Err(err) if is_transient(&err) && attempt < retry.max_retries => {
                let backoff = retry.backoff_base_ms.saturating_mul(1 << attempt);
                if backoff > 0 {
                    std::thread::sleep(Duration::from_millis(backoff));
                }
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

/// Hex SHA-256 of the canonical JSON encoding of the message pair; the key
/// used by the transcript cache.
pub fn request_hash(messages: &ChatMessagePair) -> String {
    let canonical = serde_json::to_vec(messages).expect("messages always serialize");
    let digest = Sha256::digest(&canonical);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Returns the candidate pool in its original order, like a model that
/// obeys the format instructions but never reorders anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityClient;

impl ChatClient for IdentityClient {
    fn complete(&self, messages: &ChatMessagePair, _ctx: &EvalContext<'_>) -> Result<String> {
        let lines = extract_candidate_lines(&messages.user);
        Ok(lines
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// Test-only upper bound: moves the ground-truth title to the front of the
/// pool and keeps the rest in order.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleClient;

impl ChatClient for OracleClient {
    fn complete(&self, messages: &ChatMessagePair, ctx: &EvalContext<'_>) -> Result<String> {
        let lines = extract_candidate_lines(&messages.user);
        let mut ordered: Vec<String> = Vec::with_capacity(lines.len());
        if let Some(gt) = ctx.ground_truth_title {
            let want = normalize_title(gt);
            if let Some(hit) = lines.iter().position(|l| normalize_title(l) == want) {
                ordered.push(lines[hit].clone());
                ordered.extend(lines.iter().enumerate().filter_map(|(i, l)| {
                    (i != hit).then(|| l.clone())
                }));
            }
        }
        if ordered.is_empty() {
            ordered = lines;
        }
        Ok(ordered
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Hostile mock: answers with invented titles mixed into a shuffled subset
/// of real candidates, sometimes pure prose. Exists to exercise the
/// closed-world guarantee.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialClient {
    pub seed: u64,
}

impl ChatClient for AdversarialClient {
    fn complete(&self, messages: &ChatMessagePair, _ctx: &EvalContext<'_>) -> Result<String> {
        use rand::Rng;
        use rand::seq::SliceRandom;
        let lines = extract_candidate_lines(&messages.user);
        let per_request = rng::derive_seed(
            self.seed,
            &[crate::text_retriever::fnv1a64(messages.user.as_bytes())],
        );
        let mut stream = rng::rng_from(per_request, &[]);
        if stream.random_range(0..5) == 0 {
            return Ok("Certainly! I think you would enjoy something new entirely.".to_string());
        }
        let mut kept: Vec<String> = lines
            .into_iter()
            .filter(|_| stream.random_range(0..4) != 0)
            .collect();
        kept.shuffle(&mut stream);
        let fakes = stream.random_range(1..4);
        for f in 0..fakes {
            let pos = stream.random_range(0..=kept.len());
            kept.insert(
                pos,
                format!("Totally Invented Saga {} ({})", f + 1, 1900 + f),
            );
        }
        Ok(kept
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn name(&self) -> &'static str {
        "adversarial"
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptRecord {
    hash: String,
    response: String,
}

/// Replays recorded responses keyed by [`request_hash`]; a missing entry is
/// a transport error so the policy falls back to stage 1.
#[derive(Debug, Default)]
pub struct TranscriptClient {
    entries: HashMap<String, String>,
}

impl TranscriptClient {
    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&display, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TranscriptRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: display.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.insert(record.hash, record.response);
        }
        Ok(TranscriptClient { entries })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        TranscriptClient {
            entries: pairs.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatClient for TranscriptClient {
    fn complete(&self, messages: &ChatMessagePair, _ctx: &EvalContext<'_>) -> Result<String> {
        let hash = request_hash(messages);
        self.entries
            .get(&hash)
            .cloned()
            .ok_or_else(|| Error::Transport(format!("no transcript entry for request {hash}")))
    }

    fn name(&self) -> &'static str {
        "transcript"
    }
}

/// Decorator that appends `{hash, response}` JSON lines for every successful
/// completion, producing a transcript replayable by [`TranscriptClient`].
pub struct RecordingClient<C> {
    inner: C,
    sink: Mutex<BufWriter<File>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn create(inner: C, path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(&display, e))?;
        Ok(RecordingClient {
            inner,
            sink: Mutex::new(BufWriter::new(file)),
        })
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, messages: &ChatMessagePair, ctx: &EvalContext<'_>) -> Result<String> {
        let response = self.inner.complete(messages, ctx)?;
        let record = TranscriptRecord {
            hash: request_hash(messages),
            response: response.clone(),
        };
        let mut sink = self.sink.lock().expect("transcript sink poisoned");
        serde_json::to_writer(&mut *sink, &record)?;
        sink.write_all(b"\n")
            .and_then(|_| sink.flush())
            .map_err(|e| Error::Transport(format!("transcript write failed: {e}")))?;
        Ok(response)
    }

    fn name(&self) -> &'static str {
        "recording"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn sample_messages() -> ChatMessagePair {
        ChatMessagePair {
            system: "You are a helpful assistant, helping.".to_string(),
            user: "I've browsed the following items in the past in order:\nA.\n\
                   There is also candidate pool:\n1. First Film\n2. Second Story\n3. Third Tale\n\
                   Please rank."
                .to_string(),
        }
    }

    fn ctx<'a>(user: &'a UserId, gt: Option<&'a str>) -> EvalContext<'a> {
        EvalContext {
            user_id: user,
            ground_truth_title: gt,
        }
    }

    #[test]
    fn identity_client_keeps_pool_order() {
        let user = UserId::new("u");
        let out = IdentityClient
            .complete(&sample_messages(), &ctx(&user, None))
            .unwrap();
        assert_eq!(out, "1. First Film\n2. Second Story\n3. Third Tale");
    }

    #[test]
    fn oracle_client_moves_ground_truth_first() {
        let user = UserId::new("u");
        let out = OracleClient
            .complete(&sample_messages(), &ctx(&user, Some("Second Story")))
            .unwrap();
        assert_eq!(out, "1. Second Story\n2. First Film\n3. Third Tale");
    }

    #[test]
    fn oracle_without_ground_truth_degrades_to_identity() {
        let user = UserId::new("u");
        let out = OracleClient
            .complete(&sample_messages(), &ctx(&user, Some("Unlisted")))
            .unwrap();
        assert_eq!(out, "1. First Film\n2. Second Story\n3. Third Tale");
    }

    #[test]
    fn budget_exhausts_and_stops() {
        let budget = RequestBudget::new(2);
        assert!(budget.take().is_ok());
        assert!(budget.take().is_ok());
        assert!(matches!(budget.take(), Err(Error::BudgetExhausted)));
        assert_eq!(budget.remaining(), 0);
    }

    struct Flaky {
        failures: AtomicU32,
        calls: AtomicU32,
    }

    impl ChatClient for Flaky {
        fn complete(&self, _m: &ChatMessagePair, _c: &EvalContext<'_>) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::Transport("connection reset".to_string()));
            }
            Ok("ok".to_string())
        }
        fn name(&self) -> &'static str {
            "flaky"
        }
    }

    #[test]
    fn transient_failures_are_retried_within_the_budget() {
        let client = Flaky {
            failures: AtomicU32::new(2),
            calls: AtomicU32::new(0),
        };
        let retry = RetryPolicy {
            max_retries: 3,
            backoff_base_ms: 0,
        };
        let budget = RequestBudget::new(10);
        let user = UserId::new("u");
        let out = chat_complete(&client, &sample_messages(), &ctx(&user, None), &retry, &budget)
            .unwrap();
        assert_eq!(out, "ok");
        assert_eq!(client.calls.load(Ordering::SeqCst), 3);
        assert_eq!(budget.remaining(), 7);
    }

    #[test]
    fn retries_stop_at_max_and_budget_wins_over_retry() {
        let client = Flaky {
            failures: AtomicU32::new(100),
            calls: AtomicU32::new(0),
        };
        let retry = RetryPolicy {
            max_retries: 2,
            backoff_base_ms: 0,
        };
        let budget = RequestBudget::new(10);
        let user = UserId::new("u");
        let err = chat_complete(&client, &sample_messages(), &ctx(&user, None), &retry, &budget)
            .unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
        assert_eq!(client.calls.load(Ordering::SeqCst), 3); // 1 + 2 retries

        let tight = RequestBudget::new(1);
        let err =
            chat_complete(&client, &sample_messages(), &ctx(&user, None), &retry, &tight)
                .unwrap_err();
        // First attempt takes the only unit; the retry hits the budget.
        assert!(matches!(err, Error::BudgetExhausted));
    }

    #[test]
    fn non_transient_errors_do_not_retry() {
        struct Hard;
        impl ChatClient for Hard {
            fn complete(&self, _m: &ChatMessagePair, _c: &EvalContext<'_>) -> Result<String> {
                Err(Error::Protocol {
                    status: 401,
                    message: "unauthorized".to_string(),
                })
            }
            fn name(&self) -> &'static str {
                "hard"
            }
        }
        let retry = RetryPolicy {
            max_retries: 5,
            backoff_base_ms: 0,
        };
        let budget = RequestBudget::new(10);
        let user = UserId::new("u");
        let err = chat_complete(&Hard, &sample_messages(), &ctx(&user, None), &retry, &budget)
            .unwrap_err();
        assert!(matches!(err, Error::Protocol { status: 401, .. }));
        assert_eq!(budget.remaining(), 9);
    }

    #[test]
    fn transcript_records_and_replays_byte_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        let messages = sample_messages();
        let user = UserId::new("u");

        let recorder = RecordingClient::create(IdentityClient, &path).unwrap();
        let live = recorder.complete(&messages, &ctx(&user, None)).unwrap();
        drop(recorder);

        let replay = TranscriptClient::load(&path).unwrap();
        assert_eq!(replay.len(), 1);
        let replayed = replay.complete(&messages, &ctx(&user, None)).unwrap();
        assert_eq!(replayed, live);

        // A different request misses and reports transport failure.
        let mut other = messages.clone();
        other.user.push('!');
        assert!(matches!(
            replay.complete(&other, &ctx(&user, None)),
            Err(Error::Transport(_))
        ));
    }

    #[test]
    fn request_hash_is_stable_and_sensitive() {
        let a = request_hash(&sample_messages());
        let b = request_hash(&sample_messages());
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        let mut other = sample_messages();
        other.system.push('x');
        assert_ne!(a, request_hash(&other));
    }

    #[test]
    fn adversarial_client_is_deterministic_per_prompt() {
        let client = AdversarialClient { seed: 5 };
        let user = UserId::new("u");
        let a = client.complete(&sample_messages(), &ctx(&user, None)).unwrap();
        let b = client.complete(&sample_messages(), &ctx(&user, None)).unwrap();
        assert_eq!(a, b);
    }
}
