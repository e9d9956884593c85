//! Round-trip and mutation checks for the binary model format.

use std::panic::{catch_unwind, AssertUnwindSafe};

use mico::arena::TensorArena;
use mico::interpreter::{Interpreter, InterpreterError};
use mico::model::json::{model_from_json, model_to_json};
use mico::model::{parse_model, serialize_model, validate_model, FormatError};
use mico::registry::Registry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::random_models::random_model;

/// parse(serialize(m)) == m, serialize is stable, and the JSON form agrees.
pub fn check_identity(seed: u64) -> Result<(), String> {
    let model = random_model(seed);
    let bytes = serialize_model(&model).map_err(|e| format!("seed {seed}: serialize: {e}"))?;
    let parsed = parse_model(&bytes).map_err(|e| format!("seed {seed}: parse: {e}"))?;
    if parsed != model {
        return Err(format!("seed {seed}: parsed model differs"));
    }
    if serialize_model(&parsed).ok().as_deref() != Some(&bytes[..]) {
        return Err(format!("seed {seed}: reserialized bytes differ"));
    }
    let via_json = model_from_json(&model_to_json(&model)).map_err(|e| format!("seed {seed}: json: {e}"))?;
    if via_json != model {
        return Err(format!("seed {seed}: json round trip differs"));
    }
    Ok(())
}

/// How a mutated file fared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuzzOutcome {
    /// Still a valid model that allocates and invokes.
    Accepted,
    Rejected(&'static str),
}

fn category(e: &FormatError) -> &'static str {
    match e {
        FormatError::BadMagic(_) => "bad magic",
        FormatError::UnsupportedVersion(_) => "version",
        FormatError::TruncatedFile { .. } => "truncated",
        FormatError::IndexOutOfRange { .. } => "index",
        FormatError::MalformedRecord(_) => "malformed",
        FormatError::InvalidModel(_) => "invalid",
    }
}

fn mutate(rng: &mut ChaCha8Rng, bytes: &mut Vec<u8>) {
    for _ in 0..rng.random_range(1..=4) {
        if bytes.is_empty() {
            bytes.push(rng.random());
            continue;
        }
        let at = rng.random_range(0..bytes.len());
        match rng.random_range(0..6) {
            0 => bytes[at] ^= 1 << rng.random_range(0..8),
            1 => bytes[at] = rng.random(),
            2 => bytes.truncate(at),
            3 => bytes.insert(at, rng.random()),
            4 => {
                // a plausible-looking or huge little-endian count
                let v: u32 = if rng.random_bool(0.5) { rng.random_range(0..64) } else { rng.random() };
                for (i, b) in v.to_le_bytes().iter().enumerate() {
                    if let Some(slot) = bytes.get_mut(at + i) {
                        *slot = *b;
                    }
                }
            }
            _ => {
                bytes.remove(at);
            }
        }
    }
}

/// Mutates a serialized random model and loads it the way a host would:
/// parse, validate, then allocate and invoke if it passed. Panics and
/// uncategorized failures are errors.
pub fn fuzz_case(seed: u64) -> Result<FuzzOutcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes = serialize_model(&random_model(rng.random_range(0..64))).expect("valid model serializes");
    mutate(&mut rng, &mut bytes);
    let result = catch_unwind(AssertUnwindSafe(|| -> FuzzOutcome {
        let model = match parse_model(&bytes) {
            Ok(m) => m,
            Err(e) => return FuzzOutcome::Rejected(category(&e)),
        };
        if !validate_model(&model).is_valid() {
            return FuzzOutcome::Rejected("invalid");
        }
        let registry = Registry::reference();
        let arena = TensorArena::new(64 * 1024).expect("arena");
        let mut interp = Interpreter::new(&model, &registry, &arena).expect("validated model");
        match interp.allocate_tensors() {
            // huge shapes or an out-of-range stored plan
            Err(InterpreterError::ArenaExhausted { .. } | InterpreterError::Plan(_)) => FuzzOutcome::Rejected("allocate"),
            Err(e) => panic!("uncategorized allocation failure: {e}"),
            Ok(()) => {
                interp.invoke().expect("validated model invokes");
                FuzzOutcome::Accepted
            }
        }
    }));
    result.map_err(|_| format!("seed {seed}: loading panicked"))
}
