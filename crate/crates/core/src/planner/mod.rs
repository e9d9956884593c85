//! Offset assignment for nonpersistent buffers.
//!
//! A buffer is an [`AllocationRequest`]: a size plus an inclusive range of op
//! indices during which it must stay intact. Two requests may share bytes
//! only if their lifetimes are disjoint.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

mod bruteforce;
mod render;

pub use bruteforce::{optimal_plan_bruteforce, BRUTEFORCE_LIMIT};
pub use render::render_plan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AllocationRequest {
    pub id: usize,
    pub size: usize,
    pub first_use: usize,
    pub last_use: usize,
}

impl AllocationRequest {
    pub fn new(id: usize, size: usize, first_use: usize, last_use: usize) -> Self {
        AllocationRequest { id, size, first_use, last_use }
    }

    pub fn lifetime_overlaps(&self, other: &AllocationRequest) -> bool {
        self.first_use <= other.last_use && other.first_use <= self.last_use
    }

    pub fn is_live_at(&self, op: usize) -> bool {
        (self.first_use..=self.last_use).contains(&op)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryPlan {
    /// Request id to byte offset.
    pub offsets: BTreeMap<usize, usize>,
    pub arena_size: usize,
    pub alignment: usize,
}

impl MemoryPlan {
    pub fn offset_of(&self, id: usize) -> Option<usize> {
        self.offsets.get(&id).copied()
    }

    fn from_offsets(requests: &[AllocationRequest], offsets: BTreeMap<usize, usize>, alignment: usize) -> Self {
        let arena_size = requests.iter().map(|r| offsets.get(&r.id).map_or(0, |o| o + r.size)).max().unwrap_or(0);
        MemoryPlan { offsets, arena_size, alignment }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    Overlap { a: usize, b: usize },
    Misaligned { id: usize, offset: usize },
    OutOfArena { id: usize },
    Missing { id: usize },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::Overlap { a, b } => write!(f, "overlap {a},{b}"),
            PlanViolation::Misaligned { id, offset } => write!(f, "misaligned {id} at {offset}"),
            PlanViolation::OutOfArena { id } => write!(f, "out of arena {id}"),
            PlanViolation::Missing { id } => write!(f, "missing {id}"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PlannerError {
    #[error("offline plan blob is malformed: {0}")]
    BlobMalformed(String),
    #[error("offline plan has {got} offsets for {expected} buffers")]
    CountMismatch { expected: usize, got: usize },
    #[error("plan is invalid: {}", list(.0))]
    PlanInvalid(Vec<PlanViolation>),
    #[error("brute force is limited to {BRUTEFORCE_LIMIT} requests, got {0}")]
    TooLarge(usize),
}

fn list(violations: &[PlanViolation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn align_up(value: usize, alignment: usize) -> usize {
    value.div_ceil(alignment) * alignment
}

fn by_id(requests: &[AllocationRequest]) -> Vec<&AllocationRequest> {
    let mut sorted: Vec<_> = requests.iter().collect();
    sorted.sort_by_key(|r| r.id);
    sorted
}

/// Gives every request its own region, in id order.
pub fn plan_naive(requests: &[AllocationRequest], alignment: usize) -> MemoryPlan {
    let alignment = alignment.max(1);
    let mut offsets = BTreeMap::new();
    let mut end = 0;
    for r in by_id(requests) {
        let offset = align_up(end, alignment);
        offsets.insert(r.id, offset);
        end = offset + r.size;
    }
    MemoryPlan::from_offsets(requests, offsets, alignment)
}

/// Greedy first-fit decreasing.
///
/// Requests are placed largest first (ties: earlier `first_use`, then lower
/// id), each at the lowest aligned offset that avoids every already placed
/// request whose lifetime overlaps its own.
pub fn plan_greedy(requests: &[AllocationRequest], alignment: usize) -> MemoryPlan {
    let alignment = alignment.max(1);
    let mut order: Vec<&AllocationRequest> = requests.iter().collect();
    order.sort_by(|a, b| b.size.cmp(&a.size).then(a.first_use.cmp(&b.first_use)).then(a.id.cmp(&b.id)));

    let mut placed: Vec<(usize, usize, &AllocationRequest)> = Vec::with_capacity(requests.len());
    let mut conflicts: Vec<(usize, usize)> = Vec::new();
    let mut offsets = BTreeMap::new();
    for r in order {
        conflicts.clear();
        conflicts.extend(placed.iter().filter(|(_, _, p)| p.lifetime_overlaps(r)).map(|&(o, s, _)| (o, s)));
        conflicts.sort_unstable();
        let mut candidate = 0;
        for &(offset, size) in &conflicts {
            if candidate + r.size <= offset {
                break;
            }
            candidate = candidate.max(align_up(offset + size, alignment));
        }
        placed.push((candidate, r.size, r));
        offsets.insert(r.id, candidate);
    }
    MemoryPlan::from_offsets(requests, offsets, alignment)
}

/// Uses offsets decoded from `blob` verbatim, in request-id order.
pub fn plan_offline(requests: &[AllocationRequest], blob: &[u8], alignment: usize) -> Result<MemoryPlan, PlannerError> {
    let decoded = decode_offsets(blob)?;
    if decoded.len() != requests.len() {
        return Err(PlannerError::CountMismatch { expected: requests.len(), got: decoded.len() });
    }
    let offsets = by_id(requests).iter().zip(&decoded).map(|(r, &o)| (r.id, o as usize)).collect();
    let plan = MemoryPlan::from_offsets(requests, offsets, alignment.max(1));
    let violations = validate_plan(requests, &plan);
    if violations.is_empty() {
        Ok(plan)
    } else {
        Err(PlannerError::PlanInvalid(violations))
    }
}

/// Lists every way `plan` fails to be a safe placement of `requests`.
pub fn validate_plan(requests: &[AllocationRequest], plan: &MemoryPlan) -> Vec<PlanViolation> {
    let mut violations = Vec::new();
    let alignment = plan.alignment.max(1);
    let mut placed = Vec::with_capacity(requests.len());
    for r in by_id(requests) {
        let Some(offset) = plan.offset_of(r.id) else {
            violations.push(PlanViolation::Missing { id: r.id });
            continue;
        };
        if offset % alignment != 0 {
            violations.push(PlanViolation::Misaligned { id: r.id, offset });
        }
        if offset.checked_add(r.size).is_none_or(|end| end > plan.arena_size) {
            violations.push(PlanViolation::OutOfArena { id: r.id });
        }
        placed.push((r, offset));
    }
    for (i, &(a, oa)) in placed.iter().enumerate() {
        for &(b, ob) in &placed[i + 1..] {
            let bytes_intersect = oa < ob.saturating_add(b.size) && ob < oa.saturating_add(a.size);
            if a.lifetime_overlaps(b) && bytes_intersect {
                violations.push(PlanViolation::Overlap { a: a.id, b: b.id });
            }
        }
    }
    violations
}

/// Encodes an offline plan blob: u32 count followed by count u32 offsets,
/// little-endian.
pub fn encode_offsets(offsets: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * offsets.len());
    out.extend_from_slice(&(offsets.len() as u32).to_le_bytes());
    for o in offsets {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out
}

pub fn decode_offsets(blob: &[u8]) -> Result<Vec<u32>, PlannerError> {
    let word = |i: usize| u32::from_le_bytes([blob[i], blob[i + 1], blob[i + 2], blob[i + 3]]);
    if blob.len() < 4 {
        return Err(PlannerError::BlobMalformed(format!("{} bytes is shorter than the count field", blob.len())));
    }
    let count = word(0) as usize;
    let expected = count.checked_mul(4).and_then(|n| n.checked_add(4));
    if expected != Some(blob.len()) {
        return Err(PlannerError::BlobMalformed(format!("count {count} does not match {} blob bytes", blob.len())));
    }
    Ok((0..count).map(|i| word(4 + 4 * i)).collect())
}

/// The offsets of `plan` in request-id order, ready for [`encode_offsets`].
pub fn plan_offsets(requests: &[AllocationRequest], plan: &MemoryPlan) -> Vec<u32> {
    by_id(requests).iter().map(|r| plan.offset_of(r.id).unwrap_or(0) as u32).collect()
}
