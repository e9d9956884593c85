use super::{plan_naive, AllocationRequest, PlannerError};

/// Largest instance [`optimal_plan_bruteforce`] accepts.
pub const BRUTEFORCE_LIMIT: usize = 6;

/// Smallest achievable arena size (alignment 1) by exhaustive search.
///
/// Any valid placement can be pushed down until every region rests on 0 or
/// on the end of a lifetime-overlapping region without growing the arena.
/// Such a placement, listed by ascending offset, is found by trying every
/// request order with those candidate offsets, so the search is exact.
pub fn optimal_plan_bruteforce(requests: &[AllocationRequest]) -> Result<usize, PlannerError> {
    if requests.len() > BRUTEFORCE_LIMIT {
        return Err(PlannerError::TooLarge(requests.len()));
    }
    let mut search = Search {
        requests,
        placed: Vec::with_capacity(requests.len()),
        used: vec![false; requests.len()],
        best: plan_naive(requests, 1).arena_size,
    };
    search.run(0, 0);
    Ok(search.best)
}

struct Search<'a> {
    requests: &'a [AllocationRequest],
    placed: Vec<(usize, usize)>,
    used: Vec<bool>,
    best: usize,
}

impl Search<'_> {
    fn run(&mut self, min_offset: usize, size_so_far: usize) {
        if size_so_far >= self.best {
            return;
        }
        if self.placed.len() == self.requests.len() {
            self.best = size_so_far;
            return;
        }
        for i in 0..self.requests.len() {
            if self.used[i] {
                continue;
            }
            let r = self.requests[i];
            let mut candidates: Vec<usize> = std::iter::once(0)
                .chain(self.placed.iter().filter(|&&(j, _)| self.requests[j].lifetime_overlaps(&r)).map(|&(j, o)| o + self.requests[j].size))
                .filter(|&o| o >= min_offset)
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            for offset in candidates {
                let clash = self.placed.iter().any(|&(j, o)| {
                    let p = &self.requests[j];
                    p.lifetime_overlaps(&r) && o < offset + r.size && offset < o + p.size
                });
                if clash {
                    continue;
                }
                self.used[i] = true;
                self.placed.push((i, offset));
                self.run(offset, size_so_far.max(offset + r.size));
                self.placed.pop();
                self.used[i] = false;
            }
        }
    }
}
