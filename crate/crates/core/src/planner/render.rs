use std::fmt::Write;

use super::{AllocationRequest, MemoryPlan};

const MAX_ROWS: usize = 32;
const SYMBOLS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

fn symbol(id: usize) -> char {
    SYMBOLS[id % SYMBOLS.len()] as char
}

/// Draws a plan as an occupancy chart: time (op index) runs left to right,
/// arena offset bottom to top.
///
/// Each row covers a band of `ceil(arena_size / 32)` bytes, so charts are at
/// most 32 rows tall. A cell shows the symbol of the single buffer live in
/// that band at that op, `#` when several are, and `.` when the band is free.
pub fn render_plan(requests: &[AllocationRequest], plan: &MemoryPlan) -> String {
    let mut out = format!("arena_size: {}\n", plan.arena_size);
    if plan.arena_size == 0 {
        return out;
    }
    let band = plan.arena_size.div_ceil(MAX_ROWS);
    let rows = plan.arena_size.div_ceil(band);
    let columns = requests.iter().map(|r| r.last_use + 1).max().unwrap_or(0);
    let placed: Vec<(&AllocationRequest, usize)> =
        requests.iter().filter_map(|r| plan.offset_of(r.id).map(|o| (r, o))).collect();
    let label_width = ((rows - 1) * band).to_string().len();

    for row in (0..rows).rev() {
        let (lo, hi) = (row * band, (row + 1) * band);
        let _ = write!(out, "{lo:>label_width$} |");
        for op in 0..columns {
            let mut live = placed.iter().filter(|(r, o)| r.is_live_at(op) && *o < hi && lo < o + r.size);
            let cell = match (live.next(), live.next()) {
                (None, _) => '.',
                (Some((r, _)), None) => symbol(r.id),
                _ => '#',
            };
            out.push(cell);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "{:>label_width$} +{}", "", "-".repeat(columns));
    let _ = writeln!(out, "bytes per row: {band}");
    let mut legend = placed;
    legend.sort_by_key(|(r, _)| r.id);
    for (r, offset) in legend {
        let _ = writeln!(
            out,
            "{}: buffer {} size {} at {}..{} ops {}..{}",
            symbol(r.id),
            r.id,
            r.size,
            offset,
            offset + r.size,
            r.first_use,
            r.last_use
        );
    }
    out
}
