//! Two-stack arena bookkeeping.
//!
//! [`Arena`] deals purely in byte offsets: the head stack grows up from 0 for
//! function-lifetime (nonpersistent) data, the tail stack grows down from
//! `capacity` for interpreter-lifetime (persistent) data, and temporary
//! allocations live between the two. [`TensorArena`] pairs the bookkeeping
//! with the backing bytes so several interpreters can share one region.

use std::cell::{Ref, RefCell, RefMut};

use thiserror::Error;

/// Smallest capacity accepted by [`Arena::new`].
pub const MIN_CAPACITY: usize = 32;

/// Alignment used for all interpreter-initiated allocations.
pub const DEFAULT_ALIGN: usize = 16;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum ArenaError {
    #[error("arena capacity {capacity} is below the minimum of {MIN_CAPACITY} bytes")]
    CapacityTooSmall { capacity: usize },
    #[error("arena exhausted: requested {requested} bytes, {available} available")]
    ArenaExhausted { requested: usize, available: usize },
    #[error("head/tail allocation attempted with {outstanding} outstanding temp allocations")]
    TempOutstanding { outstanding: usize },
    #[error("cannot reset head to {to}, head is at {head}")]
    BadReset { to: usize, head: usize },
    #[error("allocation size must be positive")]
    ZeroSize,
    #[error("alignment {0} is not a power of two")]
    BadAlignment(usize),
    #[error("temp handle belongs to a generation that was reset")]
    StaleTemp,
}

/// Persistent/nonpersistent byte totals of an arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArenaUsage {
    pub persistent_bytes: usize,
    pub nonpersistent_bytes: usize,
    pub temp_high_water: usize,
}

/// Proof of a live temp allocation; invalidated by [`Arena::reset_temps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempHandle {
    generation: u64,
    pub offset: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arena {
    capacity: usize,
    head: usize,
    tail: usize,
    temp_cursor: usize,
    temp_outstanding: usize,
    head_high_water: usize,
    temp_high_water: usize,
    generation: u64,
    mutations: u64,
}

fn check_align(align: usize) -> Result<(), ArenaError> {
    if align.is_power_of_two() {
        Ok(())
    } else {
        Err(ArenaError::BadAlignment(align))
    }
}

fn align_up(value: usize, align: usize) -> Option<usize> {
    value.checked_add(align - 1).map(|v| v & !(align - 1))
}

fn align_down(value: usize, align: usize) -> usize {
    value & !(align - 1)
}

impl Arena {
    pub fn new(capacity: usize) -> Result<Self, ArenaError> {
        if capacity < MIN_CAPACITY {
            return Err(ArenaError::CapacityTooSmall { capacity });
        }
        Ok(Arena {
            capacity,
            head: 0,
            tail: capacity,
            temp_cursor: 0,
            temp_outstanding: 0,
            head_high_water: 0,
            temp_high_water: 0,
            generation: 0,
            mutations: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn tail(&self) -> usize {
        self.tail
    }

    pub fn temp_cursor(&self) -> usize {
        self.temp_cursor
    }

    pub fn temp_outstanding(&self) -> usize {
        self.temp_outstanding
    }

    /// Number of successful state changes since creation.
    pub fn mutations(&self) -> u64 {
        self.mutations
    }

    fn no_temps(&self) -> Result<(), ArenaError> {
        match self.temp_outstanding {
            0 => Ok(()),
            outstanding => Err(ArenaError::TempOutstanding { outstanding }),
        }
    }

    /// Allocates `size` bytes from the top of the arena for its whole lifetime.
    pub fn alloc_tail(&mut self, size: usize, align: usize) -> Result<usize, ArenaError> {
        check_align(align)?;
        if size == 0 {
            return Err(ArenaError::ZeroSize);
        }
        self.no_temps()?;
        let exhausted = ArenaError::ArenaExhausted { requested: size, available: self.tail - self.head };
        let start = self.tail.checked_sub(size).ok_or(exhausted)?;
        let offset = align_down(start, align);
        if offset < self.head {
            return Err(exhausted);
        }
        self.tail = offset;
        self.temp_cursor = self.head;
        self.mutations += 1;
        Ok(offset)
    }

    /// Allocates `size` bytes from the bottom of the arena.
    pub fn alloc_head(&mut self, size: usize, align: usize) -> Result<usize, ArenaError> {
        check_align(align)?;
        if size == 0 {
            return Err(ArenaError::ZeroSize);
        }
        self.no_temps()?;
        let available = self.tail - self.head;
        let offset = align_up(self.head, align).ok_or(ArenaError::ArenaExhausted { requested: size, available })?;
        match offset.checked_add(size) {
            Some(end) if end <= self.tail => {
                self.head = end;
                self.temp_cursor = end;
                self.head_high_water = self.head_high_water.max(end);
                self.mutations += 1;
                Ok(offset)
            }
            _ => Err(ArenaError::ArenaExhausted { requested: size, available }),
        }
    }

    /// Allocates a temporary block between the stacks.
    pub fn alloc_temp(&mut self, size: usize, align: usize) -> Result<TempHandle, ArenaError> {
        check_align(align)?;
        if size == 0 {
            return Err(ArenaError::ZeroSize);
        }
        let available = self.tail - self.temp_cursor;
        let offset = align_up(self.temp_cursor, align).ok_or(ArenaError::ArenaExhausted { requested: size, available })?;
        match offset.checked_add(size) {
            Some(end) if end <= self.tail => {
                self.temp_cursor = end;
                self.temp_outstanding += 1;
                self.temp_high_water = self.temp_high_water.max(end - self.head);
                self.mutations += 1;
                Ok(TempHandle { generation: self.generation, offset, size })
            }
            _ => Err(ArenaError::ArenaExhausted { requested: size, available }),
        }
    }

    /// Whether `handle` is still valid.
    pub fn check_temp(&self, handle: TempHandle) -> Result<(), ArenaError> {
        if handle.generation == self.generation && self.temp_outstanding > 0 {
            Ok(())
        } else {
            Err(ArenaError::StaleTemp)
        }
    }

    /// Releases every temp allocation and invalidates their handles.
    pub fn reset_temps(&mut self) {
        self.temp_cursor = self.head;
        self.temp_outstanding = 0;
        self.generation += 1;
        self.mutations += 1;
    }

    /// Pops the head stack back to `to`. The high-water mark is retained.
    pub fn reset_head(&mut self, to: usize) -> Result<(), ArenaError> {
        if to > self.head {
            return Err(ArenaError::BadReset { to, head: self.head });
        }
        self.no_temps()?;
        self.head = to;
        self.temp_cursor = to;
        self.mutations += 1;
        Ok(())
    }

    pub fn usage(&self) -> ArenaUsage {
        ArenaUsage {
            persistent_bytes: self.capacity - self.tail,
            nonpersistent_bytes: self.head_high_water,
            temp_high_water: self.temp_high_water,
        }
    }
}

/// An [`Arena`] together with the bytes it manages.
///
/// Interpreters borrow a `TensorArena` by shared reference; bookkeeping and
/// memory are behind `RefCell`s, so tenants sharing an arena must be used
/// from one thread and one at a time.
#[derive(Debug)]
pub struct TensorArena {
    state: RefCell<Arena>,
    memory: RefCell<Box<[u8]>>,
}

impl TensorArena {
    pub fn new(capacity: usize) -> Result<Self, ArenaError> {
        let state = Arena::new(capacity)?;
        Ok(TensorArena { state: RefCell::new(state), memory: RefCell::new(vec![0u8; capacity].into_boxed_slice()) })
    }

    pub fn capacity(&self) -> usize {
        self.state.borrow().capacity()
    }

    pub fn usage(&self) -> ArenaUsage {
        self.state.borrow().usage()
    }

    pub fn mutations(&self) -> u64 {
        self.state.borrow().mutations()
    }

    /// A snapshot of the bookkeeping.
    pub fn state(&self) -> Arena {
        self.state.borrow().clone()
    }

    pub(crate) fn state_mut(&self) -> RefMut<'_, Arena> {
        self.state.borrow_mut()
    }

    /// The backing bytes, unless a mutable view is outstanding.
    pub fn memory_checked(&self) -> Option<Ref<'_, Box<[u8]>>> {
        self.memory.try_borrow().ok()
    }

    pub(crate) fn memory_mut_checked(&self) -> Option<RefMut<'_, Box<[u8]>>> {
        self.memory.try_borrow_mut().ok()
    }
}
