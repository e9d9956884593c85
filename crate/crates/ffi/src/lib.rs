//! C ABI over the mico runtime.
//!
//! Every object is an opaque heap handle created by a `*_create`/`*_load`
//! function and released by the matching `*_destroy`. An interpreter
//! borrows its model, registry and arena; those refuse destruction with
//! `MICO_STATUS_BUSY` until every interpreter using them is destroyed.
//!
//! Functions return a [`MicoStatus`]. On failure a description is available
//! from [`mico_last_error_message`] on the same thread.

use std::cell::{Cell, RefCell};
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mico::arena::TensorArena;
use mico::interpreter::{Interpreter, InterpreterError};
use mico::model::{parse_model, validate_model, Model, Opcode, TensorSpec, MAX_RANK};
use mico::registry::{reference_registration, Registry, RegistryError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicoStatus {
    Ok = 0,
    /// Null pointer, bad index or wrong buffer length.
    InvalidArgument = 1,
    /// The model failed to parse, validate or prepare.
    InvalidModel = 2,
    ArenaExhausted = 3,
    EvalFailed = 4,
    /// A stored offline plan is malformed or overlaps.
    PlanInvalid = 5,
    /// Wrong lifecycle phase, e.g. invoke before allocate.
    Phase = 6,
    /// The registry has no kernel for an op in the model.
    Unsupported = 7,
    /// The object is still in use.
    Busy = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// Parsed, validated model.
pub struct MicoModel {
    model: Model<'static>,
    users: Cell<usize>,
}

/// Set of available kernels.
pub struct MicoRegistry {
    registry: Registry,
    users: Cell<usize>,
}

/// Memory region shared by one or more interpreters.
pub struct MicoArena {
    arena: TensorArena,
    users: Cell<usize>,
}

pub struct MicoInterpreter {
    // borrows the three handles below; dropped before they are released
    interp: Interpreter<'static>,
    model: *const MicoModel,
    registry: *const MicoRegistry,
    arena: *const MicoArena,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MicoMemoryReport {
    pub persistent_bytes: usize,
    pub nonpersistent_bytes: usize,
    pub total_bytes: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MicoTensorInfo {
    /// 0 F32, 1 I8, 2 I32.
    pub dtype: u8,
    pub rank: u8,
    /// Unused trailing dims are 0.
    pub dims: [u32; 4],
    pub byte_size: usize,
    pub has_quant: bool,
    pub scale: f32,
    pub zero_point: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(MicoStatus, String);

impl From<InterpreterError> for Failure {
    fn from(e: InterpreterError) -> Self {
        let status = match &e {
            InterpreterError::InvalidModel(_) | InterpreterError::PrepareFailed { .. } => MicoStatus::InvalidModel,
            InterpreterError::PhaseError { .. } => MicoStatus::Phase,
            InterpreterError::UnsupportedOperator { .. } => MicoStatus::Unsupported,
            InterpreterError::ArenaExhausted { .. } | InterpreterError::Arena(_) => MicoStatus::ArenaExhausted,
            InterpreterError::Plan(_) => MicoStatus::PlanInvalid,
            InterpreterError::IndexOutOfRange { .. } => MicoStatus::InvalidArgument,
            InterpreterError::EvalFailed { .. } => MicoStatus::EvalFailed,
            InterpreterError::ArenaBusy => MicoStatus::Busy,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(MicoStatus::InvalidArgument, message.into())
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, recording failures and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MicoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MicoStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            MicoStatus::Panic
        }
    }
}

unsafe fn handle<'h, T>(p: *const T, what: &str) -> Result<&'h T, Failure> {
    // SAFETY: caller passes null or a live handle from this library
    unsafe { p.as_ref() }.ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn handle_mut<'h, T>(p: *mut T, what: &str) -> Result<&'h mut T, Failure> {
    // SAFETY: as above, and the caller does not alias it across threads
    unsafe { p.as_mut() }.ok_or_else(|| invalid(format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T) -> Result<(), Failure> {
    if p.is_null() {
        Err(invalid("output pointer is null"))
    } else {
        Ok(())
    }
}

/// Frees a handle unless something still borrows it.
unsafe fn release<T>(p: *mut T, users: impl Fn(&T) -> usize, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Ok(());
    }
    // SAFETY: non-null pointers come from Box::into_raw in this library
    let n = users(unsafe { &*p });
    if n > 0 {
        return Err(Failure(MicoStatus::Busy, format!("{what} is used by {n} interpreter(s)")));
    }
    drop(unsafe { Box::from_raw(p) });
    Ok(())
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn mico_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or an empty string. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mico_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses and validates a `.mico` image. The bytes are copied; the caller
/// may free them afterwards.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mico_model_load(data: *const u8, len: usize, out: *mut *mut MicoModel) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        if data.is_null() {
            return Err(invalid("model data is null"));
        }
        // SAFETY: caller guarantees `len` readable bytes
        let bytes = unsafe { std::slice::from_raw_parts(data, len) };
        let model = parse_model(bytes).map_err(|e| Failure(MicoStatus::InvalidModel, e.to_string()))?.into_owned();
        let report = validate_model(&model);
        if !report.is_valid() {
            return Err(InterpreterError::InvalidModel(report).into());
        }
        let boxed = Box::new(MicoModel { model, users: Cell::new(0) });
        // SAFETY: checked non-null above
        unsafe { *out = Box::into_raw(boxed) };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mico_model_destroy(model: *mut MicoModel) -> MicoStatus {
    guard(|| unsafe { release(model, |m| m.users.get(), "model") })
}

/// # Safety
/// `model` must be a live handle; the counts must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn mico_model_io_counts(model: *const MicoModel, inputs: *mut usize, outputs: *mut usize) -> MicoStatus {
    guard(|| {
        let m = unsafe { handle(model, "model") }?;
        if !inputs.is_null() {
            unsafe { *inputs = m.model.inputs.len() };
        }
        if !outputs.is_null() {
            unsafe { *outputs = m.model.outputs.len() };
        }
        Ok(())
    })
}

fn tensor_info(spec: &TensorSpec) -> MicoTensorInfo {
    let mut dims = [0u32; MAX_RANK];
    for (d, &s) in dims.iter_mut().zip(&spec.shape) {
        *d = s as u32;
    }
    MicoTensorInfo {
        dtype: spec.dtype.code(),
        rank: spec.shape.len() as u8,
        dims,
        byte_size: spec.byte_size(),
        has_quant: spec.quant.is_some(),
        scale: spec.quant.map_or(0.0, |q| q.scale),
        zero_point: spec.quant.map_or(0, |q| q.zero_point),
    }
}

unsafe fn io_info(model: *const MicoModel, input: bool, index: usize, out: *mut MicoTensorInfo) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        let m = unsafe { handle(model, "model") }?;
        let list = if input { &m.model.inputs } else { &m.model.outputs };
        let &t = list.get(index).ok_or_else(|| invalid(format!("index {index} out of range (count {})", list.len())))?;
        unsafe { *out = tensor_info(&m.model.tensors[t]) };
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mico_model_input_info(model: *const MicoModel, index: usize, out: *mut MicoTensorInfo) -> MicoStatus {
    unsafe { io_info(model, true, index, out) }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mico_model_output_info(model: *const MicoModel, index: usize, out: *mut MicoTensorInfo) -> MicoStatus {
    unsafe { io_info(model, false, index, out) }
}

/// Registry with every reference kernel.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mico_registry_create_reference(out: *mut *mut MicoRegistry) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        unsafe { *out = Box::into_raw(Box::new(MicoRegistry { registry: Registry::reference(), users: Cell::new(0) })) };
        Ok(())
    })
}

/// Registry with no kernels; add them with [`mico_registry_add_reference_op`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mico_registry_create_empty(out: *mut *mut MicoRegistry) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        unsafe { *out = Box::into_raw(Box::new(MicoRegistry { registry: Registry::new(), users: Cell::new(0) })) };
        Ok(())
    })
}

/// Adds the reference kernel for a serialized opcode number.
///
/// # Safety
/// `registry` must be a live handle not used by any interpreter.
#[no_mangle]
pub unsafe extern "C" fn mico_registry_add_reference_op(registry: *mut MicoRegistry, opcode: u32) -> MicoStatus {
    guard(|| {
        let r = unsafe { handle_mut(registry, "registry") }?;
        if r.users.get() > 0 {
            return Err(Failure(MicoStatus::Busy, "registry is in use by an interpreter".into()));
        }
        let op = u8::try_from(opcode).ok().and_then(Opcode::from_code).ok_or_else(|| invalid(format!("unknown opcode {opcode}")))?;
        r.registry.register(reference_registration(op)).map_err(|e| match e {
            RegistryError::DuplicateOpcode(_) => invalid(e.to_string()),
            RegistryError::UnsupportedOperator(_) => Failure(MicoStatus::Unsupported, e.to_string()),
        })
    })
}

/// # Safety
/// `registry` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mico_registry_destroy(registry: *mut MicoRegistry) -> MicoStatus {
    guard(|| unsafe { release(registry, |r| r.users.get(), "registry") })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mico_arena_create(capacity: usize, out: *mut *mut MicoArena) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        let arena = TensorArena::new(capacity).map_err(|e| invalid(e.to_string()))?;
        unsafe { *out = Box::into_raw(Box::new(MicoArena { arena, users: Cell::new(0) })) };
        Ok(())
    })
}

/// Persistent bytes and the nonpersistent reservation across all tenants.
///
/// # Safety
/// `arena` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mico_arena_usage(arena: *const MicoArena, out: *mut MicoMemoryReport) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        let a = unsafe { handle(arena, "arena") }?;
        let u = a.arena.usage();
        unsafe {
            *out = MicoMemoryReport {
                persistent_bytes: u.persistent_bytes,
                nonpersistent_bytes: u.nonpersistent_bytes,
                total_bytes: u.persistent_bytes + u.nonpersistent_bytes,
            }
        };
        Ok(())
    })
}

/// # Safety
/// `arena` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mico_arena_destroy(arena: *mut MicoArena) -> MicoStatus {
    guard(|| unsafe { release(arena, |a| a.users.get(), "arena") })
}

/// Creates an interpreter. The three handles stay borrowed until
/// [`mico_interpreter_destroy`].
///
/// # Safety
/// All handles must be live and `out` writable. Handles are not
/// thread-safe; use them from one thread.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_create(
    model: *const MicoModel,
    registry: *const MicoRegistry,
    arena: *const MicoArena,
    out: *mut *mut MicoInterpreter,
) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        // SAFETY: the handles are boxed, so their addresses are stable, and
        // the user counts keep them alive for as long as the interpreter.
        let (m, r, a): (&'static MicoModel, &'static MicoRegistry, &'static MicoArena) =
            unsafe { (handle(model, "model")?, handle(registry, "registry")?, handle(arena, "arena")?) };
        let interp = Interpreter::new(&m.model, &r.registry, &a.arena)?;
        for users in [&m.users, &r.users, &a.users] {
            users.set(users.get() + 1);
        }
        let boxed = Box::new(MicoInterpreter { interp, model, registry, arena });
        unsafe { *out = Box::into_raw(boxed) };
        Ok(())
    })
}

/// # Safety
/// `interp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_allocate_tensors(interp: *mut MicoInterpreter) -> MicoStatus {
    guard(|| Ok(unsafe { handle_mut(interp, "interpreter") }?.interp.allocate_tensors()?))
}

/// Copies `len` bytes into model input `index`; `len` must equal its byte size.
///
/// # Safety
/// `interp` must be a live handle and `data` point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_set_input(
    interp: *mut MicoInterpreter,
    index: usize,
    data: *const u8,
    len: usize,
) -> MicoStatus {
    guard(|| {
        let i = unsafe { handle_mut(interp, "interpreter") }?;
        if data.is_null() {
            return Err(invalid("input data is null"));
        }
        let bytes = unsafe { std::slice::from_raw_parts(data, len) };
        Ok(i.interp.set_input(index, bytes)?)
    })
}

/// # Safety
/// `interp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_invoke(interp: *mut MicoInterpreter) -> MicoStatus {
    guard(|| Ok(unsafe { handle_mut(interp, "interpreter") }?.interp.invoke()?))
}

/// Copies model output `index` into `data`; `len` must equal its byte size.
///
/// # Safety
/// `interp` must be a live handle and `data` point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_get_output(
    interp: *const MicoInterpreter,
    index: usize,
    data: *mut u8,
    len: usize,
) -> MicoStatus {
    guard(|| {
        let i = unsafe { handle(interp, "interpreter") }?;
        if data.is_null() {
            return Err(invalid("output buffer is null"));
        }
        let view = i.interp.output_view(index)?;
        let bytes = view.bytes();
        if bytes.len() != len {
            return Err(invalid(format!("output {index} is {} bytes, buffer is {len}", bytes.len())));
        }
        unsafe { ptr::copy_nonoverlapping(bytes.as_ptr(), data, len) };
        Ok(())
    })
}

/// # Safety
/// `interp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_memory_report(interp: *const MicoInterpreter, out: *mut MicoMemoryReport) -> MicoStatus {
    guard(|| {
        out_ptr(out)?;
        let r = unsafe { handle(interp, "interpreter") }?.interp.memory_report()?;
        unsafe {
            *out = MicoMemoryReport {
                persistent_bytes: r.persistent_bytes,
                nonpersistent_bytes: r.nonpersistent_bytes,
                total_bytes: r.total_bytes,
            }
        };
        Ok(())
    })
}

/// Releases the interpreter and its borrows on model, registry and arena.
///
/// # Safety
/// `interp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mico_interpreter_destroy(interp: *mut MicoInterpreter) -> MicoStatus {
    guard(|| {
        if interp.is_null() {
            return Ok(());
        }
        // SAFETY: non-null handles come from Box::into_raw above
        let boxed = unsafe { Box::from_raw(interp) };
        let MicoInterpreter { interp, model, registry, arena } = *boxed;
        drop(interp);
        // SAFETY: the user counts kept these alive
        let counts = unsafe { [&(*model).users, &(*registry).users, &(*arena).users] };
        for users in counts {
            users.set(users.get() - 1);
        }
        Ok(())
    })
}
