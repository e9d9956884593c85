#ifndef MICO_H
#define MICO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MicoStatus {
  MICO_STATUS_OK = 0,
  // Null pointer, bad index or wrong buffer length.
  MICO_STATUS_INVALID_ARGUMENT = 1,
  // The model failed to parse, validate or prepare.
  MICO_STATUS_INVALID_MODEL = 2,
  MICO_STATUS_ARENA_EXHAUSTED = 3,
  MICO_STATUS_EVAL_FAILED = 4,
  // A stored offline plan is malformed or overlaps.
  MICO_STATUS_PLAN_INVALID = 5,
  // Wrong lifecycle phase, e.g. invoke before allocate.
  MICO_STATUS_PHASE = 6,
  // The registry has no kernel for an op in the model.
  MICO_STATUS_UNSUPPORTED = 7,
  // The object is still in use.
  MICO_STATUS_BUSY = 8,
  // A Rust panic was caught at the boundary.
  MICO_STATUS_PANIC = 9,
} MicoStatus;

// Memory region shared by one or more interpreters.
typedef struct MicoArena MicoArena;

typedef struct MicoInterpreter MicoInterpreter;

// Parsed, validated model.
typedef struct MicoModel MicoModel;

// Set of available kernels.
typedef struct MicoRegistry MicoRegistry;

typedef struct MicoTensorInfo {
  // 0 F32, 1 I8, 2 I32.
  uint8_t dtype;
  uint8_t rank;
  // Unused trailing dims are 0.
  uint32_t dims[4];
  size_t byte_size;
  bool has_quant;
  float scale;
  int32_t zero_point;
} MicoTensorInfo;

typedef struct MicoMemoryReport {
  size_t persistent_bytes;
  size_t nonpersistent_bytes;
  size_t total_bytes;
} MicoMemoryReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// NUL-terminated library version.
const char *mico_version(void);

// Message of the last failure on this thread, or an empty string. Valid
// until the next failing call on the same thread.
const char *mico_last_error_message(void);

// Parses and validates a `.mico` image. The bytes are copied; the caller
// may free them afterwards.
//
// # Safety
// `data` must point to `len` readable bytes; `out` must be writable.
enum MicoStatus mico_model_load(const uint8_t *data, size_t len, struct MicoModel **out);

// # Safety
// `model` must be null or a live handle.
enum MicoStatus mico_model_destroy(struct MicoModel *model);

// # Safety
// `model` must be a live handle; the counts must be writable or null.
enum MicoStatus mico_model_io_counts(const struct MicoModel *model,
                                     size_t *inputs,
                                     size_t *outputs);

// # Safety
// `model` must be a live handle and `out` writable.
enum MicoStatus mico_model_input_info(const struct MicoModel *model,
                                      size_t index,
                                      struct MicoTensorInfo *out);

// # Safety
// `model` must be a live handle and `out` writable.
enum MicoStatus mico_model_output_info(const struct MicoModel *model,
                                       size_t index,
                                       struct MicoTensorInfo *out);

// Registry with every reference kernel.
//
// # Safety
// `out` must be writable.
enum MicoStatus mico_registry_create_reference(struct MicoRegistry **out);

// Registry with no kernels; add them with [`mico_registry_add_reference_op`].
//
// # Safety
// `out` must be writable.
enum MicoStatus mico_registry_create_empty(struct MicoRegistry **out);

// Adds the reference kernel for a serialized opcode number.
//
// # Safety
// `registry` must be a live handle not used by any interpreter.
enum MicoStatus mico_registry_add_reference_op(struct MicoRegistry *registry, uint32_t opcode);

// # Safety
// `registry` must be null or a live handle.
enum MicoStatus mico_registry_destroy(struct MicoRegistry *registry);

// # Safety
// `out` must be writable.
enum MicoStatus mico_arena_create(size_t capacity, struct MicoArena **out);

// Persistent bytes and the nonpersistent reservation across all tenants.
//
// # Safety
// `arena` must be a live handle and `out` writable.
enum MicoStatus mico_arena_usage(const struct MicoArena *arena, struct MicoMemoryReport *out);

// # Safety
// `arena` must be null or a live handle.
enum MicoStatus mico_arena_destroy(struct MicoArena *arena);

// Creates an interpreter. The three handles stay borrowed until
// [`mico_interpreter_destroy`].
//
// # Safety
// All handles must be live and `out` writable. Handles are not
// thread-safe; use them from one thread.
enum MicoStatus mico_interpreter_create(const struct MicoModel *model,
                                        const struct MicoRegistry *registry,
                                        const struct MicoArena *arena,
                                        struct MicoInterpreter **out);

// # Safety
// `interp` must be a live handle.
enum MicoStatus mico_interpreter_allocate_tensors(struct MicoInterpreter *interp);

// Copies `len` bytes into model input `index`; `len` must equal its byte size.
//
// # Safety
// `interp` must be a live handle and `data` point to `len` readable bytes.
enum MicoStatus mico_interpreter_set_input(struct MicoInterpreter *interp,
                                           size_t index,
                                           const uint8_t *data,
                                           size_t len);

// # Safety
// `interp` must be a live handle.
enum MicoStatus mico_interpreter_invoke(struct MicoInterpreter *interp);

// Copies model output `index` into `data`; `len` must equal its byte size.
//
// # Safety
// `interp` must be a live handle and `data` point to `len` writable bytes.
enum MicoStatus mico_interpreter_get_output(const struct MicoInterpreter *interp,
                                            size_t index,
                                            uint8_t *data,
                                            size_t len);

// # Safety
// `interp` must be a live handle and `out` writable.
enum MicoStatus mico_interpreter_memory_report(const struct MicoInterpreter *interp,
                                               struct MicoMemoryReport *out);

// Releases the interpreter and its borrows on model, registry and arena.
//
// # Safety
// `interp` must be null or a live handle.
enum MicoStatus mico_interpreter_destroy(struct MicoInterpreter *interp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICO_H */
