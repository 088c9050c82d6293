#pragma once

namespace pdemee {

/// Selects the OpenMP kernel or the serial reference loop. Both paths reduce
/// per-individual contributions in the same fixed order and agree bitwise.
enum class ExecPolicy { Serial, Parallel };

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

/// Sets the OpenMP thread count; values < 1 leave the runtime default.
void set_threads(int threads);

}  // namespace pdemee
