#pragma once

namespace featprobe {

inline constexpr const char* kVersion = "0.1.0";

// Recorded in every report so results can be tied to the exact sampling
// scheme. The generator is mt19937_64; normals come from an explicit
// Box-Muller transform rather than std::normal_distribution, which is
// implementation-defined.
inline constexpr const char* kRngDescription = "mt19937_64/box-muller";

// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace featprobe
