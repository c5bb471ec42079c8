#ifndef IPRM_CONFIG_HPP_
#define IPRM_CONFIG_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

#include "iprm/numerics/ops.hpp"

namespace iprm {

/// Rows available in the learned initial memory; n_op may not exceed it.
/// Fixed so the parameter count does not depend on n_op.
inline constexpr std::size_t kMemoryInitCapacity = 16;

/// How composed result states are formed from the composition attention.
enum class ResultComposition {
  kProjectedValues,  // attention applied to W_res,v of the windowed result tokens
  kRawStates,        // attention applied to the windowed result tokens directly
};

struct IprmConfig {
  std::size_t d_m = 512;
  std::size_t n_op = 6;
  std::size_t t_steps = 9;
  std::size_t r = 2;
  std::size_t w = 2;
  std::size_t d_l = 512;
  std::size_t d_v = 512;
  /// Inter-operation composition attention. When off, the next memory is
  /// the plain recurrent update of the new operations and results.
  bool composition = true;
  ResultComposition result_composition = ResultComposition::kProjectedValues;
  Nonlinearity phi = Nonlinearity::kTanh;

  std::size_t reduced_dim() const { return d_m / r; }

  /// Number of memory snapshots retained between steps.
  std::size_t window_capacity() const { return w == 0 ? 1 : w; }

  void validate() const {
    auto require = [](bool ok, const std::string& what) {
      if (!ok) throw std::invalid_argument("invalid IPRM config: " + what);
    };
    require(d_m >= 1 && n_op >= 1 && t_steps >= 1 && r >= 1 && d_l >= 1 && d_v >= 1,
            "d_m, n_op, t_steps, r, d_l and d_v must all be >= 1");
    require(d_m % r == 0, "d_m (" + std::to_string(d_m) + ") not divisible by r (" +
                              std::to_string(r) + ")");
    require(n_op <= kMemoryInitCapacity,
            "n_op exceeds memory init capacity " + std::to_string(kMemoryInitCapacity));
  }
};

}  // namespace iprm

#endif  // IPRM_CONFIG_HPP_
