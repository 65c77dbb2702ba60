#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "nwm/tensor.hpp"

namespace nwm::test {

template <class T = float>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  BasicTensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    t[i] = static_cast<T>(lo + (hi - lo) * u);
  }
  return t;
}

template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() && a.vector() == b.vector();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("nwm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path data_dir() { return NWM_TEST_DATA; }

}  // namespace nwm::test
