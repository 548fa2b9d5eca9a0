#include "adapt3d/rng.hpp"

#include <sstream>

#include "adapt3d/errors.hpp"

namespace adapt3d {

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  std::uniform_int_distribution<int64_t> dist(lo, hi);
  return dist(rng);
}

double normal(Rng& rng) {
  // A fresh distribution each call: libstdc++ caches the second Box-Muller
  // value inside the distribution object, which would not survive a
  // checkpoint round trip.
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

torch::Tensor randn(Rng& rng, at::IntArrayRef shape, torch::Dtype dtype) {
  auto out = torch::empty(shape, torch::kDouble);
  auto* data = out.data_ptr<double>();
  const auto n = out.numel();
  for (int64_t i = 0; i < n; ++i) data[i] = normal(rng);
  return out.to(dtype);
}

std::string save_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng load_rng(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw IntegrityError("unreadable rng state");
  return rng;
}

}  // namespace adapt3d
