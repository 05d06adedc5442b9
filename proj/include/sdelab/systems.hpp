#pragma once

#include <map>
#include <string>
#include <vector>

#include "sdelab/model.hpp"

namespace sdelab {

namespace systems {

// a = 0, b = sigma, on [0, 1] reflecting.
SystemSpec constant_noise(double sigma = 1.0);
// a = 0, b(x) = x, unbounded.
SystemSpec linear_noise_1d();
// a = 0, B = diag(x1, x2), unbounded.
SystemSpec diagonal_2d();
// a = 0, B = [[1, x1], [0, 1]], unbounded. Non-symmetric noise.
SystemSpec shear_2d();
// a = 0, D(x) = 1 + 0.9 sin(pi x) on [0, 1] reflecting (b = sqrt(D)).
SystemSpec temperature_profile_1d();
// a = -x, D = 1 on [-5, 5] reflecting.
SystemSpec ou_1d();
// a = 0, D = 2 on [-5, 5] reflecting.
SystemSpec heat_1d();
// a = 0, b(x) = 1 + 0.5 sin(x), unbounded.
SystemSpec sine_noise_1d();
// a = -x, B = I on [-4, 4]^2 reflecting.
SystemSpec ou_2d();

}  // namespace systems

// Named systems. Built-ins are always present; user entries may be added but
// never shadow a built-in.
class SystemRegistry {
 public:
  SystemRegistry();

  void add(const SystemSpec& system);
  bool contains(const std::string& name) const;
  const SystemSpec& get(const std::string& name) const;
  std::vector<const SystemSpec*> list() const;

 private:
  std::map<std::string, SystemSpec> entries_;
};

}  // namespace sdelab
