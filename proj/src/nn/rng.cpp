#include "ccl/rng.hpp"

#include <sstream>

#include "ccl/error.hpp"

namespace ccl {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (!is) throw FormatError("malformed RNG state");
}

}  // namespace ccl
