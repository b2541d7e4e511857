#ifndef AAD_COMMON_HPP
#define AAD_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace aad {

// Thrown when a layer produces a non-finite value; carries the layer name so
// training aborts can report the first offending op.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& layer)
      : std::runtime_error("non-finite output in layer '" + layer + "'"), layer_(layer) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

class IoError : public std::runtime_error {
 public:
  // code: short machine-readable tag ("bad-magic", "truncated", "dim-mismatch", ...)
  IoError(const std::string& code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace aad

#endif  // AAD_COMMON_HPP
