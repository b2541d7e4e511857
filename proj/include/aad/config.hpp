#ifndef AAD_CONFIG_HPP
#define AAD_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

namespace aad {

// Flat key=value run configuration. Every key has a documented default;
// unknown keys and type errors are rejected at set() time.
class RunConfig {
 public:
  struct KeySpec {
    std::string def;
    enum class Type { integer, real, text } type = Type::text;
    std::string doc;
    std::vector<std::string> choices;  // nonempty: value must be one of these
  };

  RunConfig();

  static const std::map<std::string, KeySpec>& schema();

  void set(const std::string& key, const std::string& value);

  const std::string& get_str(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // rendered as a JSON object string (keys sorted)
  std::string to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

// Defaults, then the optional config file, then key=value overrides.
RunConfig parse_config(const std::string& file, const std::vector<std::string>& overrides);

}  // namespace aad

#endif  // AAD_CONFIG_HPP
